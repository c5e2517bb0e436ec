"""First-order (arc-factored) parser with Eisner decoding and a second-stage labeler."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, ParameterStore
from .encoder import ContextVectors, Encoder, EncoderConfig, add_mlp_params, mlp
from .treebank import ParseTree, Sentence, Vocabulary, is_projective

log = logging.getLogger(__name__)


def score_arcs(g: Graph, vectors: ContextVectors, prefix: str = "arc") -> Node:
    """Scores of every (head, modifier) pair as one vector.

    Entry ``h * (n + 1) + m`` holds MLP(v_h ∘ v_m).  The first layer is split
    into head and modifier halves so each token is multiplied only twice.
    """
    d = vectors[0].shape[0]
    w1 = g.parameter(prefix + "_W1")
    w_head, w_mod = g.columns(w1, 0, d), g.columns(w1, d, 2 * d)
    b1 = g.parameter(prefix + "_b1")
    heads = g.stack([g.add(g.matvec(w_head, v), b1) for v in vectors.vectors])
    mods = g.stack([g.matvec(w_mod, v) for v in vectors.vectors])
    hidden = g.tanh(g.outer_add(heads, mods))
    out = g.matvec(hidden, g.pick(g.parameter(prefix + "_W2"), 0))
    return g.add(out, g.parameter(prefix + "_b2"))


def score_arcs_naive(g: Graph, vectors: ContextVectors, prefix: str = "arc") -> dict[tuple[int, int], Node]:
    """Same scores as :func:`score_arcs`, one full MLP per pair."""
    size = len(vectors)
    return {(h, m): mlp(g, prefix, g.concat([vectors[h], vectors[m]]))
            for h in range(size) for m in range(1, size) if h != m}


def arc_matrix(values: np.ndarray, n: int) -> np.ndarray:
    return values.reshape(n + 1, n + 1)


def eisner(scores: np.ndarray) -> list[int]:
    """Best projective tree for an (n+1)x(n+1) matrix with scores[head, modifier].

    Returns the head of tokens 1..n.  ROOT (index 0) may take several
    modifiers.  Ties are resolved towards the smaller split point.
    """
    size = scores.shape[0]
    n = size - 1
    if n < 1:
        raise ValueError("need at least one token")
    neg = -np.inf
    # [s, t, 0]: head at t (left-pointing); [s, t, 1]: head at s
    complete = np.zeros((size, size, 2))
    incomplete = np.full((size, size, 2), neg)
    complete_bp = np.zeros((size, size, 2), dtype=np.int64)
    incomplete_bp = np.zeros((size, size, 2), dtype=np.int64)
    for width in range(1, size):
        for s in range(0, size - width):
            t = s + width
            span = complete[s, s:t, 1] + complete[s + 1:t + 1, t, 0]
            r = int(np.argmax(span))
            best = span[r]
            if s != 0:
                incomplete[s, t, 0] = best + scores[t, s]
                incomplete_bp[s, t, 0] = s + r
            incomplete[s, t, 1] = best + scores[s, t]
            incomplete_bp[s, t, 1] = s + r

            left = complete[s, s:t, 0] + incomplete[s:t, t, 0]
            r = int(np.argmax(left))
            complete[s, t, 0] = left[r]
            complete_bp[s, t, 0] = s + r

            right = incomplete[s, s + 1:t + 1, 1] + complete[s + 1:t + 1, t, 1]
            r = int(np.argmax(right))
            complete[s, t, 1] = right[r]
            complete_bp[s, t, 1] = s + 1 + r

    heads = [-1] * size
    stack = [(0, n, 1, True)]
    while stack:
        s, t, direction, is_complete = stack.pop()
        if s == t:
            continue
        if is_complete:
            r = complete_bp[s, t, direction]
            if direction == 0:
                stack.append((s, r, 0, True))
                stack.append((r, t, 0, False))
            else:
                stack.append((s, r, 1, False))
                stack.append((r, t, 1, True))
        else:
            r = incomplete_bp[s, t, direction]
            if direction == 0:
                heads[s] = t
            else:
                heads[t] = s
            stack.append((s, r, 1, True))
            stack.append((r + 1, t, 0, True))
    return heads[1:]


def tree_score(scores: np.ndarray, heads: Sequence[int]) -> float:
    return float(sum(scores[h, m] for m, h in enumerate(heads, start=1)))


def loss_augment(scores: np.ndarray, gold_heads: Sequence[int], cost: float = 1.0) -> np.ndarray:
    """Add ``cost`` to every arc that is not in the gold tree."""
    aug = scores + cost
    for m, h in enumerate(gold_heads, start=1):
        aug[h, m] -= cost
    return aug


def arc_indices(heads: Sequence[int]) -> list[int]:
    size = len(heads) + 1
    return [h * size + m for m, h in enumerate(heads, start=1)]


def structure_loss(g: Graph, scores: Node, gold_heads: Sequence[int],
                   augment: bool = True) -> Node | None:
    """Structured hinge against the loss-augmented best tree.

    Returns None when the loss is zero (no gradient to push).
    """
    n = len(gold_heads)
    values = arc_matrix(scores.value, n)
    search = loss_augment(values, gold_heads) if augment else values
    pred = eisner(search)
    if list(pred) == list(gold_heads):
        return None
    wrong = sum(1 for p, t in zip(pred, gold_heads) if p != t)
    delta = 1.0 + (wrong if augment else 0.0)
    diff = g.sub(g.gather_sum(scores, arc_indices(pred)), g.gather_sum(scores, arc_indices(gold_heads)))
    if diff.value[0] + delta <= 0:
        return None
    return g.scalar_add(diff, delta)


def label_scores(g: Graph, vectors: ContextVectors, head: int, mod: int) -> Node:
    return mlp(g, "lbl", g.concat([vectors[head], vectors[mod]]))


def label_arcs(g: Graph, vectors: ContextVectors, heads: Sequence[int], labels: Sequence[str]) -> list[str]:
    out = []
    for m, h in enumerate(heads, start=1):
        values = label_scores(g, vectors, h, m).value
        out.append(labels[int(np.argmax(values))])
    return out


def label_loss(g: Graph, vectors: ContextVectors, sentence: Sentence, label_ids: dict[str, int]) -> list[Node]:
    """Nonzero per-arc margin terms of the labeler on the gold tree."""
    terms = []
    k = len(label_ids)
    for m, tok in enumerate(sentence.tokens, start=1):
        scores = label_scores(g, vectors, tok.head, m)
        if k < 2 or tok.label not in label_ids:
            continue
        gold = label_ids[tok.label]
        others = [i for i in range(k) if i != gold]
        rival = g.max(scores, others)
        margin = scores.value[gold] - rival.value[0]
        if margin < 1.0:
            terms.append(g.scalar_add(g.sub(rival, g.pick(scores, gold)), 1.0))
    return terms


@dataclass
class EpochStats:
    loss: float = 0.0
    structure_loss: float = 0.0
    label_loss: float = 0.0
    updates: int = 0
    sentences: int = 0


class GraphParser:
    kind = "graph"

    def __init__(self, vocab: Vocabulary, encoder_config: EncoderConfig | None = None,
                 mlp_hidden: int = 100, label_hidden: int = 100, use_labeler: bool = True,
                 loss_augmented: bool = True, keep_nonprojective: bool = False,
                 store: ParameterStore | None = None):
        self.vocab = vocab
        self.encoder_config = encoder_config or EncoderConfig()
        self.encoder = Encoder(self.encoder_config, vocab)
        self.mlp_hidden = mlp_hidden
        self.label_hidden = label_hidden
        self.use_labeler = use_labeler and len(vocab.labels) > 0
        self.loss_augmented = loss_augmented
        self.keep_nonprojective = keep_nonprojective
        self.store = store if store is not None else ParameterStore()

    def hyperparameters(self) -> dict:
        return {"mlp_hidden": self.mlp_hidden, "label_hidden": self.label_hidden,
                "use_labeler": self.use_labeler, "loss_augmented": self.loss_augmented,
                "keep_nonprojective": self.keep_nonprojective}

    def init_params(self, rng: np.random.Generator, external=None) -> None:
        self.encoder.init_params(self.store, rng, external)
        d = self.encoder_config.output_dim
        add_mlp_params(self.store, "arc", 2 * d, self.mlp_hidden, 1, rng)
        if self.use_labeler:
            add_mlp_params(self.store, "lbl", 2 * d, self.label_hidden, len(self.vocab.labels), rng)

    def parse(self, sentence: Sentence, params=None) -> ParseTree:
        g = Graph(params if params is not None else self.store.values)
        vectors = self.encoder(g, sentence)
        n = len(sentence)
        heads = eisner(arc_matrix(score_arcs(g, vectors).value, n))
        labels = label_arcs(g, vectors, heads, self.vocab.labels) if self.use_labeler else [None] * n
        return ParseTree(heads, labels)

    def parse_all(self, sentences: Sequence[Sentence]) -> list[ParseTree]:
        params = self.store.snapshot()
        return [self.parse(s, params) for s in sentences]

    def sentence_loss(self, g: Graph, sentence: Sentence, rng: np.random.Generator | None,
                      stats: EpochStats | None = None) -> Node | None:
        vectors = self.encoder(g, sentence, rng)
        terms = []
        s_loss = structure_loss(g, score_arcs(g, vectors), sentence.heads, self.loss_augmented)
        if s_loss is not None:
            terms.append(s_loss)
        l_terms = label_loss(g, vectors, sentence, self.vocab.label_ids) if self.use_labeler else []
        terms.extend(l_terms)
        if stats is not None:
            stats.structure_loss += float(s_loss.value[0]) if s_loss is not None else 0.0
            stats.label_loss += sum(float(t.value[0]) for t in l_terms)
        if not terms:
            return None
        return g.add_all(terms) if len(terms) > 1 else terms[0]

    def trainable(self, sentence: Sentence) -> bool:
        return sentence.annotated and (self.keep_nonprojective or is_projective(sentence.heads))

    def train_epoch(self, sentences: Sequence[Sentence], rng: np.random.Generator) -> EpochStats:
        """One pass in the given order with a parameter update after every sentence."""
        stats = EpochStats()
        for sent in sentences:
            if not self.trainable(sent):
                continue
            g = self.store.graph()
            loss = self.sentence_loss(g, sent, rng, stats)
            stats.sentences += 1
            if loss is None:
                continue
            stats.loss += float(loss.value[0])
            self.store.adam_step(g.backward(loss))
            stats.updates += 1
        return stats
