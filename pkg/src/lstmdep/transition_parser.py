"""Greedy arc-hybrid parser scored by an MLP over BiLSTM vectors.

Transitions are scored jointly with their labels.  The MLP output has
``1 + 2 * len(labels)`` entries: index 0 is Shift, then Left with each label,
then Right with each label.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .autodiff import Graph, Node, ParameterStore
from .encoder import ContextVectors, Encoder, EncoderConfig, add_mlp_params, mlp
from .treebank import ParseTree, Sentence, Vocabulary, is_projective

log = logging.getLogger(__name__)

SHIFT, LEFT, RIGHT = 0, 1, 2
KIND_NAMES = ("Shift", "Left", "Right")
ROOT = 0
BATCH_NONZERO = 50
AGGRESSIVE_MARGIN = 1.0


class IllegalTransition(ValueError):
    pass


class Transition(NamedTuple):
    kind: int
    label: str | None = None

    def __str__(self):
        name = KIND_NAMES[self.kind]
        return name if self.label is None else f"{name}_{self.label}"


class Configuration:
    """Arc-hybrid parser state.

    The stack top is the last element of ``stack``; the buffer front is
    ``buffer[0]`` and ROOT (index 0) always sits at the end of the buffer.
    """

    __slots__ = ("n", "stack", "buffer", "heads", "labels", "children")

    def __init__(self, n, stack, buffer, heads, labels, children):
        self.n = n
        self.stack = stack
        self.buffer = buffer
        self.heads = heads
        self.labels = labels
        self.children = children

    @classmethod
    def initial(cls, n: int) -> Configuration:
        if n < 1:
            raise ValueError("cannot parse an empty sentence")
        return cls(n, [], list(range(1, n + 1)) + [ROOT], [None] * (n + 1), [None] * (n + 1),
                   [[] for _ in range(n + 1)])

    def copy(self) -> Configuration:
        return Configuration(self.n, list(self.stack), list(self.buffer), list(self.heads),
                             list(self.labels), [list(c) for c in self.children])

    @property
    def arcs(self) -> set[tuple[int, int, str | None]]:
        return {(h, m, self.labels[m]) for m, h in enumerate(self.heads) if h is not None}

    def is_terminal(self) -> bool:
        return not self.stack and self.buffer == [ROOT]

    def position(self, i: int) -> int:
        # ROOT sits after the last word
        return self.n + 1 if i == ROOT else i

    def leftmost(self, i: int | None) -> int | None:
        if i is None:
            return None
        p = self.position(i)
        left = [c for c in self.children[i] if c < p]
        return min(left) if left else None

    def rightmost(self, i: int | None) -> int | None:
        if i is None:
            return None
        p = self.position(i)
        right = [c for c in self.children[i] if c > p]
        return max(right) if right else None

    def stack_item(self, depth: int) -> int | None:
        return self.stack[-1 - depth] if len(self.stack) > depth else None

    def legal(self) -> list[int]:
        """Legal transition kinds, in kind order."""
        if self.is_terminal():
            raise IllegalTransition("terminal configuration has no legal transitions")
        kinds = []
        if self.buffer[0] != ROOT:
            kinds.append(SHIFT)
        if self.stack:
            kinds.append(LEFT)
        if len(self.stack) >= 2:
            kinds.append(RIGHT)
        return kinds

    def _attach(self, head: int, mod: int, label):
        self.heads[mod] = head
        self.labels[mod] = label
        self.children[head].append(mod)

    def apply(self, t: Transition) -> Configuration:
        """The configuration after ``t``; ``self`` is left untouched."""
        c = self.copy()
        c.apply_inplace(t)
        return c

    def apply_inplace(self, t: Transition) -> None:
        if t.kind == SHIFT:
            if self.buffer[0] == ROOT:
                raise IllegalTransition("Shift needs a non-ROOT buffer front")
            self.stack.append(self.buffer.pop(0))
        elif t.kind == LEFT:
            if not self.stack:
                raise IllegalTransition("Left needs a non-empty stack")
            self._attach(self.buffer[0], self.stack.pop(), t.label)
        elif t.kind == RIGHT:
            if len(self.stack) < 2:
                raise IllegalTransition("Right needs at least two stack items")
            s0 = self.stack.pop()
            self._attach(self.stack[-1], s0, t.label)
        else:
            raise IllegalTransition(f"unknown transition kind {t.kind}")

    def tree(self) -> ParseTree:
        return ParseTree(list(self.heads[1:]), list(self.labels[1:]))

    def __repr__(self):
        return f"Configuration(stack={self.stack}, buffer={self.buffer}, arcs={sorted(self.arcs, key=lambda a: a[1])})"


def oracle_costs(c: Configuration, gold_heads: Sequence[int]) -> dict[int, int]:
    """Gold arcs each legal transition kind makes unreachable.

    ``gold_heads[m - 1]`` is the gold head of token m; the gold tree must be
    projective for the costs to be exact.
    """
    heads = [None] + list(gold_heads)
    stack, buffer = c.stack, c.buffer
    b0 = buffer[0]
    in_buffer = set(buffer)
    costs = {}
    legal = c.legal()
    if LEFT in legal or RIGHT in legal:
        s0 = stack[-1]
        lost_children = sum(1 for d in buffer if d != ROOT and heads[d] == s0)
        if LEFT in legal:
            s1 = stack[-2] if len(stack) >= 2 else None
            h = heads[s0]
            costs[LEFT] = lost_children + (h == s1) + (h in in_buffer and h != b0)
        if RIGHT in legal:
            costs[RIGHT] = lost_children + (heads[s0] in in_buffer)
    if SHIFT in legal:
        h = heads[b0]
        costs[SHIFT] = (sum(1 for s in stack[:-1] if s == h)
                        + sum(1 for d in stack if heads[d] == b0))
    return costs


class Scorer:
    """Index layout of the transition MLP output."""

    def __init__(self, labels: Sequence[str]):
        self.labels = list(labels)
        self.size = 1 + 2 * len(self.labels)

    def transition(self, index: int) -> Transition:
        if index == 0:
            return Transition(SHIFT)
        k = len(self.labels)
        if index <= k:
            return Transition(LEFT, self.labels[index - 1])
        return Transition(RIGHT, self.labels[index - 1 - k])

    def indices(self, kind: int) -> range:
        k = len(self.labels)
        if kind == SHIFT:
            return range(0, 1)
        if kind == LEFT:
            return range(1, 1 + k)
        return range(1 + k, 1 + 2 * k)

    def index(self, t: Transition) -> int:
        if t.kind == SHIFT:
            return 0
        offset = 1 if t.kind == LEFT else 1 + len(self.labels)
        return offset + self.labels.index(t.label)

    def legal_indices(self, c: Configuration) -> list[int]:
        return [i for kind in c.legal() for i in self.indices(kind)]


def best_index(values: np.ndarray, indices: Sequence[int]) -> int:
    """Highest-scoring index among ``indices``; ties go to the lowest index."""
    return max(sorted(indices), key=lambda i: (values[i], -i))


def feature_items(c: Configuration, mode: str) -> list[int | None]:
    """Sentence positions feeding the feature vector (None = pad)."""
    s0, s1, s2 = c.stack_item(0), c.stack_item(1), c.stack_item(2)
    b0 = c.buffer[0]
    items = [s2, s1, s0, b0]
    if mode == "extended":
        items += [c.leftmost(s0), c.rightmost(s0), c.leftmost(s1), c.rightmost(s1),
                  c.leftmost(s2), c.rightmost(s2), c.leftmost(b0)]
    elif mode != "simple":
        raise ValueError(f"unknown feature mode {mode!r}")
    return items


def features(g: Graph, c: Configuration, vectors: ContextVectors, mode: str) -> Node:
    return g.concat([vectors[i] for i in feature_items(c, mode)])


FEATURE_COUNT = {"simple": 4, "extended": 11}


@dataclass
class EpochStats:
    loss: float = 0.0
    nonzero: int = 0
    updates: int = 0
    transitions: int = 0
    errors_followed: int = 0
    extra: dict = field(default_factory=dict)


class TransitionParser:
    kind = "transition"

    def __init__(self, vocab: Vocabulary, encoder_config: EncoderConfig | None = None,
                 feature_mode: str = "simple", mlp_hidden: int = 100, p_agg: float = 0.1,
                 dynamic_oracle: bool = True, store: ParameterStore | None = None):
        if feature_mode not in FEATURE_COUNT:
            raise ValueError(f"unknown feature mode {feature_mode!r}")
        self.vocab = vocab
        self.encoder_config = encoder_config or EncoderConfig()
        self.encoder = Encoder(self.encoder_config, vocab)
        self.feature_mode = feature_mode
        self.mlp_hidden = mlp_hidden
        self.p_agg = p_agg
        self.dynamic_oracle = dynamic_oracle
        self.scorer = Scorer(vocab.labels)
        self.store = store if store is not None else ParameterStore()
        self._pending_graph: Graph | None = None
        self._pending: list[Node] = []

    def hyperparameters(self) -> dict:
        return {"feature_mode": self.feature_mode, "mlp_hidden": self.mlp_hidden,
                "p_agg": self.p_agg, "dynamic_oracle": self.dynamic_oracle}

    def init_params(self, rng: np.random.Generator, external=None) -> None:
        self.encoder.init_params(self.store, rng, external)
        in_dim = FEATURE_COUNT[self.feature_mode] * self.encoder_config.output_dim
        add_mlp_params(self.store, "trans", in_dim, self.mlp_hidden, self.scorer.size, rng)

    def score(self, g: Graph, c: Configuration, vectors: ContextVectors) -> Node:
        return mlp(g, "trans", features(g, c, vectors, self.feature_mode))

    def parse(self, sentence: Sentence, params=None) -> ParseTree:
        g = Graph(params if params is not None else self.store.values)
        vectors = self.encoder(g, sentence)
        c = Configuration.initial(len(sentence))
        while not c.is_terminal():
            values = self.score(g, c, vectors).value
            best = best_index(values, self.scorer.legal_indices(c))
            c.apply_inplace(self.scorer.transition(best))
        return c.tree()

    def parse_all(self, sentences: Sequence[Sentence]) -> list[ParseTree]:
        params = self.store.snapshot()
        return [self.parse(s, params) for s in sentences]

    def correct_indices(self, c: Configuration, gold: Sentence) -> list[int]:
        """Zero-cost transitions; an arc transition creating a gold arc needs the gold label."""
        gold_heads = gold.heads
        costs = oracle_costs(c, gold_heads)
        best = min(costs.values())
        if best != 0:
            log.debug("no zero-cost transition at %r", c)
        correct = []
        for kind, cost in costs.items():
            if cost != best:
                continue
            if kind == SHIFT:
                correct.append(0)
                continue
            s0 = c.stack[-1]
            head = c.buffer[0] if kind == LEFT else c.stack[-2]
            if gold_heads[s0 - 1] == head and gold.tokens[s0 - 1].label in self.scorer.labels:
                correct.append(self.scorer.index(Transition(kind, gold.tokens[s0 - 1].label)))
            else:
                correct.extend(self.scorer.indices(kind))
        return sorted(correct)

    def train_step(self, g: Graph, sentence: Sentence, rng: np.random.Generator,
                   stats: EpochStats | None = None) -> list[Node]:
        """Walk one sentence with error exploration; returns its nonzero hinge terms."""
        vectors = self.encoder(g, sentence, rng)
        c = Configuration.initial(len(sentence))
        terms = []
        while not c.is_terminal():
            scores = self.score(g, c, vectors)
            values = scores.value
            legal = self.scorer.legal_indices(c)
            correct = self.correct_indices(c, sentence)
            correct_set = set(correct)
            wrong = [i for i in legal if i not in correct_set]
            best_correct = best_index(values, correct)
            best_wrong = best_index(values, wrong) if wrong else None
            if best_wrong is not None:
                margin = values[best_correct] - values[best_wrong]
                if margin < 1.0:
                    diff = g.sub(g.pick(scores, best_wrong), g.pick(scores, best_correct))
                    terms.append(g.scalar_add(diff, 1.0))
            follow = best_correct
            if self.dynamic_oracle and best_wrong is not None:
                follow = best_index(values, legal)
                if (follow == best_correct and values[best_correct] - values[best_wrong] < AGGRESSIVE_MARGIN
                        and rng.random() < self.p_agg):
                    follow = best_wrong
            if stats is not None:
                stats.transitions += 1
                stats.errors_followed += follow not in correct_set
            c.apply_inplace(self.scorer.transition(follow))
        return terms

    def train_epoch(self, sentences: Sequence[Sentence], rng: np.random.Generator) -> EpochStats:
        """One pass in the given order; updates fire once 50 nonzero terms pile up."""
        stats = EpochStats()
        for sent in sentences:
            if not sent.annotated or not is_projective(sent.heads):
                continue
            if self._pending_graph is None:
                self._pending_graph = self.store.graph()
            g = self._pending_graph
            terms = self.train_step(g, sent, rng, stats)
            for t in terms:
                stats.loss += float(t.value[0])
            stats.nonzero += len(terms)
            self._pending.extend(terms)
            if len(self._pending) >= BATCH_NONZERO:
                self.flush()
                stats.updates += 1
        return stats

    def flush(self) -> bool:
        """Apply an update from the carried hinge terms, whatever their number."""
        if not self._pending:
            self._pending_graph = None
            return False
        g = self._pending_graph
        loss = g.add_all(self._pending)
        grads = g.backward(loss)
        self.store.adam_step(grads)
        self._pending = []
        self._pending_graph = None
        return True

    def discard_pending(self) -> None:
        self._pending = []
        self._pending_graph = None

    @property
    def pending(self) -> int:
        return len(self._pending)
