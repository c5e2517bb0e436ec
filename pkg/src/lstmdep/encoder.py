"""Token embeddings and the stacked BiLSTM that turns them into context vectors."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, ParameterStore
from .treebank import Sentence, Vocabulary


@dataclass
class EncoderConfig:
    word_dim: int = 100
    pos_dim: int = 25
    lstm_layers: int = 2
    lstm_hidden: int = 125
    lstm_output: int = 125
    alpha: float = 0.25
    external_dim: int = 0
    use_pos: bool = True

    def __post_init__(self):
        for name in ("word_dim", "pos_dim", "lstm_layers", "lstm_hidden", "lstm_output"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lstm_hidden != self.lstm_output:
            raise ValueError("a plain LSTM has equal hidden and output sizes")
        if self.external_dim < 0:
            raise ValueError("external_dim must be >= 0")

    @property
    def input_dim(self):
        return self.word_dim + (self.pos_dim if self.use_pos else 0) + self.external_dim

    @property
    def output_dim(self):
        return 2 * self.lstm_output

    def to_dict(self):
        return asdict(self)


def dropout_probability(count: int, alpha: float) -> float:
    return alpha / (count + alpha)


def load_external_embeddings(path) -> dict[str, np.ndarray]:
    """Read ``word v1 ... vd`` lines; a word2vec ``count dim`` header is skipped."""
    table = {}
    dim = None
    with open(Path(path), encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            vec = np.array([float(x) for x in parts[1:]])
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(vec)}")
            table[parts[0]] = vec
    if not table:
        raise ValueError(f"{path}: no vectors found")
    return table


def lstm_step(g: Graph, weight: Node, bias: Node, h: Node, c: Node, x: Node) -> tuple[Node, Node]:
    """One LSTM transition.

    Gates are laid out in ``weight`` as [input, forget, output, candidate]
    blocks of rows; the weight multiplies ``x ∘ h``.
    """
    size = h.shape[0]
    z = g.add(g.matvec(weight, g.concat([x, h])), bias)
    i = g.sigmoid(g.slice(z, 0, size))
    f = g.sigmoid(g.slice(z, size, 2 * size))
    o = g.sigmoid(g.slice(z, 2 * size, 3 * size))
    cand = g.tanh(g.slice(z, 3 * size, 4 * size))
    c_new = g.add(g.mul(f, c), g.mul(i, cand))
    h_new = g.mul(o, g.tanh(c_new))
    return h_new, c_new


def run_lstm(g: Graph, weight: Node, bias: Node, xs: Sequence[Node]) -> list[Node]:
    """Hidden state after each input, reading ``xs`` in the given order."""
    size = bias.shape[0] // 4
    h = c = g.constant(np.zeros(size))
    out = []
    for x in xs:
        h, c = lstm_step(g, weight, bias, h, c, x)
        out.append(h)
    return out


def mlp(g: Graph, prefix: str, x: Node) -> Node:
    """W2 · tanh(W1 · x + b1) + b2 with parameters named ``prefix_*``."""
    hidden = g.tanh(g.add(g.matvec(g.parameter(prefix + "_W1"), x), g.parameter(prefix + "_b1")))
    return g.add(g.matvec(g.parameter(prefix + "_W2"), hidden), g.parameter(prefix + "_b2"))


def add_mlp_params(store: ParameterStore, prefix: str, in_dim: int, hidden: int, out: int, rng) -> None:
    store.add_matrix(prefix + "_W1", hidden, in_dim, rng)
    store.add_bias(prefix + "_b1", hidden)
    store.add_matrix(prefix + "_W2", out, hidden, rng)
    store.add_bias(prefix + "_b2", out)


class ContextVectors:
    """BiLSTM vectors indexed by sentence position; index 0 is ROOT."""

    def __init__(self, vectors: list[Node], pad: Node | None = None):
        self.vectors = vectors
        self.pad = pad

    def __len__(self):
        return len(self.vectors)

    def __getitem__(self, i: int | None) -> Node:
        if i is None:
            if self.pad is None:
                raise KeyError("no pad vector available")
            return self.pad
        return self.vectors[i]

    @property
    def n(self):
        return len(self.vectors) - 1


class Encoder:
    """Embeds a tagged sentence and runs the stacked BiLSTM over it.

    ROOT is appended as the last input position so that its vector also sees
    the whole sentence.
    """

    def __init__(self, config: EncoderConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab

    def lstm_names(self, layer: int, direction: str):
        return f"lstm{layer}{direction}_W", f"lstm{layer}{direction}_b"

    def init_params(self, store: ParameterStore, rng: np.random.Generator,
                    external: dict[str, np.ndarray] | None = None) -> None:
        cfg = self.config
        store.add_embedding("word_emb", len(self.vocab.words), cfg.word_dim, rng)
        if cfg.use_pos:
            store.add_embedding("tag_emb", len(self.vocab.tags), cfg.pos_dim, rng)
        if cfg.external_dim:
            table = np.zeros((len(self.vocab.words), cfg.external_dim))
            if external:
                for w, i in self.vocab.word_ids.items():
                    vec = external.get(w)
                    if vec is not None:
                        if len(vec) != cfg.external_dim:
                            raise ValueError(f"external vector for {w!r} has {len(vec)} dims, expected {cfg.external_dim}")
                        table[i] = vec
            store.add("ext_emb", table)
        in_dim = cfg.input_dim
        size = cfg.lstm_hidden
        for layer in range(cfg.lstm_layers):
            for direction in "fb":
                w, b = self.lstm_names(layer, direction)
                store.add_matrix(w, 4 * size, in_dim + size, rng)
                store.add_bias(b, 4 * size)
            in_dim = 2 * size
        store.add("pad", rng.uniform(-0.1, 0.1, size=cfg.output_dim))

    def token_ids(self, sentence: Sentence, rng: np.random.Generator | None = None):
        """Word ids, tag ids and external-table rows (None for a zero vector).

        With ``rng`` given (training), each word is replaced by the unknown
        symbol with probability alpha / (count + alpha); a replaced word keeps
        its external vector with probability 0.5.
        """
        words, tags, ext_ids = [], [], []
        for tok in sentence.tokens:
            wid = self.vocab.word_id(tok.form)
            ext = wid if wid != self.vocab.UNK_ID else None
            if rng is not None:
                p = dropout_probability(self.vocab.count(tok.form), self.config.alpha)
                if rng.random() < p:
                    wid = self.vocab.UNK_ID
                    if self.config.external_dim and rng.random() < 0.5:
                        ext = None
            words.append(wid)
            tags.append(self.vocab.tag_id(tok.pos))
            ext_ids.append(ext)
        words.append(self.vocab.ROOT_ID)
        tags.append(self.vocab.ROOT_ID)
        ext_ids.append(self.vocab.ROOT_ID)
        return words, tags, ext_ids

    def embed(self, g: Graph, sentence: Sentence, rng: np.random.Generator | None = None) -> list[Node]:
        """Input vectors x_1..x_n followed by the ROOT input vector."""
        cfg = self.config
        words, tags, ext_ids = self.token_ids(sentence, rng)
        word_emb = g.parameter("word_emb")
        tag_emb = g.parameter("tag_emb") if cfg.use_pos else None
        ext_emb = g.parameter("ext_emb") if cfg.external_dim else None
        zero_ext = g.constant(np.zeros(cfg.external_dim)) if cfg.external_dim else None
        xs = []
        for wid, tid, eid in zip(words, tags, ext_ids):
            parts = [g.pick(word_emb, wid)]
            if tag_emb is not None:
                parts.append(g.pick(tag_emb, tid))
            if ext_emb is not None:
                parts.append(g.pick(ext_emb, eid) if eid is not None else zero_ext)
            xs.append(g.concat(parts) if len(parts) > 1 else parts[0])
        return xs

    def encode(self, g: Graph, xs: Sequence[Node]) -> list[Node]:
        """Top-layer BiLSTM vectors, one per input position, in input order."""
        layer_in = list(xs)
        for layer in range(self.config.lstm_layers):
            wf, bf = (g.parameter(n) for n in self.lstm_names(layer, "f"))
            wb, bb = (g.parameter(n) for n in self.lstm_names(layer, "b"))
            fwd = run_lstm(g, wf, bf, layer_in)
            bwd = run_lstm(g, wb, bb, layer_in[::-1])[::-1]
            layer_in = [g.concat([hf, hb]) for hf, hb in zip(fwd, bwd)]
        return layer_in

    def __call__(self, g: Graph, sentence: Sentence, rng: np.random.Generator | None = None) -> ContextVectors:
        out = self.encode(g, self.embed(g, sentence, rng))
        # ROOT was encoded as the last position; it becomes index 0
        return ContextVectors([out[-1]] + out[:-1], g.parameter("pad"))
