"""CoNLL-X / CoNLL-U reading and writing, vocabularies and attachment scores."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

UNK = "*UNK*"
ROOT = "*ROOT*"

# PTB punctuation tags; PUNCT covers UD-style UPOS columns
PUNCT_TAGS = frozenset({"``", "''", ":", ",", ".", "PUNCT"})


class TreebankError(ValueError):
    pass


@dataclass
class Token:
    form: str
    pos: str
    head: int | None = None
    label: str | None = None
    columns: tuple[str, ...] | None = None


@dataclass
class Sentence:
    tokens: list[Token]
    comments: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.tokens)

    @property
    def forms(self):
        return [t.form for t in self.tokens]

    @property
    def tags(self):
        return [t.pos for t in self.tokens]

    @property
    def heads(self):
        return [t.head for t in self.tokens]

    @property
    def labels(self):
        return [t.label for t in self.tokens]

    @property
    def annotated(self):
        return all(t.head is not None for t in self.tokens)

    def gold_tree(self) -> ParseTree:
        if not self.annotated:
            raise TreebankError("sentence has no gold heads")
        return ParseTree(self.heads, self.labels)


@dataclass
class ParseTree:
    heads: list[int]
    labels: list[str | None]

    def __len__(self):
        return len(self.heads)

    def arcs(self):
        return {(h, m) for m, h in enumerate(self.heads, start=1)}


def tree_problem(heads: Sequence[int]) -> str | None:
    """Describe why ``heads`` is not a single-rooted tree, or None if it is."""
    n = len(heads)
    roots = [m for m, h in enumerate(heads, start=1) if h == 0]
    for m, h in enumerate(heads, start=1):
        if not 0 <= h <= n:
            return f"token {m} has out-of-range head {h}"
        if h == m:
            return f"token {m} is its own head"
    if len(roots) != 1:
        return f"expected exactly one root, found {len(roots)}"
    for start in range(1, n + 1):
        seen = set()
        node = start
        while node != 0:
            if node in seen:
                return f"cycle through token {node}"
            seen.add(node)
            node = heads[node - 1]
    return None


def is_projective(heads: Sequence[int]) -> bool:
    """True iff every token between a head and its modifier descends from the head."""
    n = len(heads)

    def dominated(h, d):
        while d != 0:
            d = heads[d - 1]
            if d == h:
                return True
        return h == 0

    for m, h in enumerate(heads, start=1):
        lo, hi = min(h, m), max(h, m)
        for k in range(lo + 1, hi):
            if not dominated(h, k):
                return False
    return True


def _parse_token(fields, where) -> Token:
    form = fields[1]
    pos = fields[3] if fields[3] != "_" else fields[4]
    head_s, label = fields[6], fields[7]
    if head_s == "_":
        head = None
    else:
        try:
            head = int(head_s)
        except ValueError:
            raise TreebankError(f"{where}: head {head_s!r} is not an integer") from None
        if head < 0:
            raise TreebankError(f"{where}: negative head {head}")
    return Token(form, pos, head, None if label == "_" else label, tuple(fields))


def read_conll(path, on_invalid: str = "raise") -> list[Sentence]:
    """Read a CoNLL-X or CoNLL-U file.

    Multiword-token and empty-node lines are skipped.  Sentences whose gold
    annotation is not a tree raise :class:`TreebankError`, or are dropped with
    a warning when ``on_invalid="skip"``.
    """
    path = Path(path)
    sentences = []
    tokens, comments, start_line = [], [], 1

    def flush(lineno):
        nonlocal tokens, comments
        if tokens:
            sent = Sentence(tokens, comments)
            problem = _sentence_problem(sent)
            if problem is None:
                sentences.append(sent)
            elif on_invalid == "skip":
                log.warning("%s:%d: skipping sentence: %s", path, start_line, problem)
            else:
                raise TreebankError(f"{path}:{start_line}: invalid sentence: {problem}")
        tokens, comments = [], []

    with open(path, encoding="utf-8") as f:
        lineno = 0
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush(lineno)
                continue
            if not tokens and not comments:
                start_line = lineno
            if line.startswith("#"):
                comments.append(line)
                continue
            fields = line.split("\t")
            if len(fields) != 10:
                raise TreebankError(f"{path}:{lineno}: expected 10 tab-separated columns, got {len(fields)}")
            if "-" in fields[0] or "." in fields[0]:
                continue
            try:
                idx = int(fields[0])
            except ValueError:
                raise TreebankError(f"{path}:{lineno}: token id {fields[0]!r} is not an integer") from None
            if idx != len(tokens) + 1:
                raise TreebankError(f"{path}:{lineno}: expected token id {len(tokens) + 1}, got {idx}")
            tokens.append(_parse_token(fields, f"{path}:{lineno}"))
        flush(lineno + 1)
    return sentences


def _sentence_problem(sent: Sentence) -> str | None:
    heads = sent.heads
    if all(h is None for h in heads):
        return None
    if any(h is None for h in heads):
        return "some tokens lack a head"
    return tree_problem(heads)


def format_conll(sentences: Iterable[Sentence], trees: Iterable[ParseTree] | None = None) -> str:
    out = []
    trees = list(trees) if trees is not None else None
    for i, sent in enumerate(sentences):
        tree = trees[i] if trees is not None else None
        out.extend(sent.comments)
        for m, tok in enumerate(sent.tokens, start=1):
            cols = list(tok.columns) if tok.columns else ["_"] * 10
            cols[0] = str(m)
            cols[1] = tok.form
            if not tok.columns:
                cols[3] = tok.pos
            head, label = tok.head, tok.label
            if tree is not None:
                head, label = tree.heads[m - 1], tree.labels[m - 1]
            cols[6] = "_" if head is None else str(head)
            cols[7] = "_" if label is None else label
            out.append("\t".join(cols))
        out.append("")
    return "".join(line + "\n" for line in out)


def write_conll(path, sentences: Sequence[Sentence], trees: Sequence[ParseTree] | None = None) -> None:
    if trees is not None and len(trees) != len(sentences):
        raise ValueError(f"{len(sentences)} sentences but {len(trees)} trees")
    text = format_conll(sentences, trees)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


@dataclass
class Evaluation:
    uas: float
    las: float
    total: int
    correct_heads: int
    correct_labeled: int


def evaluate(gold: Sequence[Sentence], predicted: Sequence[ParseTree], exclude_punct: bool = True) -> Evaluation:
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold sentences but {len(predicted)} predictions")
    total = heads_ok = labeled_ok = 0
    for i, (sent, tree) in enumerate(zip(gold, predicted)):
        if len(sent) != len(tree):
            raise ValueError(f"sentence {i}: gold has {len(sent)} tokens, prediction has {len(tree)}")
        for tok, h, lab in zip(sent.tokens, tree.heads, tree.labels):
            if exclude_punct and tok.pos in PUNCT_TAGS:
                continue
            total += 1
            if h == tok.head:
                heads_ok += 1
                if lab == tok.label:
                    labeled_ok += 1
    uas = heads_ok / total if total else 0.0
    las = labeled_ok / total if total else 0.0
    return Evaluation(uas, las, total, heads_ok, labeled_ok)


class Vocabulary:
    """Symbol tables for words, tags and labels, with training-corpus word counts."""

    UNK_ID = 0
    ROOT_ID = 1

    def __init__(self, words: Sequence[str], counts: dict[str, int], tags: Sequence[str], labels: Sequence[str]):
        self.words = [UNK, ROOT] + [w for w in words if w not in (UNK, ROOT)]
        self.tags = [UNK, ROOT] + [t for t in tags if t not in (UNK, ROOT)]
        self.labels = list(labels)
        self.counts = dict(counts)
        self.word_ids = {w: i for i, w in enumerate(self.words)}
        self.tag_ids = {t: i for i, t in enumerate(self.tags)}
        self.label_ids = {lab: i for i, lab in enumerate(self.labels)}

    @classmethod
    def build(cls, sentences: Sequence[Sentence]) -> Vocabulary:
        if not sentences:
            raise ValueError("cannot build a vocabulary from an empty corpus")
        counts = Counter()
        tags, labels = {}, {}
        for sent in sentences:
            for tok in sent.tokens:
                counts[tok.form] += 1
                tags.setdefault(tok.pos, None)
                if tok.label is not None:
                    labels.setdefault(tok.label, None)
        # insertion order of Counter = first occurrence, so ids are reproducible
        return cls(list(counts), counts, list(tags), list(labels))

    def word_id(self, form: str) -> int:
        return self.word_ids.get(form, self.UNK_ID)

    def tag_id(self, tag: str) -> int:
        return self.tag_ids.get(tag, self.UNK_ID)

    def count(self, form: str) -> int:
        return self.counts.get(form, 0)

    def to_dict(self) -> dict:
        return {
            "words": self.words[2:],
            "counts": [self.counts.get(w, 0) for w in self.words[2:]],
            "tags": self.tags[2:],
            "labels": self.labels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Vocabulary:
        return cls(d["words"], dict(zip(d["words"], d["counts"])), d["tags"], d["labels"])
