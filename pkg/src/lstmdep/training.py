"""Epoch loop shared by both parsers: shuffle, train, evaluate on dev, keep the best."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .treebank import Evaluation, Sentence, evaluate

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dev: Evaluation | None

    def line(self) -> str:
        text = f"epoch {self.epoch} loss {self.loss:.6f}"
        if self.dev is not None:
            text += f" dev_uas {100 * self.dev.uas:.2f} dev_las {100 * self.dev.las:.2f}"
        return text


@dataclass
class FitResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_uas: float = -1.0


def fit(parser, train: Sequence[Sentence], dev: Sequence[Sentence] | None, epochs: int,
        rng: np.random.Generator, report: Callable[[EpochRecord], None] | None = None,
        exclude_punct: bool = True) -> FitResult:
    """Train for ``epochs`` passes and leave the best-dev-UAS parameters in the store."""
    result = FitResult()
    best = None
    if not dev:
        log.warning("no development data; keeping the model from the last epoch")
    for epoch in range(1, epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(train))
        stats = parser.train_epoch([train[i] for i in order], rng)
        ev = evaluate(dev, parser.parse_all(dev), exclude_punct) if dev else None
        record = EpochRecord(epoch, stats.loss, ev)
        result.history.append(record)
        log.info("%s (%.1fs)", record.line(), time.perf_counter() - start)
        if report is not None:
            report(record)
        if ev is not None and ev.uas > result.best_uas:
            result.best_uas, result.best_epoch = ev.uas, epoch
            best = {k: v.copy() for k, v in parser.store.values.items()}
    if best is not None:
        for name, value in best.items():
            parser.store.values[name][...] = value
    else:
        result.best_epoch = epochs
    discard = getattr(parser, "discard_pending", None)
    if discard is not None:
        # carried hinge terms belong to parameters that may just have been replaced
        discard()
    return result
