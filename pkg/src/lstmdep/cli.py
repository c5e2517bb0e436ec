"""Command line: ``lstmdep train``, ``lstmdep parse`` and ``lstmdep eval``.

Exit codes: 0 on success, 1 for usage errors, 2 for data errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, load_external_embeddings
from .graph_parser import GraphParser
from .modelfile import ModelFileError, load_model, save_model
from .training import fit
from .transition_parser import TransitionParser
from .treebank import TreebankError, Vocabulary, evaluate, read_conll, write_conll

log = logging.getLogger("lstmdep")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_arg_parser() -> argparse.ArgumentParser:
    ap = _ArgumentParser(prog="lstmdep", description="BiLSTM feature dependency parsers")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    tr = sub.add_parser("train", help="train a parser")
    tr.add_argument("--parser", choices=["transition", "graph"], required=True)
    tr.add_argument("--train", required=True, help="training treebank (CoNLL)")
    tr.add_argument("--dev", help="development treebank used for model selection")
    tr.add_argument("--model", required=True, help="output model file")
    tr.add_argument("--features", choices=["simple", "extended"], help="transition feature set (default simple)")
    tr.add_argument("--ext-emb", help="pre-trained word vectors, one 'word v1 ... vd' per line")
    tr.add_argument("--epochs", type=int, default=30)
    tr.add_argument("--seed", type=int, default=1)
    tr.add_argument("--pagg", type=float, help="aggressive exploration probability (default 0.1)")
    tr.add_argument("--no-pos", action="store_true", help="drop POS embeddings from the input")
    tr.add_argument("--no-labeler", action="store_true", help="graph parser: skip the arc labeler")
    tr.add_argument("--no-loss-aug", action="store_true", help="graph parser: plain (not loss-augmented) inference")
    tr.add_argument("--no-dyn-oracle", action="store_true", help="transition parser: follow the gold path only")
    tr.add_argument("--keep-nonproj", action="store_true", help="graph parser: train on non-projective trees too")
    tr.add_argument("--include-punct", action="store_true", help="score punctuation in dev evaluation")
    tr.add_argument("--word-dim", type=int, default=100)
    tr.add_argument("--pos-dim", type=int, default=25)
    tr.add_argument("--lstm-dim", type=int, default=125)
    tr.add_argument("--lstm-layers", type=int, default=2)
    tr.add_argument("--hidden", type=int, default=100, help="hidden units of the scoring MLPs")
    tr.add_argument("--alpha", type=float, default=0.25, help="word dropout constant")

    pa = sub.add_parser("parse", help="parse a CoNLL file with a trained model")
    pa.add_argument("--model", required=True)
    pa.add_argument("--input", required=True)
    pa.add_argument("--output", required=True)
    pa.add_argument("--workers", type=int, default=1)

    ev = sub.add_parser("eval", help="attachment scores of a prediction file")
    ev.add_argument("--gold", required=True)
    ev.add_argument("--pred", required=True)
    ev.add_argument("--include-punct", action="store_true")
    return ap


def _read(path, on_invalid="raise"):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    try:
        return read_conll(path, on_invalid=on_invalid)
    except TreebankError as e:
        raise DataError(str(e)) from None


def cmd_train(args, out=None) -> int:
    out = out or sys.stdout
    if args.parser == "graph":
        for flag, given in (("--features", args.features), ("--pagg", args.pagg),
                            ("--no-dyn-oracle", args.no_dyn_oracle)):
            if given:
                raise UsageError(f"{flag} applies to the transition parser only")
    else:
        for flag, given in (("--no-labeler", args.no_labeler), ("--no-loss-aug", args.no_loss_aug),
                            ("--keep-nonproj", args.keep_nonproj)):
            if given:
                raise UsageError(f"{flag} applies to the graph parser only")
    if args.epochs < 1:
        raise UsageError("--epochs must be positive")
    train = _read(args.train, on_invalid="skip")
    dev = _read(args.dev) if args.dev else []
    if not train:
        raise DataError(f"{args.train}: no sentences")
    if not all(s.annotated for s in train):
        raise DataError(f"{args.train}: training sentences need gold heads")
    external = None
    ext_dim = 0
    if args.ext_emb:
        if not Path(args.ext_emb).is_file():
            raise UsageError(f"no such file: {args.ext_emb}")
        try:
            external = load_external_embeddings(args.ext_emb)
        except ValueError as e:
            raise DataError(str(e)) from None
        ext_dim = len(next(iter(external.values())))
    try:
        config = EncoderConfig(word_dim=args.word_dim, pos_dim=args.pos_dim, lstm_layers=args.lstm_layers,
                               lstm_hidden=args.lstm_dim, lstm_output=args.lstm_dim, alpha=args.alpha,
                               external_dim=ext_dim, use_pos=not args.no_pos)
    except ValueError as e:
        raise UsageError(str(e)) from None
    vocab = Vocabulary.build(train)
    if args.parser == "transition":
        parser = TransitionParser(vocab, config, feature_mode=args.features or "simple", mlp_hidden=args.hidden,
                                  p_agg=0.1 if args.pagg is None else args.pagg,
                                  dynamic_oracle=not args.no_dyn_oracle)
    else:
        parser = GraphParser(vocab, config, mlp_hidden=args.hidden, label_hidden=args.hidden,
                             use_labeler=not args.no_labeler, loss_augmented=not args.no_loss_aug,
                             keep_nonprojective=args.keep_nonproj)
    rng = np.random.default_rng(args.seed)
    parser.init_params(rng, external)

    def report(record):
        print(record.line(), file=out, flush=True)

    result = fit(parser, train, dev, args.epochs, rng, report, exclude_punct=not args.include_punct)
    save_model(parser, args.model)
    print(f"best epoch {result.best_epoch}", file=out)
    return 0


def cmd_parse(args, out=None) -> int:
    if not Path(args.model).is_file():
        raise UsageError(f"no such file: {args.model}")
    try:
        parser = load_model(args.model)
    except ModelFileError as e:
        raise DataError(str(e)) from None
    sentences = _read(args.input)
    params = parser.store.snapshot()
    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            trees = list(pool.map(lambda s: parser.parse(s, params), sentences))
    else:
        trees = [parser.parse(s, params) for s in sentences]
    write_conll(args.output, sentences, trees)
    return 0


def cmd_eval(args, out=None) -> int:
    out = out or sys.stdout
    gold = _read(args.gold)
    pred = _read(args.pred)
    if len(gold) != len(pred):
        raise DataError(f"{len(gold)} gold sentences but {len(pred)} predicted sentences")
    trees = []
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise DataError(f"sentence {i}: gold has {len(g)} tokens, prediction has {len(p)}")
        if not g.annotated:
            raise DataError(f"sentence {i}: gold file lacks heads")
        trees.append(p.gold_tree() if p.annotated else None)
        if trees[-1] is None:
            raise DataError(f"sentence {i}: prediction file lacks heads")
    ev = evaluate(gold, trees, exclude_punct=not args.include_punct)
    print(f"UAS: {100 * ev.uas:.2f}", file=out)
    print(f"LAS: {100 * ev.las:.2f}", file=out)
    print(f"tokens: {ev.total}", file=out)
    print(f"correct heads: {ev.correct_heads}", file=out)
    print(f"correct labeled: {ev.correct_labeled}", file=out)
    return 0


COMMANDS = {"train": cmd_train, "parse": cmd_parse, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"lstmdep: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"lstmdep: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
