"""Command-line entry point.

Exit codes: 0 success, 1 usage error (message on stderr), 2 data error.
All randomness enters through --seed flags, and every file-emitting
subcommand is byte-deterministic given its inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

import numpy as np

from . import annotate, augment, corpus, decode, detect, server, textops
from .errors import FactkitError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="factkit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", help="wizard dialog JSON -> datapoints JSONL")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)

    p = sub.add_parser("augment", help="datapoints JSONL -> labeled records JSONL")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--methods", default="pairing,negation,entity",
                   help="comma-separated subset of pairing,negation,entity")
    p.add_argument("--entities", help="entity sidecar JSONL")
    p.add_argument("--any-label-swap", action="store_true",
                   help="allow entity swaps across entity labels")

    p = sub.add_parser("stats", help="recount a records file")
    p.add_argument("--in", dest="infile", required=True)

    p = sub.add_parser("decode", help="run a decoding strategy over a scorer")
    p.add_argument("--strategy", choices=("beam", "nucleus", "dbs"), required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--p", type=float, default=0.9)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--delay", type=int, default=5)
    p.add_argument("--max-len", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scorer", required=True,
                   help="table:<table.json> or bigram:<corpus.txt>")

    p = sub.add_parser("train-baseline", help="fit the logistic baseline")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("predict", help="score records with trained weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)

    p = sub.add_parser("eval", help="per-class P/R/F1 of predictions vs gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)

    p = sub.add_parser("alpha", help="Krippendorff's alpha over a judgment file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--question", default="consistency",
                   choices=sorted(annotate.QUESTION_FIELDS))
    p.add_argument("--metric", choices=("nominal", "interval"))

    p = sub.add_parser("serve", help="run the annotation task server")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data", default=os.environ.get("FACTKIT_DATA_DIR"),
                   help="state directory (default: $FACTKIT_DATA_DIR)")
    p.add_argument("--items", required=True, help="annotation items JSONL")

    return parser


def _labels_from_jsonl(path: str) -> list[str]:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "label" not in obj:
                raise FactkitError(f"{path}: line {lineno}: missing field label")
            labels.append(obj["label"])
    return labels


def _load_scorer(spec: str):
    kind, _, arg = spec.partition(":")
    if not arg:
        raise UsageError("--scorer must be table:<file> or bigram:<file>")
    if kind == "table":
        return decode.TableScorer.from_json(arg)
    if kind == "bigram":
        return decode.BigramScorer.fit(Path(arg).read_text(encoding="utf-8"))
    raise UsageError(f"unknown scorer kind {kind!r}")


def _cmd_ingest(args) -> int:
    dialogs = corpus.load_wow(args.infile)
    datapoints, skipped = corpus.extract_datapoints(dialogs)
    corpus.write_datapoints(datapoints, args.outfile)
    print(f"{len(dialogs)} dialogs -> {len(datapoints)} datapoints "
          f"({skipped} wizard turns skipped)", file=sys.stderr)
    return 0


def _cmd_augment(args) -> int:
    names = [m for m in args.methods.split(",") if m]
    try:
        config = augment.AugmentConfig.from_names(
            names, args.seed, entity_same_label_only=not args.any_label_swap)
    except FactkitError as exc:
        raise UsageError(str(exc)) from exc
    datapoints = corpus.read_datapoints(args.infile)
    sidecar = textops.load_entity_sidecar(args.entities) if args.entities else None
    records, stats = augment.build_dataset(datapoints, config, entity_sidecar=sidecar)
    corpus.write_records(records, args.outfile)
    augment.write_stats(stats, records, f"{args.outfile}.stats.json")
    print(f"{len(records)} records written "
          f"(consistent={stats.n_consistent} pairing={stats.n_pairing} "
          f"negation={stats.n_negation} entity={stats.n_entity})", file=sys.stderr)
    return 0


def _cmd_stats(args) -> int:
    records = corpus.read_records(args.infile)
    by_label: dict[str, int] = {}
    by_corruption: dict[str, int] = {}
    for rec in records:
        by_label[rec.label] = by_label.get(rec.label, 0) + 1
        by_corruption[rec.corruption] = by_corruption.get(rec.corruption, 0) + 1
    print(json.dumps({
        "n_records": len(records),
        "by_label": dict(sorted(by_label.items())),
        "by_corruption": dict(sorted(by_corruption.items())),
        "n_sources": len({rec.source_id for rec in records}),
    }, indent=2, sort_keys=True))
    return 0


def _cmd_decode(args) -> int:
    scorer = _load_scorer(args.scorer)
    strategy = {"beam": "beam", "nucleus": "nucleus", "dbs": "delayed_beam"}[args.strategy]
    config = decode.DecodeConfig(strategy=strategy, beam_size=args.beam, p=args.p,
                                 k=args.k, delay_steps=args.delay,
                                 max_len=args.max_len, seed=args.seed)
    rng = random.Random(config.seed)
    if strategy == "beam":
        tokens, logprob = decode.beam_search(scorer, config)
    elif strategy == "nucleus":
        tokens = decode.nucleus_sample(scorer, config, rng)
        logprob = decode.sequence_logprob(scorer, tokens, closed=False)
    else:
        tokens = decode.delayed_beam_search(scorer, config, rng)
        logprob = decode.sequence_logprob(scorer, tokens, closed=False)
    vocab = getattr(scorer, "vocab", None)
    rendered = " ".join(vocab[t] for t in tokens) if vocab else \
        " ".join(str(t) for t in tokens)
    print(rendered)
    print(f"logprob {logprob!r}")
    return 0


def _cmd_train_baseline(args) -> int:
    records = corpus.read_records(args.infile)
    train = [(detect.featurize(rec), rec.label) for rec in records]
    weights = detect.train_baseline(train, epochs=args.epochs,
                                    learning_rate=args.lr, seed=args.seed)
    payload = {"feature_names": list(detect.FEATURE_NAMES),
               "weights": [float(w) for w in weights]}
    Path(args.outfile).write_text(json.dumps(payload, indent=2) + "\n",
                                  encoding="utf-8")
    print(f"trained on {len(train)} records -> {args.outfile}", file=sys.stderr)
    return 0


def _cmd_predict(args) -> int:
    payload = json.loads(Path(args.weights).read_text(encoding="utf-8"))
    weights = np.array(payload["weights"], dtype=np.float64)
    records = corpus.read_records(args.infile)
    with open(args.outfile, "w", encoding="utf-8") as fh:
        for rec in records:
            label, score = detect.predict(weights, rec)
            fh.write(json.dumps({"source_id": rec.source_id, "corruption": rec.corruption,
                                 "label": label, "score": score}) + "\n")
    print(f"{len(records)} predictions -> {args.outfile}", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    preds = _labels_from_jsonl(args.pred)
    gold = _labels_from_jsonl(args.gold)
    report = detect.evaluate_f1(preds, gold)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_alpha(args) -> int:
    judgments = annotate.read_judgments(args.infile)
    metric = args.metric or annotate.QUESTION_FIELDS[args.question][2]
    value = annotate.question_alpha(judgments, args.question, metric)
    print(json.dumps({"question": args.question, "metric": metric, "alpha": value}))
    return 0


def _cmd_serve(args) -> int:
    if not args.data:
        raise UsageError("--data is required (or set FACTKIT_DATA_DIR)")
    server.serve(args.items, args.data, args.port, args.host)
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "augment": _cmd_augment,
    "stats": _cmd_stats,
    "decode": _cmd_decode,
    "train-baseline": _cmd_train_baseline,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "alpha": _cmd_alpha,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 0
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FactkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
