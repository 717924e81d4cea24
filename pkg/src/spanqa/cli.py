"""Command-line entry point: `qa stats|train|eval|predict|gradcheck`."""

from __future__ import annotations

import argparse
import json
import sys

from . import checkpoint as ckpt
from . import diagnostics
from . import training
from .data import dataset_stats, load_glove, load_squad
from .metrics import CATEGORIES, evaluate
from .model import ModelConfig

EXIT_MISSING_FILE = 2
EXIT_UNWRITABLE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qa", description="extractive question answering toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    stats = sub.add_parser("stats", help="dataset statistics")
    stats.add_argument("--data", required=True, help="SQuAD v1.1 JSON file")

    train = sub.add_parser("train", help="train a model")
    train.add_argument("--data", required=True)
    train.add_argument("--dev", default=None)
    train.add_argument("--glove", required=True)
    train.add_argument("--out", required=True, help="checkpoint output path")
    train.add_argument("--log", default=None,
                       help="JSONL training log (default: <out>.log)")
    train.add_argument("--iters", type=int, default=50_000)
    train.add_argument("--batch-size", type=int, default=40)
    train.add_argument("--hidden", type=int, default=150)
    train.add_argument("--dropout", type=float, default=0.2)
    train.add_argument("--embed-dim", type=int, default=100)
    train.add_argument("--context-cap", type=int, default=300)
    train.add_argument("--max-answer-len", type=int, default=20)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--eval-every", type=int, default=500)
    train.add_argument("--lr", type=float, default=1e-3)
    train.add_argument("--resume", default=None,
                       help="checkpoint to continue from")

    evalp = sub.add_parser("eval", help="evaluate a checkpoint")
    evalp.add_argument("--ckpt", required=True)
    evalp.add_argument("--data", required=True)
    evalp.add_argument("--glove", required=True)
    evalp.add_argument("--batch-size", type=int, default=40)
    evalp.add_argument("--max-answer-len", type=int, default=20)

    predict = sub.add_parser("predict", help="write a predictions JSON file")
    predict.add_argument("--ckpt", required=True)
    predict.add_argument("--data", required=True)
    predict.add_argument("--glove", required=True)
    predict.add_argument("--out", required=True)
    predict.add_argument("--batch-size", type=int, default=40)
    predict.add_argument("--max-answer-len", type=int, default=20)

    grad = sub.add_parser("gradcheck", help="gradient checks for every op")
    grad.add_argument("--seed", type=int, default=0)
    return parser


def _histogram_lines(title, hist, width):
    lines = [title]
    top = max(max(hist), 1)
    for i, count in enumerate(hist):
        lo = i * width + 1
        label = f"{lo:>4}-{lo + width - 1:<4}" if i < len(hist) - 1 else f"{lo:>4}+    "
        bar = "#" * int(round(40 * count / top))
        lines.append(f"  {label} {count:>8} {bar}")
    return lines


def cmd_stats(args) -> int:
    examples = load_squad(args.data)
    stats = dataset_stats(examples)
    print(f"examples: {stats.example_count}")
    print(f"answers under 20 tokens:  {100 * stats.answer_under_20_fraction:.2f}%")
    print(f"contexts under 300 tokens: {100 * stats.context_under_300_fraction:.2f}%")
    for line in _histogram_lines("answer length histogram (tokens):",
                                 stats.answer_length_hist, 2):
        print(line)
    for line in _histogram_lines("context length histogram (tokens):",
                                 stats.context_length_hist, 50):
        print(line)
    return 0


def cmd_train(args) -> int:
    examples = load_squad(args.data)
    dev_examples = load_squad(args.dev) if args.dev else None
    table = load_glove(args.glove, dim=args.embed_dim)
    if args.resume:
        loaded = ckpt.load_checkpoint(args.resume)
        config, params, state = loaded.config, loaded.params, loaded.state
    else:
        config = ModelConfig(hidden_size=args.hidden, dropout_rate=args.dropout,
                             embedding_dim=args.embed_dim,
                             context_cap=args.context_cap, seed=args.seed)
        params = state = None
    log_path = args.log or f"{args.out}.log"

    def save_improved(result):
        ckpt.save_checkpoint(args.out, result.params, config, result.state)

    with open(log_path, "a" if args.resume else "w", encoding="utf-8") as log_handle:
        result = training.train(
            examples, table, config, iters=args.iters, batch_size=args.batch_size,
            lr=args.lr, dev_examples=dev_examples, eval_every=args.eval_every,
            max_answer_len=args.max_answer_len, params=params, state=state,
            log_handle=log_handle, on_improve=save_improved)
    ckpt.save_checkpoint(args.out, result.params, config, result.state)
    if result.dropped_examples:
        print(f"dropped {result.dropped_examples} examples with no usable gold span")
    print(f"trained {result.state.step} iterations; checkpoint at {args.out}")
    return 0


def _report_lines(report):
    lines = [f"F1: {report.f1:.2f}  EM: {report.em:.2f}  (n={report.total})",
             f"{'category':<10} {'F1':>7} {'EM':>7} {'count':>7}"]
    lines.append(f"{'Total':<10} {report.f1:>7.2f} {report.em:>7.2f} "
                 f"{report.total:>7}")
    for cat in CATEGORIES:
        if cat in report.per_category:
            f1, em, count = report.per_category[cat]
            lines.append(f"{cat:<10} {f1:>7.2f} {em:>7.2f} {count:>7}")
    return lines


def cmd_eval(args) -> int:
    loaded = ckpt.load_checkpoint(args.ckpt)
    table = load_glove(args.glove, dim=loaded.config.embedding_dim)
    examples = load_squad(args.data)
    predictions = training.predict_answers(
        examples, loaded.params, table, loaded.config,
        batch_size=args.batch_size, max_answer_len=args.max_answer_len)
    report = evaluate(predictions, examples)
    for line in _report_lines(report):
        print(line)
    return 0


def cmd_predict(args) -> int:
    loaded = ckpt.load_checkpoint(args.ckpt)
    table = load_glove(args.glove, dim=loaded.config.embedding_dim)
    examples = load_squad(args.data)
    predictions = training.predict_answers(
        examples, loaded.params, table, loaded.config,
        batch_size=args.batch_size, max_answer_len=args.max_answer_len)
    try:
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump(predictions, handle, ensure_ascii=False, sort_keys=True,
                      indent=1)
            handle.write("\n")
    except OSError as exc:
        print(f"cannot write predictions to {args.out}: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE
    print(f"wrote {len(predictions)} predictions to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    rows, all_ok = diagnostics.run_gradcheck_suite(seed=args.seed)
    for name, err, threshold in rows:
        verdict = "ok" if err < threshold else "FAIL"
        print(f"{name:<16} worst rel err {err:.3e}  (< {threshold:.0e})  {verdict}")
    print("gradcheck: " + ("all passed" if all_ok else "FAILURES above"))
    return 0 if all_ok else 1


_COMMANDS = {
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
