"""Command line entry point: merge, score, train-toy, synth, inspect.

Exit codes: 0 success, 1 training diverged, 2 usage or validation error,
3 I/O or file format error. Diagnostics go to stderr; machine output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from typing import Sequence

from .checkpoint import (
    CheckpointError,
    CheckpointFormatError,
    IncompatibleCheckpointError,
    atomic_write,
    load_checkpoint,
    save_checkpoint,
)
from .merging import MergeConfig, merge_models_with_stats
from .metrics import CorpusFormatError, read_jsonl, score
from .pruning import PruneConfig
from .trainer import (
    HIDDEN_DIM,
    INPUT_DIM,
    TinyModel,
    TrainConfig,
    TrainingDivergedError,
    init_model,
    make_task_dataset,
    train,
)

log = logging.getLogger("quadmerge")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3

# base model used by train-toy when no --base is given
DEFAULT_BASE_SEED = 0


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so ``run`` can return the exit code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _finite(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"{text!r} is not a finite number")
    return value


def _percent(text: str) -> float:
    value = _finite(text)
    if not 0 <= value <= 100:
        raise argparse.ArgumentTypeError(f"{text!r} is not a percentage in [0, 100]")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be a positive integer")
    return value


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def cmd_merge(args: argparse.Namespace) -> int:
    cfg = MergeConfig(
        prune=PruneConfig(args.alpha, args.beta, args.group_depth),
        lam=args.lam,
        report_stats=args.stats is not None,
    )
    base = load_checkpoint(args.base)
    models = [load_checkpoint(path) for path in args.model]
    merged, stats = merge_models_with_stats(base, models, cfg)
    save_checkpoint(merged, args.out)
    if stats is not None:
        atomic_write(args.stats, _dump_json(stats))
    log.info(
        "merged %d model(s) into %s (alpha=%g beta=%g lambda=%g)",
        len(models), args.out, args.alpha, args.beta, args.lam,
    )
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    report = score(read_jsonl(args.pred), read_jsonl(args.gold))
    if args.report:
        atomic_write(args.report, _dump_json(report.to_dict()))
    print(report.summary())
    return EXIT_OK


def cmd_train_toy(args: argparse.Namespace) -> int:
    if args.base:
        base = TinyModel.from_checkpoint(load_checkpoint(args.base))
    else:
        base = init_model(DEFAULT_BASE_SEED)
    x, y = make_task_dataset(args.task, args.n, args.seed, input_dim=base.input_dim)
    cfg = TrainConfig(
        reg_lambda=args.reg_lambda,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        eta=args.lr,
        weight_decay=args.weight_decay,
        bias_correction=args.bias_correction,
    )
    save_checkpoint(train(base, x, y, cfg), args.out)
    log.info("trained task %s specialist -> %s", args.task, args.out)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    model = init_model(args.seed, args.input_dim, args.hidden_dim)
    save_checkpoint(model.to_checkpoint(), args.out)
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.file)
    info = {
        "tensors": [
            {
                "name": name,
                "dtype": ckpt[name].dtype,
                "shape": list(ckpt[name].shape),
                "numel": ckpt[name].numel,
            }
            for name in ckpt.names()
        ],
        "num_params": ckpt.num_params,
        "metadata": ckpt.metadata,
    }
    sys.stdout.write(_dump_json(info).decode("utf-8"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quadmerge", description=__doc__.splitlines()[0])
    parser.add_argument("--quiet", action="store_true", help="only report errors")
    parser.add_argument(
        "--seed", type=int, default=0, help="default seed for subcommands that take one"
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser(
        "merge",
        help="merge fine-tuned checkpoints into a base",
        description="Prune task vectors, elect per-parameter signs, average the "
        "agreeing deltas and add them to the base. Tail defaults are tool "
        "choices, not tuned values.",
    )
    p.add_argument("--base", required=True, help="base checkpoint")
    p.add_argument("--model", required=True, nargs="+", action="extend", help="fine-tuned checkpoint(s)")
    p.add_argument("--alpha", type=_percent, default=20.0, help="percent of largest magnitudes dropped per layer (default 20)")
    p.add_argument("--beta", type=_percent, default=20.0, help="percent of smallest magnitudes dropped per layer (default 20)")
    p.add_argument("--lambda", dest="lam", type=_finite, default=1.0, help="merge scale (default 1.0)")
    p.add_argument("--group-depth", type=_positive_int, default=None, help="treat tensors sharing this many leading name components as one layer")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--stats", help="write per-layer JSON stats {layer: {n, dropped_top, dropped_bottom, agreement_rate, mean_abs_tau_hat}}")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser(
        "score",
        help="hard/soft F1 of quadruple predictions",
        description="Inputs are JSON Lines with one {\"id\": str, \"output\": str} per "
        "sample; outputs hold 'target | argument | group | hateful' joined by [SEP].",
    )
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--report", help="write the full JSON report here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train-toy", help="fine-tune a tiny classifier on synthetic task A or B")
    p.add_argument("--task", required=True, choices=["A", "B"])
    p.add_argument("--out", required=True)
    p.add_argument("--base", help=f"base checkpoint (default: synth --seed {DEFAULT_BASE_SEED})")
    p.add_argument("--seed", dest="sub_seed", type=int, default=None, help="data and shuffling seed")
    p.add_argument("--epochs", type=_positive_int, default=30)
    p.add_argument("--batch-size", type=_positive_int, default=16)
    p.add_argument("--n", type=_positive_int, default=200, help="training set size")
    p.add_argument("--lr", type=_finite, default=1e-2)
    p.add_argument("--reg-lambda", type=_finite, default=1e-3, help="L2 pull toward the base")
    p.add_argument("--weight-decay", type=_finite, default=0.0)
    p.add_argument("--bias-correction", action="store_true", help="use bias-corrected moments")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("synth", help="write a random base checkpoint of the tiny architecture")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", dest="sub_seed", type=int, default=None)
    p.add_argument("--input-dim", type=_positive_int, default=INPUT_DIM)
    p.add_argument("--hidden-dim", type=int, default=HIDDEN_DIM)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="print tensor names, shapes, dtypes and parameter count")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    if getattr(args, "sub_seed", None) is not None:
        args.seed = args.sub_seed
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (CheckpointFormatError, CorpusFormatError, UnicodeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except IncompatibleCheckpointError as exc:
        log.error("incompatible checkpoints: %s", exc)
        return EXIT_USAGE
    except CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except TrainingDivergedError as exc:
        log.error("%s", exc)
        return EXIT_FAILURE
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
