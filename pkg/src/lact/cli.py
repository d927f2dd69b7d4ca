"""Command-line entry point: ``lact <command> [--seed N] [--precision P] [--config FILE] [--out FILE]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, replace

from . import checks
from .config import apply_overrides, load_config
from .errors import LactError
from .perfmodel import throughput_bench, to_csv
from .recall import SPEC_VERSION, RecallTask, run_optimizer_sweep, run_recall, run_state_sweep


@dataclass(frozen=True)
class GradcheckSettings:
    n_seeds: int = 20
    d: int = 6
    dh: int = 8
    l: int = 5
    step: float = 1e-5


@dataclass(frozen=True)
class ParallelSettings:
    shards: tuple[int, ...] = (1, 2, 4, 7)
    chunk: int = 64
    d: int = 8
    dh: int = 16
    head_shards: tuple[int, ...] = (1, 2, 4)


@dataclass(frozen=True)
class BenchSettings:
    hidden: int = 512
    chunk_sizes: tuple[int, ...] = (16, 64, 256, 1024, 4096)
    r: int = 1
    samples: int = 5
    min_time: float = 0.05
    threads: int = 1
    precision: str = "single"


@dataclass(frozen=True)
class StateSweepSettings:
    dh_list: tuple[int, ...] = (32, 64, 128)


def _overrides(args) -> dict[str, str]:
    return load_config(args.config) if args.config else {}


def _task(args, **defaults) -> RecallTask:
    overrides = _overrides(args)
    task = apply_overrides(RecallTask(**defaults), overrides, ignore=("dh_list",))
    if args.seed is not None and "seeds" not in overrides:
        task = replace(task, seeds=tuple(args.seed + i for i in range(len(task.seeds))))
    if args.precision:
        task = replace(task, precision=args.precision)
    return task


def _emit(args, text: str):
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(args, payload: dict):
    payload = {"spec_version": SPEC_VERSION, **payload}
    _emit(args, json.dumps(payload, indent=2) + "\n")


def cmd_gradcheck(args) -> int:
    s = apply_overrides(GradcheckSettings(), _overrides(args))
    seed = args.seed or 0
    report = checks.gradcheck(range(seed, seed + s.n_seeds), s.d, s.dh, s.l, s.step)
    _emit_json(args, report)
    return 0 if report["pass"] else 1


def cmd_recall(args) -> int:
    task = _task(args)
    _emit_json(args, {"task": asdict(task), "report": run_recall(task).to_dict()})
    return 0


def cmd_sweep_optim(args) -> int:
    _emit_json(args, run_optimizer_sweep(_task(args)))
    return 0


def cmd_sweep_state(args) -> int:
    overrides = _overrides(args)
    sweep = apply_overrides(StateSweepSettings(), {k: v for k, v in overrides.items() if k == "dh_list"})
    if args.dh_list:
        sweep = apply_overrides(sweep, {"dh_list": args.dh_list})
    _emit_json(args, run_state_sweep(_task(args, num_pairs=512), sweep.dh_list))
    return 0


def cmd_bench(args) -> int:
    s = apply_overrides(BenchSettings(), _overrides(args))
    if args.precision:
        s = replace(s, precision=args.precision)
    threads = None if s.threads <= 0 else s.threads
    points = throughput_bench(s.hidden, s.chunk_sizes, s.r, s.precision, s.samples, s.min_time, threads,
                              args.seed or 0)
    _emit(args, to_csv(points))
    return 0


def cmd_parallel_check(args) -> int:
    s = apply_overrides(ParallelSettings(), _overrides(args))
    report = checks.parallel_check(args.seed or 0, s.shards, s.chunk, s.d, s.dh, s.head_shards)
    _emit_json(args, report)
    return 0 if report["pass"] else 1


def cmd_maskcheck(args) -> int:
    if args.config:
        raise LactError("maskcheck takes no config keys")
    report = checks.maskcheck(args.seed or 0)
    _emit_json(args, report)
    return 0 if report["pass"] else 1


COMMANDS = {
    "gradcheck": (cmd_gradcheck, "finite-difference check of the chunk gradient (exit 1 on failure)"),
    "recall": (cmd_recall, "key-value recall run, JSON report"),
    "sweep-optim": (cmd_sweep_optim, "recall under gd / momentum / muon, JSON"),
    "sweep-state": (cmd_sweep_state, "recall across fast-weight hidden sizes, JSON"),
    "bench": (cmd_bench, "chunk-size throughput benchmark, CSV"),
    "parallel-check": (cmd_parallel_check, "context/tensor parallel equivalence, JSON (exit 1 on failure)"),
    "maskcheck": (cmd_maskcheck, "dependency-mask perturbation suite, JSON (exit 1 on failure)"),
}


GLOBAL_FLAGS = ("seed", "precision", "config", "out", "dh_list")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed (default 0)")
    common.add_argument("--precision", choices=("single", "double"), default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="plain-text key=value file")
    common.add_argument("--out", metavar="PATH", default=argparse.SUPPRESS,
                        help="write output here instead of stdout")

    parser = argparse.ArgumentParser(prog="lact", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=fn)
        if name == "sweep-state":
            p.add_argument("--dh-list", default=argparse.SUPPRESS, help="comma-separated hidden sizes, e.g. 32,64,128")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in GLOBAL_FLAGS:
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except LactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
