"""Command line entry point: ``lamaml run | verify | bench``.

Errors are printed to stderr as one JSON object
``{"error": <kind>, "message": ..., "path": ...}`` and the process exits
with status 2 (bad input) or 1 (a check or run failed).
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import _kernels
from .errors import ConfigError, LamamlError


def _fail(kind: str, message: str, path: str = "", code: int = 2) -> int:
    print(json.dumps({"error": kind, "message": message, "path": path}), file=sys.stderr)
    return code


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}", "--seeds") from None
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError(f"expected non-negative seeds, got {text!r}", "--seeds")
    return seeds


def cmd_run(args) -> int:
    from .harness import emit_results, parse_config, run_experiment

    cfg = parse_config(args.config)
    if args.seeds:
        cfg.seeds = _parse_seeds(args.seeds)
    if args.workers:
        cfg.workers = args.workers
    out = Path(args.out or cfg.out)
    rows = run_experiment(cfg)
    paths = emit_results(rows, out, with_wall_time=args.timing or cfg.record_wall_time)
    summary = rows[-1]
    failed = [r for r in rows[:-1] if r.error]
    report = {
        "csv": str(paths["csv"]),
        "jsonl": str(paths["jsonl"]),
        "algorithm": summary.algorithm,
        "benchmark": summary.benchmark,
        "ra_mean": summary.ra[0],
        "ra_std": summary.ra[1],
        "bti_mean": summary.bti[0],
        "bti_std": summary.bti[1],
        "failed_seeds": [{"seed": r.seed, "error": r.error} for r in failed],
    }
    print(json.dumps(report, allow_nan=True))
    if failed:
        return _fail("RunFailed", f"{len(failed)} of {len(rows) - 1} seeds failed", "seeds", code=1)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    report = run_all()
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    if not report["passed"]:
        return _fail("VerificationFailed", "one or more numerical checks failed", code=1)
    return 0


def cmd_bench(args) -> int:
    """Every trainer on a small synthetic stream; prints one CSV line per trainer."""
    from .algorithms import ALGORITHMS, TrainerConfig, run_training
    from .metrics import bti, retained_accuracy
    from .rng import seeded_rng
    from .tasks import make_synthetic_tasks

    T, n = (3, 100) if args.quick else (5, 300)
    stream = make_synthetic_tasks(T, 5, 20, n, 4.0, seeded_rng(args.seed, "tasks"))
    settings = {
        "online": dict(lr=0.1),
        "er": dict(lr=0.1),
        "agem": dict(lr=0.1),
        "cmaml": dict(alpha=0.1, beta=0.1),
        "sync": dict(alpha_init=0.1, eta=0.1, beta=0.1),
        "laer": dict(alpha_init=0.1, eta=0.1),
        "lamaml": dict(alpha_init=0.1, eta=0.1),
    }
    print(f"# backend={_kernels.BACKEND} tasks={T} n_per_task={n} seed={args.seed}")
    print("algorithm,ra,bti,seconds")
    ok = True
    for algo in ALGORITHMS:
        cfg = TrainerConfig(algorithm=algo, hidden=(32, 32), replay_capacity=50, **settings[algo])
        t0 = time.perf_counter()
        rec = run_training(stream, cfg, args.seed)
        dt = time.perf_counter() - t0
        if not rec.completed:
            ok = False
            print(f"{algo},,,{dt:.2f}")
            continue
        print(f"{algo},{retained_accuracy(rec):.2f},{bti(rec):.2f},{dt:.2f}")
    if not ok:
        return _fail("BenchFailed", "a trainer produced non-finite parameters", code=1)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lamaml", description="La-MAML and continual-learning baselines")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one config over one or more seeds")
    r.add_argument("--config", required=True, help="JSON experiment config")
    r.add_argument("--seeds", help="comma-separated seeds overriding the config, e.g. 0,1,2")
    r.add_argument("--out", help="output directory (default: the config's 'out')")
    r.add_argument("--workers", type=int, help="worker threads for independent seeds")
    r.add_argument("--timing", action="store_true", help="fill the wall_time_s column (makes the CSV run-dependent)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="numerical gradient certificates")
    v.add_argument("--out", help="also write the JSON report here")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="synthetic-stream smoke benchmark of every trainer")
    b.add_argument("--quick", action="store_true", help="smaller stream")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), exc.path)
    except LamamlError as exc:
        return _fail(type(exc).__name__, str(exc))
    except KeyboardInterrupt:
        return _fail("Interrupted", "interrupted", code=130)


if __name__ == "__main__":
    sys.exit(main())
