"""Experiment configs, multi-seed execution and result files.

A config is a JSON document::

    {
      "benchmark": {"name": "rotations", "T": 20, "n_per_task": 200},
      "trainer": {"algorithm": "lamaml", "alpha_init": 0.3, "eta": 0.15, "glances": 5},
      "seeds": [0, 1, 2, 3, 4]
    }

Relative data paths resolve against ``$LAMAML_DATA_DIR`` when it is set,
otherwise against ``data_dir`` from the config, otherwise ``./data``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .algorithms import TrainerConfig, run_training
from .errors import ConfigError, LamamlError
from .metrics import RunRecord, bti, retained_accuracy
from .rng import seeded_rng
from .tasks import TaskStream, make_permutation_tasks, make_rotation_tasks, make_synthetic_tasks, read_idx_arrays

DATA_DIR_ENV = "LAMAML_DATA_DIR"
CSV_HEADER = ("algorithm", "benchmark", "seed", "ra", "bti", "alignment", "wall_time_s")
SUMMARY_SEED = "mean±std"

BENCHMARKS = ("rotations", "permutations", "synthetic")
DEFAULT_IMAGES = "mnist5k-images-idx3-ubyte.gz"
DEFAULT_LABELS = "mnist5k-labels-idx1-ubyte.gz"


@dataclass
class BenchmarkSpec:
    name: str
    T: int = 20
    n_per_task: int = 200
    test_frac: float | None = None
    protocol: str = "single-pass"
    epochs: int = 1
    images: str = DEFAULT_IMAGES
    labels: str = DEFAULT_LABELS
    # synthetic streams only
    classes_per_task: int = 5
    dim: int = 20
    separation: float = 4.0


@dataclass
class ExperimentConfig:
    benchmark: BenchmarkSpec
    trainer: TrainerConfig
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "results"
    data_dir: str | None = None
    eval_every: int | None = None
    track_alignment: bool = False
    track_old_task_alignment: bool = False
    record_wall_time: bool = False
    workers: int = 1

    def data_path(self, name: str) -> Path:
        p = Path(name)
        if p.is_absolute():
            return p
        root = os.environ.get(DATA_DIR_ENV) or self.data_dir or "data"
        return Path(root) / p


@dataclass
class ResultRow:
    algorithm: str
    benchmark: str
    seed: int | str
    ra: float
    bti: float
    alignment: float
    wall_time_s: float
    error: str | None = None
    record: RunRecord | None = field(default=None, repr=False, compare=False)

    @property
    def is_summary(self) -> bool:
        return self.seed == SUMMARY_SEED


# --------------------------------------------------------------------------
# config parsing

_TOP_KEYS = {f.name for f in fields(ExperimentConfig)}
_BENCH_KEYS = {f.name for f in fields(BenchmarkSpec)}
_TRAINER_KEYS = {f.name for f in fields(TrainerConfig)}
_INT_FIELDS = {"T", "n_per_task", "epochs", "classes_per_task", "dim", "k", "batch_size", "replay_capacity", "replay_batch", "glances", "workers", "eval_every"}
_BOOL_FIELDS = {"clip_inner_alpha", "track_alignment", "track_old_task_alignment", "record_wall_time"}


def _check_keys(obj: Any, allowed: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"expected an object, got {type(obj).__name__}", where or "$")
    for key in obj:
        if key not in allowed:
            path = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(allowed))})", path)
    return obj


def _check_types(obj: dict, where: str) -> None:
    for key, val in obj.items():
        path = f"{where}.{key}" if where else key
        if key in _INT_FIELDS and val is not None and (isinstance(val, bool) or not isinstance(val, int)):
            raise ConfigError(f"expected an integer, got {val!r}", path)
        if key in _BOOL_FIELDS and not isinstance(val, bool):
            raise ConfigError(f"expected true or false, got {val!r}", path)


def config_from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    _check_keys(doc, _TOP_KEYS, "")
    _check_types(doc, "")
    if "benchmark" not in doc:
        raise ConfigError("missing required section", "benchmark")
    if "trainer" not in doc:
        raise ConfigError("missing required section", "trainer")

    bdoc = _check_keys(doc["benchmark"], _BENCH_KEYS, "benchmark")
    _check_types(bdoc, "benchmark")
    if bdoc.get("name") not in BENCHMARKS:
        raise ConfigError(f"expected one of {', '.join(BENCHMARKS)}, got {bdoc.get('name')!r}", "benchmark.name")
    try:
        bench = BenchmarkSpec(**bdoc)
    except TypeError as exc:
        raise ConfigError(str(exc), "benchmark") from exc
    for key in ("T", "n_per_task", "epochs"):
        if getattr(bench, key) < 1:
            raise ConfigError("must be >= 1", f"benchmark.{key}")
    if bench.protocol not in ("single-pass", "multi-pass"):
        raise ConfigError(f"expected 'single-pass' or 'multi-pass', got {bench.protocol!r}", "benchmark.protocol")
    if bench.protocol == "single-pass" and bench.epochs != 1:
        raise ConfigError("single-pass streams take exactly one epoch", "benchmark.epochs")

    tdoc = _check_keys(doc["trainer"], _TRAINER_KEYS, "trainer")
    _check_types(tdoc, "trainer")
    if "algorithm" not in tdoc:
        raise ConfigError("missing required field", "trainer.algorithm")
    try:
        trainer = TrainerConfig(**tdoc)
    except TypeError as exc:
        raise ConfigError(str(exc), "trainer") from exc
    if bench.protocol == "multi-pass" and trainer.glances != 1:
        raise ConfigError("multi-pass streams use glances = 1", "trainer.glances")

    top = {k: v for k, v in doc.items() if k not in ("benchmark", "trainer")}
    cfg = ExperimentConfig(benchmark=bench, trainer=trainer, **top)
    if not isinstance(cfg.seeds, list) or not cfg.seeds:
        raise ConfigError("need a non-empty list of seeds", "seeds")
    for i, s in enumerate(cfg.seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError(f"seeds must be non-negative integers, got {s!r}", f"seeds[{i}]")
    if cfg.workers < 1:
        raise ConfigError("must be >= 1", "workers")
    if cfg.eval_every is not None and cfg.eval_every < 1:
        raise ConfigError("must be >= 1", "eval_every")
    if cfg.data_dir is not None and base_dir is not None and not Path(cfg.data_dir).is_absolute():
        cfg.data_dir = str(base_dir / cfg.data_dir)
    return cfg


def check_data_files(cfg: ExperimentConfig) -> None:
    if cfg.benchmark.name == "synthetic":
        return
    for key in ("images", "labels"):
        p = cfg.data_path(getattr(cfg.benchmark, key))
        if not p.is_file():
            raise ConfigError(f"data file not found: {p} (set {DATA_DIR_ENV} to relocate)", f"benchmark.{key}")


def parse_config(path) -> ExperimentConfig:
    """Read, validate and default-fill a JSON experiment config."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "$") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", "$") from exc
    cfg = config_from_dict(doc, base_dir=path.parent)
    check_data_files(cfg)
    return cfg


# --------------------------------------------------------------------------
# running

_DATA_CACHE: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = {}
_DATA_LOCK = threading.Lock()


def _load_base(images: Path, labels: Path):
    key = (str(images.resolve()), str(labels.resolve()))
    with _DATA_LOCK:
        if key not in _DATA_CACHE:
            _DATA_CACHE[key] = read_idx_arrays(images, labels)
        return _DATA_CACHE[key]


def build_stream(cfg: ExperimentConfig, seed: int) -> TaskStream:
    b = cfg.benchmark
    rng = seeded_rng(seed, "tasks")
    if b.name == "synthetic":
        ts = make_synthetic_tasks(b.T, b.classes_per_task, b.dim, b.n_per_task, b.separation, rng)
    else:
        base = _load_base(cfg.data_path(b.images), cfg.data_path(b.labels))
        make = make_rotation_tasks if b.name == "rotations" else make_permutation_tasks
        ts = make(base, b.T, b.n_per_task, b.test_frac, rng)
    return ts.with_protocol(
        protocol=b.protocol,
        batch_size=cfg.trainer.batch_size,
        glances=cfg.trainer.glances if b.protocol == "single-pass" else 1,
        epochs=b.epochs,
    )


def _nan_row(cfg: ExperimentConfig, seed, error: str, record=None, wall=float("nan")) -> ResultRow:
    nan = float("nan")
    return ResultRow(cfg.trainer.algorithm, cfg.benchmark.name, seed, nan, nan, nan, wall, error, record)


def run_seed(cfg: ExperimentConfig, seed: int) -> ResultRow:
    """Train one seed; any failure is captured in the row instead of raised."""
    try:
        stream = build_stream(cfg, seed)
        rec = run_training(
            stream,
            cfg.trainer,
            seed,
            track_alignment=cfg.track_alignment,
            track_old_task_alignment=cfg.track_old_task_alignment,
            eval_every=cfg.eval_every,
        )
    except Exception as exc:  # isolate this seed from the others
        return _nan_row(cfg, seed, f"{type(exc).__name__}: {exc}")
    if not rec.completed:
        return _nan_row(cfg, seed, rec.error or "incomplete run", rec, rec.wall_time_s)
    return ResultRow(
        algorithm=cfg.trainer.algorithm,
        benchmark=cfg.benchmark.name,
        seed=seed,
        ra=retained_accuracy(rec),
        bti=bti(rec) if rec.n_tasks >= 2 else float("nan"),
        alignment=rec.mean_alignment(),
        wall_time_s=rec.wall_time_s,
        record=rec,
    )


def _mean_std(vals: list[float]) -> tuple[float, float]:
    vals = [v for v in vals if math.isfinite(v)]
    if not vals:
        return float("nan"), float("nan")
    return float(np.mean(vals)), float(np.std(vals))


def summarize(rows: list[ResultRow]) -> ResultRow | None:
    """Mean and population std over the successful seed rows, stored as ``(mean, std)`` pairs."""
    ok = [r for r in rows if r.error is None and not r.is_summary]
    if not rows:
        return None
    first = rows[0]
    return ResultRow(
        algorithm=first.algorithm,
        benchmark=first.benchmark,
        seed=SUMMARY_SEED,
        ra=_mean_std([r.ra for r in ok]),
        bti=_mean_std([r.bti for r in ok]),
        alignment=_mean_std([r.alignment for r in ok]),
        wall_time_s=_mean_std([r.wall_time_s for r in ok]),
        error=None if ok else "all seeds failed",
    )


def run_experiment(cfg: ExperimentConfig, seeds: list[int] | None = None, workers: int | None = None) -> list[ResultRow]:
    """One row per seed, in seed order, followed by the summary row."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise ConfigError("need at least one seed", "seeds")
    workers = cfg.workers if workers is None else workers
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda s: run_seed(cfg, s), seeds))
    else:
        rows = [run_seed(cfg, s) for s in seeds]
    return rows + [summarize(rows)]


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, tuple):
        m, s = v
        return "" if not math.isfinite(m) else f"{m:.4f}±{s:.4f}"
    if v is None or not math.isfinite(v):
        return ""
    return f"{v:.4f}"


def csv_text(rows: list[ResultRow], with_wall_time: bool = False) -> str:
    """CSV body.  Wall time is left blank unless requested, so repeated runs give identical bytes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        wall = _fmt(r.wall_time_s) if with_wall_time else ""
        w.writerow([r.algorithm, r.benchmark, r.seed, _fmt(r.ra), _fmt(r.bti), _fmt(r.alignment), wall])
    return buf.getvalue()


def _json_num(v):
    return v if isinstance(v, (int, float)) and math.isfinite(v) else None


def record_lines(rows: list[ResultRow]) -> str:
    out = []
    for r in rows:
        if r.is_summary:
            continue
        rec = r.record
        doc = {
            "algorithm": r.algorithm,
            "benchmark": r.benchmark,
            "seed": r.seed,
            "error": r.error,
            "acc": None if rec is None else [[_json_num(float(a)) for a in row] for row in rec.acc],
            "curve": None if rec is None else rec.curve,
            "old_task_alignment": None if rec is None else [_json_num(v) for v in rec.old_task_alignment],
            "n_updates": None if rec is None else rec.n_updates,
            "wall_time_s": _json_num(r.wall_time_s),
            "config": None if rec is None else rec.config,
        }
        out.append(json.dumps(doc, sort_keys=True))
    return "".join(line + "\n" for line in out)


def emit_results(rows: list[ResultRow], out_dir, with_wall_time: bool = False) -> dict[str, Path]:
    """Write ``results.csv`` and ``records.jsonl`` (per-seed accuracy matrices) into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / "results.csv", "jsonl": out / "records.jsonl"}
        paths["csv"].write_text(csv_text(rows, with_wall_time), encoding="utf-8")
        paths["jsonl"].write_text(record_lines(rows), encoding="utf-8")
    except OSError as exc:
        raise LamamlError(f"cannot write results to {out}: {exc}") from exc
    return paths
