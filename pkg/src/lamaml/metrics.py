"""Retained accuracy, backward transfer and gradient alignment."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError
from .nn import Network, ParamVector, grad_of
from .replay import ReplayBuffer
from .tasks import stack


@dataclass
class RunRecord:
    """Accuracy matrix of one training run.

    ``acc[i, j]`` is the test accuracy on task ``j`` measured right after
    task ``i`` finished; entries with ``j > i`` are NaN.
    """

    acc: np.ndarray
    seed: int = 0
    config: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    alignments: list[float] = field(default_factory=list)
    old_task_alignment: list[float] = field(default_factory=list)
    curve: list[dict] = field(default_factory=list)
    n_updates: int = 0
    error: str | None = None

    @property
    def n_tasks(self) -> int:
        return self.acc.shape[1]

    @property
    def completed(self) -> bool:
        return self.error is None and not np.isnan(self.acc[-1]).any()

    def mean_alignment(self) -> float:
        vals = [a for a in self.alignments if np.isfinite(a)]
        return float(np.mean(vals)) if vals else float("nan")


def empty_record(n_tasks: int, **kw) -> RunRecord:
    return RunRecord(acc=np.full((n_tasks, n_tasks), np.nan), **kw)


def _final_row(rec: RunRecord) -> np.ndarray:
    row = rec.acc[-1]
    if np.isnan(row).any():
        raise MetricError("run record is incomplete: final evaluation row missing")
    return row


def retained_accuracy(rec: RunRecord) -> float:
    """Mean final test accuracy over all tasks, in percent."""
    return float(100.0 * np.mean(_final_row(rec)))


def bti(rec: RunRecord) -> float:
    """Mean change (percentage points) of each earlier task's accuracy from when it was learnt to the end.

    The last task is left out: its change is zero by construction.
    """
    T = rec.n_tasks
    if T < 2:
        raise MetricError("backward transfer needs at least two tasks")
    final = _final_row(rec)
    learnt = np.diag(rec.acc)[: T - 1]
    return float(100.0 * np.mean(final[: T - 1] - learnt))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, NaN when either vector is zero."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return float("nan")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def grad_alignment(net: Network, params: ParamVector, replay_batch, new_batch) -> float:
    """Cosine between the mean loss gradients of two example lists (NaN if either gradient vanishes)."""
    if not replay_batch or not new_batch:
        raise MetricError("gradient alignment needs two non-empty batches")
    g_old = grad_of(net, params, *stack(replay_batch))
    g_new = grad_of(net, params, *stack(new_batch))
    return cosine(g_old, g_new)


def old_task_alignment(net: Network, params: ParamVector, buffer: ReplayBuffer, current_task_id: int) -> float:
    """Mean pairwise dot product of per-task mean gradients over buffered tasks older than ``current_task_id``.

    NaN when fewer than two old tasks are represented.
    """
    groups: dict[int, list] = {}
    for ex in buffer:
        if ex.task_id < current_task_id:
            groups.setdefault(ex.task_id, []).append(ex)
    if len(groups) < 2:
        return float("nan")
    grads = [grad_of(net, params, *stack(groups[t])) for t in sorted(groups)]
    return float(np.mean([np.dot(a, b) for a, b in itertools.combinations(grads, 2)]))
