"""Task streams: IDX ingestion, rotated / permuted digit benchmarks, synthetic blobs."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import BadMagicError, CountMismatchError, DataError, TruncatedFileError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MAX_TEST_PER_TASK = 500


@dataclass(frozen=True, eq=False)
class Example:
    x: np.ndarray
    y: int
    task_id: int


@dataclass(eq=False)
class Task:
    id: int
    train: list[Example]
    test: list[Example]
    transform: dict = field(default_factory=dict)

    @cached_property
    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return stack(self.train)

    @cached_property
    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return stack(self.test)


@dataclass
class TaskStream:
    tasks: list[Task]
    n_classes: int
    protocol: str = "single-pass"
    batch_size: int = 10
    glances: int = 1
    epochs: int = 1

    def __post_init__(self):
        if self.protocol not in ("single-pass", "multi-pass"):
            raise ValueError(f"protocol must be 'single-pass' or 'multi-pass', got {self.protocol!r}")
        if self.batch_size < 1 or self.glances < 1 or self.epochs < 1:
            raise ValueError("batch_size, glances and epochs must all be >= 1")
        if self.protocol == "single-pass" and self.epochs != 1:
            raise ValueError("single-pass streams take exactly one epoch")

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def input_dim(self) -> int:
        return int(self.tasks[0].train[0].x.shape[0])

    def with_protocol(self, **changes) -> "TaskStream":
        """Same tasks under a different batching protocol."""
        kw = dict(
            tasks=self.tasks,
            n_classes=self.n_classes,
            protocol=self.protocol,
            batch_size=self.batch_size,
            glances=self.glances,
            epochs=self.epochs,
        )
        kw.update(changes)
        return TaskStream(**kw)


def stack(examples: Sequence[Example]) -> tuple[np.ndarray, np.ndarray]:
    if not examples:
        raise DataError("cannot stack an empty example list")
    X = np.stack([e.x for e in examples])
    y = np.fromiter((e.y for e in examples), dtype=np.int64, count=len(examples))
    return X, y


# --------------------------------------------------------------------------
# IDX files


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> tuple[tuple[int, ...], bytes]:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the magic number")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagicError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    body = raw[header:]
    need = math.prod(dims)
    if len(body) < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes, found {len(body)}")
    return dims, body[:need]


def read_idx_arrays(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """``(X, y)`` with ``X`` of shape ``(N, rows*cols)`` scaled to [0, 1]. Gzipped files are accepted."""
    (n_img, rows, cols), img = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, images_path)
    (n_lab,), lab = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, labels_path)
    if n_img != n_lab:
        raise CountMismatchError(f"{n_img} images but {n_lab} labels")
    X = np.frombuffer(img, dtype=np.uint8).reshape(n_img, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    return X, y


def load_idx(images_path, labels_path) -> list[tuple[np.ndarray, int]]:
    X, y = read_idx_arrays(images_path, labels_path)
    return [(X[i], int(y[i])) for i in range(X.shape[0])]


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path, compress: bool = False) -> None:
    """Write uint8 ``images`` of shape ``(N, rows, cols)`` and ``labels`` of shape ``(N,)``."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    opener = (lambda b: gzip.compress(b, mtime=0)) if compress else (lambda b: b)
    Path(images_path).write_bytes(opener(img))
    Path(labels_path).write_bytes(opener(lab))


# --------------------------------------------------------------------------
# task construction


def _split_indices(n_base: int, T: int, n_per_task: int, test_frac, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    if test_frac is None:
        spare = n_base - T * n_per_task
        n_test = min(MAX_TEST_PER_TASK, spare // T if T else 0)
    else:
        n_test = min(MAX_TEST_PER_TASK, int(math.ceil(test_frac * n_per_task)))
    if T < 1 or n_per_task < 1 or n_test < 1 or T * (n_per_task + n_test) > n_base:
        raise DataError(
            f"base set of {n_base} examples cannot supply {T} tasks x "
            f"({n_per_task} train + {max(n_test, 1)} test) disjoint examples"
        )
    order = rng.permutation(n_base)
    splits = []
    for t in range(T):
        tr = order[t * n_per_task : (t + 1) * n_per_task]
        start = T * n_per_task + t * n_test
        splits.append((tr, order[start : start + n_test]))
    return splits


def _build_tasks(X, y, splits, transforms, make_inputs) -> list[Task]:
    tasks = []
    for t, ((tr, te), desc) in enumerate(zip(splits, transforms)):
        Xtr = make_inputs(X[tr], desc)
        Xte = make_inputs(X[te], desc)
        train = [Example(Xtr[i], int(y[j]), t) for i, j in enumerate(tr)]
        test = [Example(Xte[i], int(y[j]), t) for i, j in enumerate(te)]
        tasks.append(Task(id=t, train=train, test=test, transform=desc))
    return tasks


def make_permutation_tasks(base, T: int, n_per_task: int, test_frac=None, rng=None, n_classes: int = 10) -> TaskStream:
    """Task 0 keeps the pixel order; each later task applies its own fixed random pixel permutation.

    ``base`` is an ``(X, y)`` pair.  Every task draws its own disjoint train
    and test examples from ``base``.  ``test_frac=None`` spreads the examples
    left over after training evenly across tasks (at most 500 each).
    """
    X, y = base
    rng = np.random.default_rng(0) if rng is None else rng
    splits = _split_indices(X.shape[0], T, n_per_task, test_frac, rng)
    d = X.shape[1]
    perms = [np.arange(d)] + [rng.permutation(d) for _ in range(T - 1)]
    transforms = [{"kind": "permutation", "perm": p} for p in perms]
    tasks = _build_tasks(X, y, splits, transforms, lambda xs, desc: np.ascontiguousarray(xs[:, desc["perm"]]))
    return TaskStream(tasks=tasks, n_classes=n_classes)


def rotation_angles(T: int) -> list[float]:
    if T == 1:
        return [0.0]
    return [t * 180.0 / (T - 1) for t in range(T)]


def _rotation_map(rows: int, cols: int, angle_deg: float):
    """Bilinear gather indices/weights for rotating a ``rows x cols`` image counter-clockwise by ``angle_deg``."""
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    cy, cx = (rows - 1) / 2.0, (cols - 1) / 2.0
    r, q = np.meshgrid(np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64), indexing="ij")
    dy, dx = r - cy, q - cx
    # inverse map: source = R(-angle) @ (dest - centre) + centre, image y axis points down
    sx = cx + c * dx - s * dy
    sy = cy + s * dx + c * dy
    for a in (sx, sy):
        near = np.abs(a - np.round(a)) < 1e-9
        a[near] = np.round(a[near])
    x0, y0 = np.floor(sx), np.floor(sy)
    fx, fy = sx - x0, sy - y0
    x0, y0 = x0.astype(np.int64), y0.astype(np.int64)
    pad = rows * cols  # index of an appended zero pixel
    idx, wts = [], []
    for oy, ox, w in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx), (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + oy, x0 + ox
        ok = (yy >= 0) & (yy < rows) & (xx >= 0) & (xx < cols)
        flat = np.where(ok, yy * cols + xx, pad)
        idx.append(flat.ravel())
        wts.append(np.where(ok, w, 0.0).ravel())
    return idx, wts


def rotate_images(X: np.ndarray, angle_deg: float, rows: int = 28, cols: int = 28) -> np.ndarray:
    """Rotate flattened images about their centre with bilinear interpolation; outside pixels read as 0."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[1] != rows * cols:
        raise ValueError(f"images must have {rows * cols} pixels, got {X2.shape[1]}")
    padded = np.concatenate([X2, np.zeros((X2.shape[0], 1))], axis=1)
    idx, wts = _rotation_map(rows, cols, angle_deg)
    out = np.zeros_like(X2)
    for i, w in zip(idx, wts):
        out += padded[:, i] * w
    return out[0] if single else out


def make_rotation_tasks(base, T: int, n_per_task: int, test_frac=None, rng=None, n_classes: int = 10) -> TaskStream:
    """Task ``t`` (0-based) shows digits rotated by ``t * 180 / (T - 1)`` degrees."""
    X, y = base
    side = int(round(math.sqrt(X.shape[1])))
    if side * side != X.shape[1]:
        raise DataError(f"rotation needs square images, got {X.shape[1]} pixels")
    rng = np.random.default_rng(0) if rng is None else rng
    splits = _split_indices(X.shape[0], T, n_per_task, test_frac, rng)
    transforms = [{"kind": "rotation", "angle": a} for a in rotation_angles(T)]
    tasks = _build_tasks(X, y, splits, transforms, lambda xs, desc: rotate_images(xs, desc["angle"], side, side))
    return TaskStream(tasks=tasks, n_classes=n_classes)


def _random_rotation(dim: int, rng) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
    Q *= np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def make_synthetic_tasks(
    T: int,
    classes_per_task: int,
    dim: int,
    n_per_task: int,
    separation: float,
    rng,
    n_test: int | None = None,
) -> TaskStream:
    """Gaussian blobs, one per class, under a per-task random rotation of input space.

    Class means sit on a regular polygon in the first two coordinates with
    adjacent means ``separation`` apart.  All tasks share the same label set,
    so a single head of ``classes_per_task`` units serves the whole stream.
    """
    if separation < 0:
        raise ValueError(f"separation must be non-negative, got {separation}")
    if dim < 2 or classes_per_task < 2:
        raise ValueError("synthetic streams need dim >= 2 and at least 2 classes")
    n_test = min(MAX_TEST_PER_TASK, n_per_task) if n_test is None else n_test
    C = classes_per_task
    radius = separation / (2.0 * math.sin(math.pi / C))
    means = np.zeros((C, dim))
    ang = 2.0 * math.pi * np.arange(C) / C
    means[:, 0] = radius * np.cos(ang)
    means[:, 1] = radius * np.sin(ang)

    def draw(n, Q, t):
        labels = rng.permutation(np.arange(n) % C)
        pts = (means[labels] + rng.standard_normal((n, dim))) @ Q.T
        return [Example(np.ascontiguousarray(pts[i]), int(labels[i]), t) for i in range(n)]

    tasks = []
    for t in range(T):
        Q = _random_rotation(dim, rng)
        tasks.append(Task(id=t, train=draw(n_per_task, Q, t), test=draw(n_test, Q, t), transform={"kind": "blobs", "rotation": Q}))
    return TaskStream(tasks=tasks, n_classes=C)


# --------------------------------------------------------------------------
# streaming


def stream_batches(ts: TaskStream, task_index: int, rng: np.random.Generator | None = None) -> Iterator[list[Example]]:
    """Training batches for one task.

    Single-pass: batches in stream order, each repeated ``glances`` times.
    Multi-pass: ``epochs`` passes, each over a fresh shuffle (needs ``rng``).
    """
    if not 0 <= task_index < len(ts.tasks):
        raise IndexError(f"task index {task_index} out of range for {len(ts.tasks)} tasks")
    train = ts.tasks[task_index].train
    bs = ts.batch_size
    if ts.protocol == "single-pass":
        for start in range(0, len(train), bs):
            batch = train[start : start + bs]
            for _ in range(ts.glances):
                yield batch
        return
    if rng is None:
        raise ValueError("multi-pass streaming shuffles each epoch and needs an rng")
    for _ in range(ts.epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(train), bs):
            yield [train[i] for i in order[start : start + bs]]
