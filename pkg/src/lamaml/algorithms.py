"""Continual-learning trainers.

Baselines (Online, ER, A-GEM) and the meta-learning family (C-MAML, Sync,
La-ER, La-MAML).  Each ``*_update`` function performs one update on one
incoming batch and returns new arrays; nothing is mutated in place.

All meta-trainers are first-order: gradients taken along the inner trajectory
are treated as constants when differentiating the meta-loss.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, NonFiniteError
from .metrics import RunRecord, empty_record, grad_alignment, old_task_alignment
from .nn import Network, ParamVector, accuracy, clip_grad_norm, grad_of, sgd_step
from .replay import ReplayBuffer
from .rng import seeded_rng
from .tasks import Example, TaskStream, stack, stream_batches

ALGORITHMS = ("online", "er", "agem", "cmaml", "sync", "laer", "lamaml")
META_ALGORITHMS = ("cmaml", "sync", "laer", "lamaml")
REPLAY_ALGORITHMS = ("er", "agem") + META_ALGORITHMS
LR_ALGORITHMS = ("sync", "laer", "lamaml")

_ALIASES = {"c-maml": "cmaml", "la-maml": "lamaml", "la-er": "laer", "sync-la-maml": "sync", "a-gem": "agem"}


def canonical_algorithm(name: str) -> str:
    key = name.strip().lower().replace("_", "-")
    key = _ALIASES.get(key, key)
    if key not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}", "trainer.algorithm")
    return key


@dataclass
class TrainerConfig:
    """Hyperparameters for one trainer.

    ``lr`` is the step size of the plain-SGD baselines, ``alpha``/``beta``
    the inner/outer step sizes of C-MAML (``beta`` is also the outer step of
    Sync), ``alpha_init``/``eta`` the initial value and learning rate of the
    per-parameter LRs.
    """

    algorithm: str
    k: int = 10
    batch_size: int = 10
    lr: float = 0.03
    alpha: float = 0.1
    beta: float = 0.1
    alpha_init: float = 0.3
    eta: float = 0.15
    replay_capacity: int = 200
    replay_batch: int = 10
    clip: float = 2.0
    meta_loss: str = "all-steps"
    glances: int = 1
    clip_inner_alpha: bool = False
    hidden: tuple[int, ...] = (100, 100)

    def __post_init__(self):
        self.algorithm = canonical_algorithm(self.algorithm)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}", "trainer.k")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}", "trainer.batch_size")
        if self.algorithm in META_ALGORITHMS and self.batch_size % self.k:
            raise ConfigError(
                f"k={self.k} does not divide batch_size={self.batch_size}", "trainer.k"
            )
        if self.meta_loss not in ("all-steps", "last-step"):
            raise ConfigError(f"meta_loss must be 'all-steps' or 'last-step', got {self.meta_loss!r}", "trainer.meta_loss")
        if not self.clip > 0:
            raise ConfigError(f"clip must be positive, got {self.clip}", "trainer.clip")
        if self.glances < 1:
            raise ConfigError(f"glances must be >= 1, got {self.glances}", "trainer.glances")
        if self.replay_capacity < 1 or self.replay_batch < 0:
            raise ConfigError("replay_capacity must be >= 1 and replay_batch >= 0", "trainer.replay_capacity")
        if self.algorithm in LR_ALGORITHMS and not (self.alpha_init > 0 and self.eta >= 0):
            raise ConfigError("alpha_init must be positive and eta non-negative", "trainer.alpha_init")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden sizes must be positive, got {self.hidden}", "trainer.hidden")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class LrState:
    """Learnable per-parameter learning rates, stored unclipped."""

    alpha: ParamVector
    alpha_init: float
    eta: float

    @classmethod
    def create(cls, n_params: int, alpha_init: float, eta: float) -> "LrState":
        if not (alpha_init > 0 and eta >= 0):
            raise ValueError("alpha_init must be positive and eta non-negative")
        return cls(np.full(n_params, float(alpha_init)), float(alpha_init), float(eta))

    def replace(self, alpha: ParamVector) -> "LrState":
        return LrState(alpha, self.alpha_init, self.eta)


@dataclass
class MetaBatch:
    """``inner_stream``: the current-task sub-batches for the fast updates; ``meta_X``/``meta_y``: b ∪ Sample(R)."""

    inner_stream: list[tuple[np.ndarray, np.ndarray]]
    meta_X: np.ndarray
    meta_y: np.ndarray
    replay: list[Example] = field(default_factory=list)
    batch: list[Example] = field(default_factory=list)


def split_inner(batch: Sequence[Example], k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Cut a batch into ``k`` contiguous, equally sized sub-batches (fewer if the batch is short)."""
    X, y = stack(batch)
    n = min(k, len(batch))
    return [(Xs, ys) for Xs, ys in zip(np.array_split(X, n), np.array_split(y, n))]


def make_meta_batch(batch: Sequence[Example], replay: Sequence[Example], k: int) -> MetaBatch:
    meta_X, meta_y = stack(list(replay) + list(batch))
    return MetaBatch(split_inner(batch, k), meta_X, meta_y, list(replay), list(batch))


# --------------------------------------------------------------------------
# shared primitives


def inner_loop(
    net: Network, theta0: ParamVector, lr, stream, clip: float | None = None
) -> tuple[ParamVector, list[ParamVector], list[ParamVector]]:
    """Sequential SGD over the sub-batches of ``stream``.

    Returns the final parameters, the gradient applied at each step (taken at
    that step's starting point, norm-clipped when ``clip`` is set) and the
    parameters after each step.
    """
    theta = theta0
    traj_grads, per_step = [], []
    for step, (X, y) in enumerate(stream):
        try:
            g = grad_of(net, theta, X, y)
        except NonFiniteError as exc:
            raise NonFiniteError(f"inner step {step}: {exc}") from exc
        if clip is not None:
            g = clip_grad_norm(g, clip)
        traj_grads.append(g)
        theta = sgd_step(theta, g, lr)
        per_step.append(theta)
    return theta, traj_grads, per_step


def meta_grad_theta(net: Network, per_step_params: Sequence[ParamVector], meta_X, meta_y, mode: str = "all-steps") -> ParamVector:
    """First-order meta-gradient.

    ``last-step``: gradient of the mean meta-loss at the final fast weights.
    ``all-steps``: the meta-loss is averaged over every fast-weight iterate,
    so this is the mean of the per-iterate gradients.
    """
    return _reduce_steps(meta_grads_per_step(net, per_step_params, meta_X, meta_y, mode))


def meta_grads_per_step(net: Network, per_step_params: Sequence[ParamVector], meta_X, meta_y, mode: str = "all-steps") -> list[ParamVector]:
    """Meta-loss gradient at each iterate that enters the meta-loss (only the last one in ``last-step`` mode)."""
    if len(per_step_params) == 0:
        raise ValueError("meta-gradient needs at least one set of fast weights")
    if mode == "last-step":
        return [grad_of(net, per_step_params[-1], meta_X, meta_y)]
    if mode != "all-steps":
        raise ValueError(f"unknown meta-loss mode {mode!r}")
    return [grad_of(net, theta, meta_X, meta_y) for theta in per_step_params]


def _reduce_steps(step_grads: Sequence[ParamVector]) -> ParamVector:
    g = step_grads[0].copy()
    for s in step_grads[1:]:
        g += s
    if len(step_grads) > 1:
        g /= len(step_grads)
    return g


def meta_grad_alpha(g_meta: ParamVector, traj_grads: Sequence[ParamVector]) -> ParamVector:
    """LR hypergradient ``-g_meta * sum(traj_grads)``, elementwise.

    Negative where the meta-gradient and the inner trajectory agree (the LR
    grows), positive where they conflict (the LR shrinks).
    """
    g_traj = np.sum(traj_grads, axis=0)
    if g_traj.shape != g_meta.shape:
        raise ValueError(f"shape mismatch: g_meta {g_meta.shape} vs trajectory {g_traj.shape}")
    return -g_meta * g_traj


def step_grad_alpha(step_grads: Sequence[ParamVector], traj_grads: Sequence[ParamVector]) -> ParamVector:
    """First-order LR hypergradient of a meta-loss built from ``step_grads``.

    A single entry is the last-step case and equals
    ``meta_grad_alpha(step_grads[0], traj_grads)``.  With one entry per inner
    step, iterate ``k'`` depends on α only through the first ``k'`` trajectory
    gradients, so each meta-gradient is paired with the partial trajectory
    sum up to its own step and the terms are averaged like the meta-loss.
    """
    k = len(traj_grads)
    if len(step_grads) == 1:
        return meta_grad_alpha(step_grads[0], traj_grads)
    if len(step_grads) != k:
        raise ValueError(f"expected 1 or {k} per-step meta-gradients, got {len(step_grads)}")
    partial = np.zeros_like(traj_grads[0])
    g_alpha = np.zeros_like(traj_grads[0])
    for g_step, g_traj in zip(step_grads, traj_grads):
        partial += g_traj
        g_alpha -= g_step * partial
    return g_alpha / k


def _unroll(net, theta0, lr, mb: MetaBatch, cfg: TrainerConfig):
    if cfg.clip_inner_alpha and np.ndim(lr):
        lr = np.maximum(0.0, lr)
    _, traj, per_step = inner_loop(net, theta0, lr, mb.inner_stream)
    step_grads = meta_grads_per_step(net, per_step, mb.meta_X, mb.meta_y, cfg.meta_loss)
    return step_grads, traj


# --------------------------------------------------------------------------
# meta-learning trainers


def la_maml_update(net: Network, theta0: ParamVector, lrstate: LrState, mb: MetaBatch, cfg: TrainerConfig):
    """Look-ahead MAML: update the LRs first, then step the weights with the clipped new LRs."""
    step_grads, traj = _unroll(net, theta0, lrstate.alpha, mb, cfg)
    g_meta = _reduce_steps(step_grads)
    g_alpha = clip_grad_norm(step_grad_alpha(step_grads, traj), cfg.clip)
    alpha_new = lrstate.alpha - lrstate.eta * g_alpha
    theta_new = theta0 - np.maximum(0.0, alpha_new) * clip_grad_norm(g_meta, cfg.clip)
    return theta_new, lrstate.replace(alpha_new)


def c_maml_update(net: Network, theta0: ParamVector, mb: MetaBatch, cfg: TrainerConfig, alpha=None) -> ParamVector:
    """Continual MAML with a fixed inner LR (``cfg.alpha`` unless ``alpha`` is given) and scalar outer LR ``cfg.beta``."""
    lr = cfg.alpha if alpha is None else alpha
    step_grads, _ = _unroll(net, theta0, lr, mb, cfg)
    g_meta = _reduce_steps(step_grads)
    return theta0 - cfg.beta * clip_grad_norm(g_meta, cfg.clip)


def sync_update(net: Network, theta0: ParamVector, lrstate: LrState, mb: MetaBatch, cfg: TrainerConfig):
    """Learnable inner LRs, but weights and LRs step simultaneously and the weight step uses scalar ``beta``."""
    step_grads, traj = _unroll(net, theta0, lrstate.alpha, mb, cfg)
    g_meta = _reduce_steps(step_grads)
    g_alpha = clip_grad_norm(step_grad_alpha(step_grads, traj), cfg.clip)
    theta_new = theta0 - cfg.beta * clip_grad_norm(g_meta, cfg.clip)
    return theta_new, lrstate.replace(lrstate.alpha - lrstate.eta * g_alpha)


def la_er_update(net: Network, theta0: ParamVector, lrstate: LrState, mb: MetaBatch, cfg: TrainerConfig):
    """ER weight step on the meta-batch, scaled by LRs learnt from the La-MAML hypergradient."""
    step_grads, traj = _unroll(net, theta0, lrstate.alpha, mb, cfg)
    g_alpha = clip_grad_norm(step_grad_alpha(step_grads, traj), cfg.clip)
    alpha_new = lrstate.alpha - lrstate.eta * g_alpha
    g_er = clip_grad_norm(grad_of(net, theta0, mb.meta_X, mb.meta_y), cfg.clip)
    return theta0 - np.maximum(0.0, alpha_new) * g_er, lrstate.replace(alpha_new)


# --------------------------------------------------------------------------
# baselines


def er_update(net: Network, theta0: ParamVector, mb: MetaBatch, cfg: TrainerConfig) -> ParamVector:
    g = grad_of(net, theta0, mb.meta_X, mb.meta_y)
    return sgd_step(theta0, clip_grad_norm(g, cfg.clip), cfg.lr)


def online_update(net: Network, theta0: ParamVector, batch: Sequence[Example], cfg: TrainerConfig) -> ParamVector:
    X, y = stack(batch)
    return sgd_step(theta0, clip_grad_norm(grad_of(net, theta0, X, y), cfg.clip), cfg.lr)


def agem_project(g: ParamVector, g_ref: ParamVector) -> ParamVector:
    """Remove the component of ``g`` opposing ``g_ref`` (no-op when they do not conflict or ``g_ref`` is zero)."""
    dot = float(np.dot(g, g_ref))
    ref_sq = float(np.dot(g_ref, g_ref))
    if dot >= 0.0 or ref_sq == 0.0:
        return g
    return g - (dot / ref_sq) * g_ref


def agem_update(
    net: Network,
    theta0: ParamVector,
    batch: Sequence[Example],
    buffer: ReplayBuffer,
    cfg: TrainerConfig,
    rng: np.random.Generator,
) -> ParamVector:
    X, y = stack(batch)
    g = grad_of(net, theta0, X, y)
    ref = buffer.sample(cfg.replay_batch, rng)
    if ref:
        g = agem_project(g, grad_of(net, theta0, *stack(ref)))
    return sgd_step(theta0, clip_grad_norm(g, cfg.clip), cfg.lr)


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainerState:
    net: Network
    theta: ParamVector
    lrstate: LrState | None
    buffer: ReplayBuffer | None


def init_state(stream: TaskStream, cfg: TrainerConfig, init_rng: np.random.Generator) -> TrainerState:
    net = Network((stream.input_dim, *cfg.hidden, stream.n_classes))
    theta = net.init_params(init_rng)
    lrstate = LrState.create(net.n_params, cfg.alpha_init, cfg.eta) if cfg.algorithm in LR_ALGORITHMS else None
    buffer = ReplayBuffer(cfg.replay_capacity) if cfg.algorithm in REPLAY_ALGORITHMS else None
    return TrainerState(net, theta, lrstate, buffer)


def apply_update(state: TrainerState, batch: Sequence[Example], cfg: TrainerConfig, rng: np.random.Generator) -> list[Example]:
    """One update of ``cfg.algorithm`` on ``batch``; returns the replay sample used (possibly empty)."""
    algo = cfg.algorithm
    net = state.net
    if algo == "online":
        state.theta = online_update(net, state.theta, batch, cfg)
        return []
    if algo == "agem":
        state.theta = agem_update(net, state.theta, batch, state.buffer, cfg, rng)
        return []
    replay = state.buffer.sample(cfg.replay_batch, rng)
    mb = make_meta_batch(batch, replay, cfg.k)
    if algo == "er":
        state.theta = er_update(net, state.theta, mb, cfg)
    elif algo == "cmaml":
        state.theta = c_maml_update(net, state.theta, mb, cfg)
    elif algo == "lamaml":
        state.theta, state.lrstate = la_maml_update(net, state.theta, state.lrstate, mb, cfg)
    elif algo == "sync":
        state.theta, state.lrstate = sync_update(net, state.theta, state.lrstate, mb, cfg)
    elif algo == "laer":
        state.theta, state.lrstate = la_er_update(net, state.theta, state.lrstate, mb, cfg)
    return replay


def evaluate(net: Network, theta: ParamVector, stream: TaskStream, upto: int) -> list[float]:
    """Test accuracy on tasks ``0..upto``."""
    return [accuracy(net, theta, *stream.tasks[j].test_arrays) for j in range(upto + 1)]


def run_training(
    stream: TaskStream,
    cfg: TrainerConfig,
    seed: int = 0,
    *,
    track_alignment: bool = False,
    track_old_task_alignment: bool = False,
    eval_every: int | None = None,
) -> RunRecord:
    """Train on every task of ``stream`` in order and evaluate all seen tasks after each one.

    The glance count, batch size and protocol come from ``stream``.  Each
    incoming example is pushed to the replay buffer once, on its first
    glance, after the update's replay sample has been drawn.
    """
    init_rng = seeded_rng(seed, "init")
    buf_rng = seeded_rng(seed, "buffer")
    samp_rng = seeded_rng(seed, "sampling")
    shuffle_rng = seeded_rng(seed, "shuffle")

    state = init_state(stream, cfg, init_rng)
    rec = empty_record(len(stream), seed=seed, config=cfg.to_dict())
    start = time.perf_counter()
    glances = stream.glances if stream.protocol == "single-pass" else 1
    try:
        for t in range(len(stream)):
            n_batches = -(-len(stream.tasks[t].train) // stream.batch_size)
            for i, batch in enumerate(stream_batches(stream, t, shuffle_rng)):
                # push each incoming example once: first glance, or first epoch
                first_sight = i % glances == 0 if stream.protocol == "single-pass" else i < n_batches
                if track_alignment and t > 0 and state.buffer is not None and len(state.buffer):
                    probe = state.buffer.sample(cfg.replay_batch, seeded_rng(seed, f"probe/{rec.n_updates}"))
                    rec.alignments.append(grad_alignment(state.net, state.theta, probe, batch))
                apply_update(state, batch, cfg, samp_rng)
                rec.n_updates += 1
                if state.buffer is not None and first_sight:
                    for ex in batch:
                        state.buffer.push(ex, buf_rng)
                if not np.all(np.isfinite(state.theta)):
                    raise NonFiniteError(f"parameters became non-finite on task {t}")
                if eval_every and rec.n_updates % eval_every == 0:
                    rec.curve.append({"update": rec.n_updates, "task": t, "acc": evaluate(state.net, state.theta, stream, t)})
            rec.acc[t, : t + 1] = evaluate(state.net, state.theta, stream, t)
            if track_old_task_alignment:
                val = old_task_alignment(state.net, state.theta, state.buffer, t) if state.buffer is not None else float("nan")
                rec.old_task_alignment.append(val)
    except NonFiniteError as exc:
        rec.error = str(exc)
    rec.wall_time_s = time.perf_counter() - start
    return rec
