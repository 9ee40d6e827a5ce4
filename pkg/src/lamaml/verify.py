"""Numerical certificates for the gradient formulas the trainers rely on.

Every check builds a tiny fixture from a seed, compares an analytic quantity
against central finite differences and returns a JSON-serialisable report
with a ``passed`` flag.  ReLU networks are only piecewise smooth, so each
fixture is redrawn until no hidden pre-activation lies within a safety margin
of zero at any point the differences visit.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .algorithms import (
    LrState,
    MetaBatch,
    TrainerConfig,
    inner_loop,
    la_maml_update,
    meta_grad_alpha,
    meta_grads_per_step,
    step_grad_alpha,
)
from .nn import Network, backward, batch_loss, finite_diff_grad, forward, grad_of
from .rng import seeded_rng

TINY = (2, 4, 3)
HYPERGRAD_EPS = 1e-6
HYPERGRAD_TOL = 1e-5
BACKWARD_EPS = 1e-5
BACKWARD_TOL = 1e-6
EQUIV_ALPHAS = (1e-2, 5e-3, 2.5e-3, 1.25e-3)
RATIO_BAND = (3.5, 4.5)
# coordinates smaller than this fraction of the largest one are compared in absolute terms
REL_FLOOR = 1e-3


def _min_abs_preact(net: Network, params, X) -> float:
    _, cache = forward(net, params, X)
    hidden = cache.pre_acts[:-1]
    return min(float(np.min(np.abs(z))) for z in hidden)


def _rel_err(analytic: np.ndarray, oracle: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(oracle))), float(np.max(np.abs(analytic))))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.abs(oracle), REL_FLOOR * scale)
    return float(np.max(np.abs(analytic - oracle) / denom))


# --------------------------------------------------------------------------
# backward vs finite differences


def check_backward(n_fixtures: int = 50, seed: int = 0, eps: float = BACKWARD_EPS) -> dict:
    """Relative L2 error of ``backward`` against central differences on random small nets."""
    rng = seeded_rng(seed, "verify/backward")
    errors = []
    t0 = time.perf_counter()
    while len(errors) < n_fixtures:
        depth = int(rng.integers(1, 3))
        sizes = [int(rng.integers(1, 7))] + [int(rng.integers(1, 7)) for _ in range(depth)] + [int(rng.integers(2, 6))]
        net = Network(tuple(sizes))
        params = net.init_params(rng) + rng.normal(0.0, 0.1, net.n_params)
        x = rng.normal(size=net.input_dim)
        label = int(rng.integers(net.n_classes))
        if _min_abs_preact(net, params, x) < 1e3 * eps:
            continue  # too close to a ReLU kink for differencing
        _, cache = forward(net, params, x)
        g = backward(net, params, cache, label)
        fd = finite_diff_grad(lambda p: batch_loss(net, p, x[None, :], [label]), params, eps)
        denom = max(np.linalg.norm(fd), 1e-300)
        errors.append(float(np.linalg.norm(g - fd) / denom))
    worst = max(errors)
    return {
        "check": "backward",
        "n_fixtures": n_fixtures,
        "max_rel_l2_err": worst,
        "tolerance": BACKWARD_TOL,
        "seconds": time.perf_counter() - t0,
        "passed": worst < BACKWARD_TOL,
    }


# --------------------------------------------------------------------------
# LR hypergradient


@dataclass
class HypergradFixture:
    net: Network
    theta0: np.ndarray
    alpha: np.ndarray
    inner: list
    meta_X: np.ndarray
    meta_y: np.ndarray


def hypergradient_fixture(k: int, seed: int, n_replay: int = 5) -> HypergradFixture:
    """2-4-3 net, ``k`` single-example inner steps and a meta-set of the inner examples plus ``n_replay`` others."""
    net = Network(TINY)
    rng = seeded_rng(seed, f"verify/hypergradient/{k}")
    for _ in range(1000):
        theta0 = net.init_params(rng) + rng.normal(0.0, 0.3, net.n_params)
        alpha = rng.uniform(0.05, 0.3, net.n_params)
        X = rng.normal(size=(k, net.input_dim))
        y = rng.integers(0, net.n_classes, k)
        Xr = rng.normal(size=(n_replay, net.input_dim))
        yr = rng.integers(0, net.n_classes, n_replay)
        inner = [(X[i : i + 1], y[i : i + 1]) for i in range(k)]
        meta_X, meta_y = np.vstack([Xr, X]), np.concatenate([yr, y])
        _, _, per_step = inner_loop(net, theta0, alpha, inner)
        pts = [theta0] + per_step
        if min(_min_abs_preact(net, p, meta_X) for p in pts) > 1e-3:
            return HypergradFixture(net, theta0, alpha, inner, meta_X, meta_y)
    raise RuntimeError("could not draw a kink-free hypergradient fixture")


def first_order_objective(fx: HypergradFixture, traj, mode: str):
    """The meta-loss as a function of α with trajectory gradients held fixed (the first-order semantics)."""
    cum = np.cumsum(traj, axis=0)
    idx = range(len(traj)) if mode == "all-steps" else [len(traj) - 1]

    def f(alpha):
        return float(np.mean([batch_loss(fx.net, fx.theta0 - alpha * cum[i], fx.meta_X, fx.meta_y) for i in idx]))

    return f


def check_hypergradient(k: int, seed: int = 0, mode: str = "all-steps", eps: float = HYPERGRAD_EPS) -> dict:
    """Compare the analytic LR hypergradient with central differences of the first-order unrolled objective."""
    t0 = time.perf_counter()
    fx = hypergradient_fixture(k, seed)
    _, traj, per_step = inner_loop(fx.net, fx.theta0, fx.alpha, fx.inner)
    step_grads = meta_grads_per_step(fx.net, per_step, fx.meta_X, fx.meta_y, mode)
    analytic = step_grad_alpha(step_grads, traj)
    oracle = finite_diff_grad(first_order_objective(fx, traj, mode), fx.alpha, eps)
    err = _rel_err(analytic, oracle)
    zero = step_grad_alpha([np.zeros_like(g) for g in step_grads], traj)
    zero_ok = bool(np.all(zero == 0.0)) and bool(np.all(meta_grad_alpha(np.zeros_like(traj[0]), traj) == 0.0))
    return {
        "check": "hypergradient",
        "k": k,
        "seed": seed,
        "mode": mode,
        "max_rel_err": err,
        "tolerance": HYPERGRAD_TOL,
        "zero_meta_gives_zero": zero_ok,
        "seconds": time.perf_counter() - t0,
        "passed": err < HYPERGRAD_TOL and zero_ok,
    }


# --------------------------------------------------------------------------
# k = 1 equivalence with the replay-alignment surrogate


@dataclass
class EquivalenceFixture:
    net: Network
    theta0: np.ndarray
    batches: list  # one (X, y) per task; the last one is the current task


def equivalence_fixture(seed: int, n_tasks: int = 3, n_per_task: int = 4) -> EquivalenceFixture:
    net = Network(TINY)
    rng = seeded_rng(seed, f"verify/equivalence/{n_tasks}")
    for _ in range(1000):
        theta0 = net.init_params(rng) + rng.normal(0.0, 0.3, net.n_params)
        batches = []
        for t in range(n_tasks):
            shift = rng.normal(0.0, 1.0, net.input_dim)
            batches.append((rng.normal(size=(n_per_task, net.input_dim)) + shift, rng.integers(0, net.n_classes, n_per_task)))
        X_all = np.vstack([b[0] for b in batches])
        theta1 = theta0 - max(EQUIV_ALPHAS) * grad_of(net, theta0, *batches[-1])
        if min(_min_abs_preact(net, p, X_all) for p in (theta0, theta1)) > 0.05:
            return EquivalenceFixture(net, theta0, batches)
    raise RuntimeError("could not draw a kink-free equivalence fixture")


def _meta_objective(fx: EquivalenceFixture, alpha: float):
    net, cur = fx.net, fx.batches[-1]

    def f(theta0):
        theta1 = theta0 - alpha * grad_of(net, theta0, *cur)
        return sum(batch_loss(net, theta1, X, y) for X, y in fx.batches)

    return f


def _surrogate(fx: EquivalenceFixture, alpha: float):
    net, cur = fx.net, fx.batches[-1]

    def f(theta0):
        g_cur = grad_of(net, theta0, *cur)
        loss = sum(batch_loss(net, theta0, X, y) for X, y in fx.batches)
        align = sum(float(np.dot(grad_of(net, theta0, X, y), g_cur)) for X, y in fx.batches)
        return loss - alpha * align

    return f


def check_equivalence_k1(seed: int = 0, alphas=EQUIV_ALPHAS, n_tasks: int = 3, eps: float = BACKWARD_EPS) -> dict:
    """Gradient gap between the one-step meta-objective and its first-order surrogate must shrink like α²."""
    t0 = time.perf_counter()
    alphas = [float(a) for a in alphas]
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be strictly decreasing")
    fx = equivalence_fixture(seed, n_tasks)
    gaps = []
    for a in alphas:
        g1 = finite_diff_grad(_meta_objective(fx, a), fx.theta0, eps)
        g2 = finite_diff_grad(_surrogate(fx, a), fx.theta0, eps)
        gaps.append(float(np.linalg.norm(g1 - g2)))
    ratios = [gaps[i] / gaps[i + 1] for i in range(len(gaps) - 1)]
    g1_0 = finite_diff_grad(_meta_objective(fx, 0.0), fx.theta0, eps)
    g2_0 = finite_diff_grad(_surrogate(fx, 0.0), fx.theta0, eps)
    zero_gap = float(np.linalg.norm(g1_0 - g2_0))
    lo, hi = RATIO_BAND
    return {
        "check": "equivalence_k1",
        "seed": seed,
        "n_tasks": n_tasks,
        "alphas": alphas,
        "discrepancy": gaps,
        "ratios": ratios,
        "band": list(RATIO_BAND),
        "zero_alpha_gap": zero_gap,
        "seconds": time.perf_counter() - t0,
        "passed": all(lo <= r <= hi for r in ratios) and zero_gap == 0.0,
    }


# --------------------------------------------------------------------------
# sign of the LR hypergradient


def _sign_net():
    """2-4-2 net whose head is zero, so the output distribution is exactly uniform.

    Input (1, 0) drives hidden units 0 and 1, input (0, 1) drives units 2 and 3.
    """
    net = Network((2, 4, 2))
    theta = np.zeros(net.n_params)
    (W1, _), _ = net.segments(theta)
    W1[0, :2] = 1.0
    W1[1, 2:] = 1.0
    return net, theta


def _sign_case(name: str, meta_X, meta_y, expect: str, eta: float = 0.5) -> dict:
    net, theta0 = _sign_net()
    inner = [(np.array([[1.0, 0.0]]), np.array([0]))]
    # zero inner LRs keep the fast weights at theta0, so the meta-gradient is taken at the same point as the trajectory
    lr = LrState(np.zeros(net.n_params), alpha_init=0.1, eta=eta)
    _, traj, per_step = inner_loop(net, theta0, lr.alpha, inner)
    g_meta = meta_grads_per_step(net, per_step, meta_X, meta_y, "last-step")[0]
    g_alpha = meta_grad_alpha(g_meta, traj)
    mb = MetaBatch(inner, np.asarray(meta_X, float), np.asarray(meta_y))
    cfg = TrainerConfig(algorithm="lamaml", k=1, batch_size=1, alpha_init=0.1, eta=eta)
    theta_new, lr_new = la_maml_update(net, theta0, lr, mb, cfg)
    moved = lr_new.alpha - lr.alpha
    nz = g_alpha != 0.0
    if expect == "align":
        sign_ok = bool(np.all(g_alpha <= 0.0) and nz.any())
        move_ok = bool(np.all(moved[nz] > 0.0)) and bool(np.all(moved[~nz] == 0.0))
    elif expect == "orthogonal":
        sign_ok = bool(np.all(g_alpha == 0.0))
        move_ok = bool(np.all(moved == 0.0))
    else:
        sign_ok = bool(np.all(g_alpha >= 0.0) and nz.any())
        move_ok = bool(np.all(moved[nz] < 0.0)) and bool(np.all(moved[~nz] == 0.0))
    frozen = lr_new.alpha <= 0.0
    step_ok = bool(np.all(theta_new[frozen] == theta0[frozen]))
    return {
        "fixture": name,
        "g_alpha_min": float(g_alpha.min()),
        "g_alpha_max": float(g_alpha.max()),
        "alpha_change_min": float(moved.min()),
        "alpha_change_max": float(moved.max()),
        "sign_ok": sign_ok,
        "alpha_moves_ok": move_ok,
        "clipped_step_ok": step_ok,
        "passed": sign_ok and move_ok and step_ok,
    }


def check_sign_semantics() -> dict:
    """Aligned, orthogonal and interfering fixtures for the LR hypergradient and one La-MAML update."""
    x_in = [[1.0, 0.0]]
    cases = [
        # the meta-set repeats the inner example: identical gradients
        _sign_case("aligned", np.array(x_in), np.array([0]), "align"),
        # label noise on the other input: gradient lives on hidden units 2-3 and the head bias cancels
        _sign_case("orthogonal", np.array([[0.0, 1.0], [0.0, 2.0]]), np.array([0, 1]), "orthogonal"),
        # the inner example with the other label: with a uniform output the gradient flips sign exactly
        _sign_case("interfering", np.array(x_in), np.array([1]), "interfere"),
    ]
    return {"check": "sign_semantics", "cases": cases, "passed": all(c["passed"] for c in cases)}


# --------------------------------------------------------------------------


def run_all(seeds=(0, 1, 2, 3, 4), ks=(1, 2, 4, 10)) -> dict:
    """Every certificate; the report's ``passed`` is the conjunction of all checks."""
    report = {
        "backward": check_backward(),
        "hypergradient": [check_hypergradient(k, seed=0, mode=m) for m in ("all-steps", "last-step") for k in ks],
        "equivalence_k1": [check_equivalence_k1(seed=s) for s in seeds],
        "equivalence_k1_single_task": check_equivalence_k1(seed=0, n_tasks=1),
        "sign_semantics": check_sign_semantics(),
    }
    flat = [report["backward"], report["equivalence_k1_single_task"], report["sign_semantics"]]
    flat += report["hypergradient"] + report["equivalence_k1"]
    report["passed"] = all(r["passed"] for r in flat)
    return report
