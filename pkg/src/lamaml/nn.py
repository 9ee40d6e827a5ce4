"""Dense ReLU MLP with exact gradients.

Parameters live in one flat float64 vector (a "ParamVector"); learning-rate
vectors and gradients share that shape, so all vector algebra the trainers
need is ordinary numpy arithmetic.  :meth:`Network.segments` gives per-layer
views into the flat vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import _kernels
from .errors import LabelError, NonFiniteError, ShapeError

ParamVector = np.ndarray
Labels = Union[int, Sequence[int], np.ndarray]


@dataclass(frozen=True)
class Network:
    """MLP topology: ``layer_sizes[0]`` inputs, ReLU hidden layers, one linear head."""

    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    sizes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 3:
            raise ShapeError(f"need at least one hidden layer, got layer_sizes={sizes}")
        if any(s <= 0 for s in sizes):
            raise ShapeError(f"layer sizes must be positive, got {sizes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "sizes", np.asarray(sizes, dtype=np.int64))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def depth(self) -> int:
        """Number of affine layers."""
        return len(self.layer_sizes) - 1

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def segments(self, params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer ``(W, b)`` views into ``params``; ``W`` has shape ``(n_in, n_out)``."""
        check_params(self, params)
        out = []
        off = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = params[off : off + n_in * n_out].reshape(n_in, n_out)
            off += n_in * n_out
            out.append((W, params[off : off + n_out]))
            off += n_out
        return out

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
        params = np.zeros(self.n_params)
        for W, _ in self.segments(params):
            bound = 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
        return params


@dataclass
class ForwardCache:
    """Pre-activations and activations of one forward pass (inputs are ``acts[0]``)."""

    pre_acts: list[np.ndarray]
    acts: list[np.ndarray]
    n_params: int

    @property
    def depth(self) -> int:
        return len(self.pre_acts)


def check_params(net: Network, params: ParamVector) -> None:
    if not isinstance(params, np.ndarray) or params.ndim != 1 or params.shape[0] != net.n_params:
        got = getattr(params, "shape", type(params).__name__)
        raise ShapeError(f"expected flat parameter vector of length {net.n_params}, got {got}")


def _as_batch(net: Network, x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"input must have trailing size {net.input_dim}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("non-finite values in input")
    return np.ascontiguousarray(X)


def _as_labels(net: Network, label: Labels, n: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(label)).astype(np.int64)
    if y.ndim != 1 or y.shape[0] != n:
        raise ShapeError(f"expected {n} labels, got shape {np.shape(label)}")
    if np.any(y < 0) or np.any(y >= net.n_classes):
        raise LabelError(f"labels must lie in [0, {net.n_classes}), got {y.tolist()}")
    return y


def _check_finite_params(params: ParamVector) -> None:
    if not np.all(np.isfinite(params)):
        raise NonFiniteError("non-finite values in parameters")


def forward(net: Network, params: ParamVector, x) -> tuple[np.ndarray, ForwardCache]:
    """Logits for one example (1-D ``x``) or a batch (2-D ``x``)."""
    check_params(net, params)
    _check_finite_params(params)
    single = np.ndim(x) == 1
    a = _as_batch(net, x)
    pre_acts, acts = [], [a]
    segs = net.segments(params)
    for i, (W, b) in enumerate(segs):
        z = a @ W + b
        a = np.maximum(z, 0.0) if i < len(segs) - 1 else z
        pre_acts.append(z)
        acts.append(a)
    logits = acts[-1]
    cache = ForwardCache(pre_acts=pre_acts, acts=acts, n_params=net.n_params)
    return (logits[0] if single else logits), cache


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def loss_xent(logits: np.ndarray, label: Labels) -> float:
    """Cross-entropy ``-log softmax(logits)[label]``, averaged over rows for a batch."""
    L = np.asarray(logits, dtype=np.float64)
    if L.ndim == 1:
        L = L[None, :]
    y = np.atleast_1d(np.asarray(label)).astype(np.int64)
    if y.shape[0] != L.shape[0]:
        raise ShapeError(f"{L.shape[0]} rows of logits but {y.shape[0]} labels")
    if np.any(y < 0) or np.any(y >= L.shape[1]):
        raise LabelError(f"labels must lie in [0, {L.shape[1]}), got {y.tolist()}")
    logp = log_softmax(L)
    loss = float(-np.mean(logp[np.arange(L.shape[0]), y]))
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    return loss


def backward(net: Network, params: ParamVector, cache: ForwardCache, label: Labels) -> ParamVector:
    """Gradient of the mean cross-entropy of the cached forward pass."""
    check_params(net, params)
    if cache.depth != net.depth or cache.n_params != net.n_params:
        raise ShapeError("forward cache does not belong to this network")
    logits = cache.acts[-1]
    B = logits.shape[0]
    y = _as_labels(net, label, B)
    delta = softmax(logits)
    delta[np.arange(B), y] -= 1.0
    delta /= B

    grad = np.zeros_like(params)
    gsegs = net.segments(grad)
    psegs = net.segments(params)
    for i in range(net.depth - 1, -1, -1):
        gW, gb = gsegs[i]
        gW[...] = cache.acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ psegs[i][0].T) * (cache.pre_acts[i - 1] > 0.0)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient")
    return grad


def loss_and_grad(net: Network, params: ParamVector, X, y: Labels) -> tuple[float, ParamVector]:
    """Mean loss and its gradient in one fused pass (numba when available)."""
    check_params(net, params)
    _check_finite_params(params)
    Xb = _as_batch(net, X)
    yb = _as_labels(net, y, Xb.shape[0])
    grad = np.empty_like(params)
    loss = _kernels.loss_grad(params, net.sizes, Xb, yb, grad)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NonFiniteError("non-finite loss or gradient")
    return loss, grad


def grad_of(net: Network, params: ParamVector, X, y: Labels) -> ParamVector:
    return loss_and_grad(net, params, X, y)[1]


def batch_logits(net: Network, params: ParamVector, X) -> np.ndarray:
    check_params(net, params)
    _check_finite_params(params)
    return _kernels.logits(params, net.sizes, _as_batch(net, X))


def batch_loss(net: Network, params: ParamVector, X, y: Labels) -> float:
    logits = batch_logits(net, params, X)
    return loss_xent(logits, _as_labels(net, y, logits.shape[0]))


def predict(net: Network, params: ParamVector, X) -> np.ndarray:
    return np.argmax(batch_logits(net, params, X), axis=1)


def accuracy(net: Network, params: ParamVector, X, y) -> float:
    y = np.asarray(y)
    if y.size == 0:
        raise ShapeError("accuracy of an empty set is undefined")
    return float(np.mean(predict(net, params, X) == y))


def finite_diff_grad(lossfn: Callable[[ParamVector], float], params: ParamVector, eps: float = 1e-5) -> ParamVector:
    """Central differences ``(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)`` for every coordinate."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    p = np.array(params, dtype=np.float64)
    grad = np.empty_like(p)
    for i in range(p.shape[0]):
        orig = p[i]
        p[i] = orig + eps
        f_plus = lossfn(p)
        p[i] = orig - eps
        f_minus = lossfn(p)
        p[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"non-finite loss while differencing coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def sgd_step(params: ParamVector, grad: ParamVector, lr) -> ParamVector:
    """``params - lr * grad``; ``lr`` may be a scalar or a per-parameter vector."""
    if np.shape(grad) != np.shape(params):
        raise ShapeError(f"grad shape {np.shape(grad)} != params shape {np.shape(params)}")
    if np.ndim(lr) and np.shape(lr) != np.shape(params):
        raise ShapeError(f"lr shape {np.shape(lr)} != params shape {np.shape(params)}")
    return params - lr * grad


def clip_grad_norm(grad: ParamVector, max_norm: float) -> ParamVector:
    """Rescale ``grad`` to L2 norm ``max_norm`` if it is longer; otherwise return it unchanged."""
    if not max_norm > 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad
