"""Fused MLP loss/gradient kernels.

Two interchangeable implementations of the same math live here:

* a numba ``@njit`` path that runs the whole forward + backward pass of the
  ReLU MLP in one compiled call (the trainers call this thousands of times on
  1- to 20-row batches, where Python dispatch dominates), and
* a vectorised pure-numpy path.

Set ``LAMAML_DISABLE_NUMBA=1`` to force the numpy path.  When numba is not
importable the numpy path is used silently.

Parameter layout (shared with :mod:`lamaml.nn`): for each layer ``l`` the
weight matrix of shape ``(n_in, n_out)`` in row-major order, followed by the
bias of length ``n_out``.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("LAMAML_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by LAMAML_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# numpy path


def np_logits(flat, sizes, X):
    a = X
    off = 0
    n_layers = len(sizes) - 1
    for layer in range(n_layers):
        n_in, n_out = sizes[layer], sizes[layer + 1]
        W = flat[off : off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        b = flat[off : off + n_out]
        off += n_out
        z = a @ W + b
        a = np.maximum(z, 0.0) if layer < n_layers - 1 else z
    return a


def np_loss_grad(flat, sizes, X, y, grad):
    """Mean cross-entropy over the rows of ``X``; writes the mean gradient into ``grad``."""
    n_layers = len(sizes) - 1
    acts = [X]
    offsets = []
    off = 0
    a = X
    for layer in range(n_layers):
        n_in, n_out = sizes[layer], sizes[layer + 1]
        W = flat[off : off + n_in * n_out].reshape(n_in, n_out)
        b = flat[off + n_in * n_out : off + n_in * n_out + n_out]
        offsets.append(off)
        off += n_in * n_out + n_out
        z = a @ W + b
        a = np.maximum(z, 0.0) if layer < n_layers - 1 else z
        acts.append(a)

    logits = acts[-1]
    B = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(lse - shifted[rows, y]))

    delta = np.exp(shifted - lse[:, None])
    delta[rows, y] -= 1.0
    delta /= B
    for layer in range(n_layers - 1, -1, -1):
        n_in, n_out = sizes[layer], sizes[layer + 1]
        o = offsets[layer]
        grad[o : o + n_in * n_out] = (acts[layer].T @ delta).ravel()
        grad[o + n_in * n_out : o + n_in * n_out + n_out] = delta.sum(axis=0)
        if layer > 0:
            W = flat[o : o + n_in * n_out].reshape(n_in, n_out)
            # ReLU subgradient at exactly 0 is taken as 0
            delta = (delta @ W.T) * (acts[layer] > 0.0)
    return loss


# --------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:
    # Loops index 2-D views with range-derived indices only; computed flat
    # offsets defeat LLVM's vectoriser (negative-index wraparound checks).

    @njit(cache=True, nogil=True)
    def _nb_affine(a, W, b, relu):
        # z = a @ W + b.  Row-of-W outer loop: each weight row is read once and
        # skipped when its input column is zero (blank pixels, inactive ReLUs).
        B = a.shape[0]
        n_in, n_out = W.shape
        z = np.empty((B, n_out))
        for r in range(B):
            z[r, :] = b
        for i in range(n_in):
            for r in range(B):
                v = a[r, i]
                if v != 0.0:
                    for c in range(n_out):
                        z[r, c] += v * W[i, c]
        if relu:
            for r in range(B):
                for c in range(n_out):
                    if z[r, c] < 0.0:
                        z[r, c] = 0.0
        return z

    @njit(cache=True, nogil=True)
    def _nb_logits(flat, sizes, X):
        n_layers = sizes.shape[0] - 1
        a = X
        off = 0
        for layer in range(n_layers):
            n_in = sizes[layer]
            n_out = sizes[layer + 1]
            W = flat[off : off + n_in * n_out].reshape((n_in, n_out))
            b = flat[off + n_in * n_out : off + n_in * n_out + n_out]
            a = _nb_affine(a, W, b, layer < n_layers - 1)
            off += n_in * n_out + n_out
        return a

    @njit(cache=True, nogil=True)
    def _nb_loss_grad(flat, sizes, X, y, grad):
        n_layers = sizes.shape[0] - 1
        B = X.shape[0]
        acts = [X]
        offsets = np.empty(n_layers, dtype=np.int64)
        off = 0
        a = X
        for layer in range(n_layers):
            n_in = sizes[layer]
            n_out = sizes[layer + 1]
            offsets[layer] = off
            W = flat[off : off + n_in * n_out].reshape((n_in, n_out))
            b = flat[off + n_in * n_out : off + n_in * n_out + n_out]
            a = _nb_affine(a, W, b, layer < n_layers - 1)
            off += n_in * n_out + n_out
            acts.append(a)

        logits = acts[n_layers]
        C = logits.shape[1]
        delta = np.empty((B, C))
        loss = 0.0
        for r in range(B):
            m = logits[r, 0]
            for c in range(1, C):
                if logits[r, c] > m:
                    m = logits[r, c]
            s = 0.0
            for c in range(C):
                e = np.exp(logits[r, c] - m)
                delta[r, c] = e
                s += e
            loss += np.log(s) - (logits[r, y[r]] - m)
            for c in range(C):
                delta[r, c] = delta[r, c] / s / B
            delta[r, y[r]] -= 1.0 / B
        loss /= B

        for layer in range(n_layers - 1, -1, -1):
            n_in = sizes[layer]
            n_out = sizes[layer + 1]
            o = offsets[layer]
            h = acts[layer]
            W = flat[o : o + n_in * n_out].reshape((n_in, n_out))
            gW = grad[o : o + n_in * n_out].reshape((n_in, n_out))
            gb = grad[o + n_in * n_out : o + n_in * n_out + n_out]
            for c in range(n_out):
                acc = 0.0
                for r in range(B):
                    acc += delta[r, c]
                gb[c] = acc
            prev = np.zeros((B, n_in))
            for i in range(n_in):
                for c in range(n_out):
                    gW[i, c] = 0.0
                for r in range(B):
                    v = h[r, i]
                    if v != 0.0:
                        for c in range(n_out):
                            gW[i, c] += v * delta[r, c]
                        if layer > 0:
                            # v > 0, so the ReLU passes the gradient (subgradient 0 at 0)
                            acc = 0.0
                            for c in range(n_out):
                                acc += W[i, c] * delta[r, c]
                            prev[r, i] = acc
            delta = prev
        return loss

    def logits(flat, sizes, X):
        return _nb_logits(flat, sizes, X)

    # Above this many rows the sparse loops lose to BLAS matmuls.
    SMALL_BATCH = 4

    def loss_grad(flat, sizes, X, y, grad):
        if X.shape[0] > SMALL_BATCH:
            return np_loss_grad(flat, sizes, X, y, grad)
        return float(_nb_loss_grad(flat, sizes, X, y, grad))

else:
    logits = np_logits
    loss_grad = np_loss_grad
