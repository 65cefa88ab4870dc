"""Hot numeric kernels, each with a numba-jitted version and a pure-numpy twin.

Backend selection via the ABSANET_NUMBA env var, read at import time:
  "auto" (default) - use numba when importable, else numpy
  "1"              - require numba, ImportError if missing
  "0"              - force the pure-numpy path

Matmul is not here: numpy already dispatches it to BLAS, which numba cannot beat.
All kernels take/return contiguous float64 arrays. `benchmarks/bench_kernels.py`
times the two paths against each other.
"""
import os

import numpy as np

_MODE = os.environ.get("ABSANET_NUMBA", "auto").strip().lower()
if _MODE not in ("auto", "0", "1"):
    raise ValueError(f"ABSANET_NUMBA must be 'auto', '0', or '1', got {_MODE!r}")

HAS_NUMBA = False
if _MODE != "0":
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:
        if _MODE == "1":
            raise ImportError("ABSANET_NUMBA=1 but numba is not installed")

USE_NUMBA = HAS_NUMBA and _MODE != "0"


# ---------------------------------------------------------------------------
# pure-numpy twins
# ---------------------------------------------------------------------------

def softmax_fwd_np(x, valid):
    """Row softmax of x (R, C); invalid columns get probability exactly 0.

    Callers guarantee every row has at least one valid column.
    """
    neg = np.where(valid, x, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    e = np.exp(neg - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd_np(y, gy):
    # dx = y * (gy - sum_j y_j gy_j); masked columns have y == 0 and stay 0
    dot = (y * gy).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layernorm_fwd_np(x, gain, bias, eps):
    """Row-wise layer norm of x (R, D); returns (y, mean, rstd)."""
    mean = x.mean(axis=1)
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gain + bias, mean, rstd


def layernorm_bwd_np(x, gy, gain, mean, rstd):
    """Returns (dx, dgain, dbias) for layernorm_fwd."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgain = (gy * xhat).sum(axis=0)
    dbias = gy.sum(axis=0)
    dxhat = gy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def embedding_bwd_np(ids, gy, gw):
    """Scatter-add rows of gy (N, D) into gw (V, D) at ids (N,)."""
    np.add.at(gw, ids, gy)


def adam_step_np(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2, wd):
    """Fused AdamW update on flat float64 views, in place.

    bc1/bc2 are the bias-correction denominators (1 - beta^t); wd is the
    decoupled weight-decay coefficient (0 for non-decayed parameters).
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * ((m / bc1) / (np.sqrt(v / bc2) + eps) + wd * p)


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def softmax_fwd_nb(x, valid):
        rows, cols = x.shape
        out = np.empty((rows, cols))
        for r in range(rows):
            m = -np.inf
            for c in range(cols):
                if valid[r, c] and x[r, c] > m:
                    m = x[r, c]
            s = 0.0
            for c in range(cols):
                if valid[r, c]:
                    e = np.exp(x[r, c] - m)
                    out[r, c] = e
                    s += e
                else:
                    out[r, c] = 0.0
            for c in range(cols):
                out[r, c] /= s
        return out

    @njit(cache=True)
    def softmax_bwd_nb(y, gy):
        rows, cols = y.shape
        out = np.empty((rows, cols))
        for r in range(rows):
            dot = 0.0
            for c in range(cols):
                dot += y[r, c] * gy[r, c]
            for c in range(cols):
                out[r, c] = y[r, c] * (gy[r, c] - dot)
        return out

    @njit(cache=True)
    def layernorm_fwd_nb(x, gain, bias, eps):
        rows, d = x.shape
        y = np.empty((rows, d))
        mean = np.empty(rows)
        rstd = np.empty(rows)
        for r in range(rows):
            mu = 0.0
            for c in range(d):
                mu += x[r, c]
            mu /= d
            var = 0.0
            for c in range(d):
                diff = x[r, c] - mu
                var += diff * diff
            var /= d
            rs = 1.0 / np.sqrt(var + eps)
            mean[r] = mu
            rstd[r] = rs
            for c in range(d):
                y[r, c] = (x[r, c] - mu) * rs * gain[c] + bias[c]
        return y, mean, rstd

    @njit(cache=True)
    def layernorm_bwd_nb(x, gy, gain, mean, rstd):
        rows, d = x.shape
        dx = np.empty((rows, d))
        dgain = np.zeros(d)
        dbias = np.zeros(d)
        for r in range(rows):
            m1 = 0.0
            m2 = 0.0
            for c in range(d):
                xhat = (x[r, c] - mean[r]) * rstd[r]
                dxh = gy[r, c] * gain[c]
                dgain[c] += gy[r, c] * xhat
                dbias[c] += gy[r, c]
                m1 += dxh
                m2 += dxh * xhat
            m1 /= d
            m2 /= d
            for c in range(d):
                xhat = (x[r, c] - mean[r]) * rstd[r]
                dxh = gy[r, c] * gain[c]
                dx[r, c] = rstd[r] * (dxh - m1 - xhat * m2)
        return dx, dgain, dbias

    @njit(cache=True)
    def embedding_bwd_nb(ids, gy, gw):
        n, d = gy.shape
        for i in range(n):
            row = ids[i]
            for c in range(d):
                gw[row, c] += gy[i, c]

    @njit(cache=True)
    def adam_step_nb(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2, wd):
        for i in range(p.shape[0]):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            p[i] -= lr * ((m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps) + wd * p[i])


# ---------------------------------------------------------------------------
# active backend
# ---------------------------------------------------------------------------

if USE_NUMBA:
    softmax_fwd = softmax_fwd_nb
    softmax_bwd = softmax_bwd_nb
    layernorm_fwd = layernorm_fwd_nb
    layernorm_bwd = layernorm_bwd_nb
    embedding_bwd = embedding_bwd_nb
    adam_step = adam_step_nb
    BACKEND = "numba"
else:
    softmax_fwd = softmax_fwd_np
    softmax_bwd = softmax_bwd_np
    layernorm_fwd = layernorm_fwd_np
    layernorm_bwd = layernorm_bwd_np
    embedding_bwd = embedding_bwd_np
    adam_step = adam_step_np
    BACKEND = "numpy"
