"""Fused elementwise/normalization kernels for the training hot path.

Each op has a numba-jitted version and a numpy fallback with identical
semantics; tensor.py picks whichever is importable. Kernels receive
contiguous flat (or row-major 2-D) views.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*a, **k):
        def deco(f):
            return f
        return deco


@njit(cache=True)
def softplus_fwd(x):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        if v > 0.0:
            out[i] = v + np.log1p(np.exp(-v))
        else:
            out[i] = np.log1p(np.exp(v))
    return out


@njit(cache=True)
def softplus_bwd(g, x):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = g[i] / (1.0 + np.exp(-x[i]))
    return out


@njit(cache=True)
def silu_fwd(x):
    out = np.empty_like(x)
    s = np.empty_like(x)
    for i in range(x.size):
        sv = 1.0 / (1.0 + np.exp(-x[i]))
        s[i] = sv
        out[i] = x[i] * sv
    return out, s


@njit(cache=True)
def silu_bwd(g, x, s):
    out = np.empty_like(x)
    for i in range(x.size):
        sv = s[i]
        out[i] = g[i] * (sv + x[i] * sv * (1.0 - sv))
    return out


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


@njit(cache=True)
def gelu_fwd(x):
    out = np.empty_like(x)
    t = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        tv = np.tanh(_GELU_C * (v + 0.044715 * v * v * v))
        t[i] = tv
        out[i] = 0.5 * v * (1.0 + tv)
    return out, t


@njit(cache=True)
def gelu_bwd(g, x, t):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        tv = t[i]
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        out[i] = g[i] * (0.5 * (1.0 + tv) + 0.5 * v * (1.0 - tv * tv) * du)
    return out


@njit(cache=True)
def layer_norm_fwd(x, gamma, beta, eps):
    rows, c = x.shape
    out = np.empty_like(x)
    xh = np.empty_like(x)
    inv = np.empty(rows, dtype=x.dtype)
    for r in range(rows):
        mu = 0.0
        for j in range(c):
            mu += x[r, j]
        mu /= c
        var = 0.0
        for j in range(c):
            d = x[r, j] - mu
            var += d * d
        var /= c
        iv = 1.0 / np.sqrt(var + eps)
        inv[r] = iv
        for j in range(c):
            h = (x[r, j] - mu) * iv
            xh[r, j] = h
            out[r, j] = h * gamma[j] + beta[j]
    return out, xh, inv


@njit(cache=True)
def layer_norm_bwd(g, xh, inv, gamma):
    rows, c = g.shape
    gx = np.empty_like(g)
    ggamma = np.zeros(c, dtype=g.dtype)
    gbeta = np.zeros(c, dtype=g.dtype)
    for r in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(c):
            gh = g[r, j] * gamma[j]
            m1 += gh
            m2 += gh * xh[r, j]
            ggamma[j] += g[r, j] * xh[r, j]
            gbeta[j] += g[r, j]
        m1 /= c
        m2 /= c
        iv = inv[r]
        for j in range(c):
            gh = g[r, j] * gamma[j]
            gx[r, j] = iv * (gh - m1 - xh[r, j] * m2)
    return gx, ggamma, gbeta


# -- numpy fallbacks ---------------------------------------------------------


def softplus_fwd_np(x):
    return np.logaddexp(0.0, x)


def softplus_bwd_np(g, x):
    return g * (0.5 * (1.0 + np.tanh(0.5 * x)))


def silu_fwd_np(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return x * s, s


def silu_bwd_np(g, x, s):
    return g * (s + x * s * (1.0 - s))


def gelu_fwd_np(x):
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    return 0.5 * x * (1.0 + t), t


def gelu_bwd_np(g, x, t):
    du = _GELU_C * (1.0 + 3.0 * 0.044715 * (x * x))
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def layer_norm_fwd_np(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    return xh * gamma + beta, xh, inv[..., 0]


def layer_norm_bwd_np(g, xh, inv, gamma):
    gh = g * gamma
    ggamma = (g * xh).sum(axis=0)
    gbeta = g.sum(axis=0)
    m1 = gh.mean(axis=-1, keepdims=True)
    m2 = (gh * xh).mean(axis=-1, keepdims=True)
    gx = inv[..., None] * (gh - m1 - xh * m2)
    return gx, ggamma, gbeta
