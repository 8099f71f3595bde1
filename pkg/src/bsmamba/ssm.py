"""Selective state-space scan over 1-D token sequences.

The recurrence (per batch b, channel c, state n):

    h_t = exp(dt_t[c] * A[c,n]) * h_{t-1} + dt_t[c] * B_t[n] * x_t[c]
    y_t[c] = sum_n C_t[n] * h_t[c,n] + D[c] * x_t[c],   h_0 = 0

with input-dependent dt (softplus of a linear projection), B, C (linear
projections) and diagonal input-independent A = -exp(log_a) < 0. The hot
loops are numba-jitted when numba is importable; a vectorized numpy path
is kept as fallback. selective_scan_oracle is a deliberately naive scalar
re-implementation used to pin the fast paths down in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import (Tensor, exp, gather_tokens, invert_permutation, matmul,
                     neg, scatter_tokens, softplus)

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    _HAVE_NUMBA = False


class ScanCounter:
    """Counts 1-D scan traversals in the current forward pass."""

    def __init__(self):
        self.count = 0

    def reset(self) -> None:
        self.count = 0

    def increment(self, n: int = 1) -> None:
        self.count += n


scan_counter = ScanCounter()


# -- kernels -------------------------------------------------------------------


def _scan_forward_np(x, dt, a, bm, cm, d):
    bsz, length, ch = x.shape
    n = a.shape[1]
    abar = np.exp(dt[:, :, :, None] * a[None, None, :, :])
    dbx = (dt * x)[:, :, :, None] * bm[:, :, None, :]
    hs = np.empty((bsz, length, ch, n), dtype=x.dtype)
    h = np.zeros((bsz, ch, n), dtype=x.dtype)
    for t in range(length):
        np.multiply(h, abar[:, t], out=h)
        h += dbx[:, t]
        hs[:, t] = h
    y = np.einsum("blcn,bln->blc", hs, cm) + d[None, None, :] * x
    return y, hs, abar


def _scan_backward_np(g, x, dt, a, bm, cm, d, hs, abar):
    bsz, length, ch = x.shape
    n = a.shape[1]
    gh_all = np.empty((bsz, length, ch, n), dtype=x.dtype)
    direct = g[:, :, :, None] * cm[:, :, None, :]
    gh = np.zeros((bsz, ch, n), dtype=x.dtype)
    for t in range(length - 1, -1, -1):
        gh += direct[:, t]
        gh_all[:, t] = gh
        gh = gh * abar[:, t]
    hprev = np.concatenate([np.zeros((bsz, 1, ch, n), dtype=x.dtype), hs[:, :-1]], axis=1)
    gabar = gh_all * hprev * abar
    ga = np.einsum("blcn,blc->cn", gabar, dt)
    e = np.einsum("blcn,bln->blc", gh_all, bm)
    gdt = np.einsum("blcn,cn->blc", gabar, a) + e * x
    gbm = np.einsum("blcn,blc->bln", gh_all, dt * x)
    gcm = np.einsum("blc,blcn->bln", g, hs)
    gx = e * dt + d[None, None, :] * g
    gd = np.einsum("blc,blc->c", g, x)
    return gx, gdt, ga, gbm, gcm, gd


def _scan_forward_loops(x, dt, a, bm, cm, d):
    bsz, length, ch = x.shape
    n = a.shape[1]
    y = np.empty((bsz, length, ch), dtype=x.dtype)
    hs = np.empty((bsz, length, ch, n), dtype=x.dtype)
    abar = np.empty((bsz, length, ch, n), dtype=x.dtype)
    for b in range(bsz):
        h = np.zeros((ch, n), dtype=x.dtype)
        for t in range(length):
            for c in range(ch):
                dtv = dt[b, t, c]
                dx = dtv * x[b, t, c]
                acc = 0.0
                for k in range(n):
                    ab = np.exp(dtv * a[c, k])
                    abar[b, t, c, k] = ab
                    hv = ab * h[c, k] + dx * bm[b, t, k]
                    h[c, k] = hv
                    hs[b, t, c, k] = hv
                    acc += cm[b, t, k] * hv
                y[b, t, c] = acc + d[c] * x[b, t, c]
    return y, hs, abar


def _scan_backward_loops(g, x, dt, a, bm, cm, d, hs, abar):
    bsz, length, ch = x.shape
    n = a.shape[1]
    gx = np.zeros_like(x)
    gdt = np.zeros_like(dt)
    ga = np.zeros_like(a)
    gbm = np.zeros_like(bm)
    gcm = np.zeros_like(cm)
    gd = np.zeros_like(d)
    for b in range(bsz):
        gh = np.zeros((ch, n), dtype=x.dtype)
        for t in range(length - 1, -1, -1):
            for c in range(ch):
                gv = g[b, t, c]
                dtv = dt[b, t, c]
                xv = x[b, t, c]
                gd[c] += gv * xv
                gx[b, t, c] += d[c] * gv
                acc_dt = 0.0
                acc_x = 0.0
                for k in range(n):
                    ghv = gh[c, k] + gv * cm[b, t, k]
                    gcm[b, t, k] += gv * hs[b, t, c, k]
                    ab = abar[b, t, c, k]
                    hprev = hs[b, t - 1, c, k] if t > 0 else 0.0
                    gab = ghv * hprev
                    ga[c, k] += gab * ab * dtv
                    acc_dt += gab * ab * a[c, k] + ghv * bm[b, t, k] * xv
                    gbm[b, t, k] += ghv * dtv * xv
                    acc_x += ghv * dtv * bm[b, t, k]
                    gh[c, k] = ghv * ab
                gdt[b, t, c] += acc_dt
                gx[b, t, c] += acc_x
    return gx, gdt, ga, gbm, gcm, gd


if _HAVE_NUMBA:
    _scan_forward_fast = numba.njit(cache=True)(_scan_forward_loops)
    _scan_backward_fast = numba.njit(cache=True)(_scan_backward_loops)
else:  # pragma: no cover
    _scan_forward_fast = _scan_forward_np
    _scan_backward_fast = _scan_backward_np


# -- tape op -------------------------------------------------------------------


def scan_recurrence(x: Tensor, dt: Tensor, a: Tensor, bm: Tensor, cm: Tensor,
                    d: Tensor) -> Tensor:
    """Differentiable scan over [B,L,C] given already-projected parameters."""
    if x.ndim != 3:
        raise ShapeError(f"scan: need [B,L,C] input, got {x.shape}")
    bsz, length, ch = x.shape
    if length < 1:
        raise ShapeError("scan: sequence length must be >= 1")
    n = a.shape[-1]
    if a.shape != (ch, n) or bm.shape != (bsz, length, n) or cm.shape != (bsz, length, n):
        raise ShapeError(
            f"scan: parameter shapes A{a.shape} B{bm.shape} C{cm.shape} "
            f"do not match input {x.shape}")
    if dt.shape != x.shape or d.shape != (ch,):
        raise ShapeError(f"scan: dt{dt.shape}/D{d.shape} do not match input {x.shape}")

    y, hs, abar = _scan_forward_fast(x.data, dt.data, a.data, bm.data, cm.data, d.data)
    if not np.isfinite(y).all():
        raise NumericError("non-finite values produced by op 'scan'")

    def vjp(g):
        return _scan_backward_fast(np.ascontiguousarray(g), x.data, dt.data,
                                   a.data, bm.data, cm.data, d.data, hs, abar)

    scan_counter.increment(1)
    return Tensor._from_op(y, (x, dt, a, bm, cm, d), vjp, "scan", check=False)


# -- parameter bundle ------------------------------------------------------------


@dataclass
class SsmParams:
    """Trainable parameters of one scan. A = -exp(log_a) stays negative."""

    log_a: Tensor  # [C, N]
    w_dt: Tensor   # [C, C]
    b_dt: Tensor   # [C]
    w_b: Tensor    # [C, N]
    w_c: Tensor    # [C, N]
    skip: Tensor   # [C]

    @property
    def state_dim(self) -> int:
        return self.log_a.shape[1]

    @property
    def channels(self) -> int:
        return self.log_a.shape[0]

    def named(self, prefix: str):
        yield f"{prefix}.log_a", self.log_a
        yield f"{prefix}.w_dt", self.w_dt
        yield f"{prefix}.b_dt", self.b_dt
        yield f"{prefix}.w_b", self.w_b
        yield f"{prefix}.w_c", self.w_c
        yield f"{prefix}.skip", self.skip


def init_ssm_params(channels: int, state_dim: int, rng: np.random.Generator) -> SsmParams:
    bound = 1.0 / np.sqrt(channels)
    log_a = np.log(np.broadcast_to(np.arange(1, state_dim + 1, dtype=np.float64),
                                   (channels, state_dim)).copy())
    dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=channels))
    b_dt = dt + np.log(-np.expm1(-dt))  # inverse softplus
    return SsmParams(
        log_a=Tensor(log_a, requires_grad=True),
        w_dt=Tensor(rng.uniform(-bound, bound, (channels, channels)) * 0.1, requires_grad=True),
        b_dt=Tensor(b_dt, requires_grad=True),
        w_b=Tensor(rng.uniform(-bound, bound, (channels, state_dim)), requires_grad=True),
        w_c=Tensor(rng.uniform(-bound, bound, (channels, state_dim)), requires_grad=True),
        skip=Tensor(np.ones(channels), requires_grad=True),
    )


def selective_scan(x: Tensor, params: SsmParams) -> Tensor:
    """Input-dependent selective scan of a [B,L,C] token sequence."""
    dt = softplus(matmul(x, params.w_dt) + params.b_dt)
    bm = matmul(x, params.w_b)
    cm = matmul(x, params.w_c)
    a = neg(exp(params.log_a))
    return scan_recurrence(x, dt, a, bm, cm, params.skip)


def selective_scan_oracle(x: np.ndarray, dt: np.ndarray, a: np.ndarray,
                          bm: np.ndarray, cm: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Naive scalar recurrence; the reference the fast paths are tested against."""
    bsz, length, ch = x.shape
    n = a.shape[1]
    y = np.zeros((bsz, length, ch), dtype=np.float64)
    for b in range(bsz):
        for c in range(ch):
            h = [0.0] * n
            for t in range(length):
                total = 0.0
                for k in range(n):
                    abar = float(np.exp(dt[b, t, c] * a[c, k]))
                    h[k] = abar * h[k] + dt[b, t, c] * bm[b, t, k] * x[b, t, c]
                    total += cm[b, t, k] * h[k]
                y[b, t, c] = total + d[c] * x[b, t, c]
    return y


# -- four-direction baseline -------------------------------------------------------


def raster_permutations(h: int, w: int) -> list[np.ndarray]:
    """Row-major fwd/rev and column-major fwd/rev orders over an h*w grid."""
    rows = np.arange(h * w, dtype=np.int64)
    cols = np.arange(h * w, dtype=np.int64).reshape(h, w).T.reshape(-1)
    return [rows, rows[::-1].copy(), cols, cols[::-1].copy()]


def ss2d_vanilla(x: Tensor, params: list[SsmParams]) -> Tensor:
    """Four-pass baseline: scan along each raster direction and sum."""
    if x.ndim != 4:
        raise ShapeError(f"ss2d: need [B,C,H,W] input, got {x.shape}")
    if len(params) != 4:
        raise ShapeError(f"ss2d: need 4 parameter sets, got {len(params)}")
    b, c, h, w = x.shape
    tokens = x.reshape((b, c, h * w)).transpose(0, 2, 1)
    out = None
    for perm, p in zip(raster_permutations(h, w), params):
        inv = invert_permutation(perm)
        part = scatter_tokens(selective_scan(gather_tokens(tokens, perm), p), inv)
        out = part if out is None else out + part
    return out.transpose(0, 2, 1).reshape((b, c, h, w))
