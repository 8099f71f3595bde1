"""Training objective and evaluation metrics.

total = l1 * L1 + ssim * (1 - SSIM) + edge * BCE(soft_edge(pred), canny(gt))

The prediction side of the edge term uses a differentiable Sobel-magnitude
surrogate; the target side uses the (non-differentiable) reference Canny
extractor, which is also what evaluation and tests use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import (Tensor, clamp, concat, conv2d, log, narrow, reduce_max,
                     reduce_mean, reflect_pad2d, split)

BT601 = (0.299, 0.587, 0.114)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(xs[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _gaussian_1d(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-xs ** 2 / (2.0 * sigma * sigma))
    return g / g.sum()

GAUSS5 = _gaussian_kernel(5, 1.4)       # blur ahead of edge extraction
GAUSS11 = _gaussian_kernel(11, 1.5)     # SSIM window
GAUSS5_1D = _gaussian_1d(5, 1.4)
GAUSS11_1D = _gaussian_1d(11, 1.5)
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass
class LossWeights:
    l1: float = 1.0
    ssim: float = 0.5
    edge: float = 0.1

    def __post_init__(self):
        for name in ("l1", "ssim", "edge"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ShapeError(f"loss weight {name}={v} must be finite and non-negative")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.l1, self.ssim, self.edge)


def _check_pair(pred: Tensor, gt: Tensor, op: str) -> None:
    if pred.shape != gt.shape:
        raise ShapeError(f"{op}: shapes {pred.shape} and {gt.shape} differ")


def _depthwise(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Valid same-kernel convolution applied to every channel independently."""
    b, c, h, w = x.shape
    k = Tensor(kernel.reshape(1, 1, *kernel.shape), dtype=x.data.dtype.type)
    y = conv2d(x.reshape((b * c, 1, h, w)), k)
    return y.reshape((b, c) + y.shape[-2:])


def _depthwise_separable(x: Tensor, k1d: np.ndarray) -> Tensor:
    """Valid separable (outer-product) filter, column pass then row pass."""
    b, c, h, w = x.shape
    kcol = Tensor(k1d.reshape(1, 1, -1, 1), dtype=x.data.dtype.type)
    krow = Tensor(k1d.reshape(1, 1, 1, -1), dtype=x.data.dtype.type)
    y = conv2d(conv2d(x.reshape((b * c, 1, h, w)), kcol), krow)
    return y.reshape((b, c) + y.shape[-2:])


def _to_gray(x: Tensor) -> Tensor:
    if x.shape[1] == 1:
        return x
    if x.shape[1] != 3:
        raise ShapeError(f"expected 1- or 3-channel images, got {x.shape}")
    r = narrow(x, 1, 0, 1)
    g = narrow(x, 1, 1, 1)
    b = narrow(x, 1, 2, 1)
    return r * BT601[0] + g * BT601[1] + b * BT601[2]


# -- loss terms ---------------------------------------------------------------


def l1_loss(pred: Tensor, gt: Tensor) -> Tensor:
    _check_pair(pred, gt, "l1_loss")
    return reduce_mean(_absolute(pred - gt))


def _absolute(t: Tensor) -> Tensor:
    # |x| via clamp pair keeps the vjp exact at x != 0
    return clamp(t, lo=0.0) + clamp(-t, lo=0.0)


SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def ssim(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean SSIM index over an 11x11 Gaussian window (valid region)."""
    _check_pair(pred, gt, "ssim")
    if pred.ndim != 4:
        raise ShapeError(f"ssim: need [B,C,H,W] images, got {pred.shape}")
    h, w = pred.shape[-2:]
    if h < 11 or w < 11:
        raise ShapeError(f"ssim: image {h}x{w} smaller than the 11x11 window")
    stacked = concat([pred, gt, pred * pred, gt * gt, pred * gt], axis=0)
    mu_x, mu_y, exx, eyy, exy = split(_depthwise_separable(stacked, GAUSS11_1D), 5, axis=0)
    var_x = exx - mu_x * mu_x
    var_y = eyy - mu_y * mu_y
    cov = exy - mu_x * mu_y
    num = (mu_x * mu_y * 2.0 + SSIM_C1) * (cov * 2.0 + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return reduce_mean(num / den)


def ssim_loss(pred: Tensor, gt: Tensor) -> Tensor:
    return 1.0 - ssim(pred, gt)


_EDGE_EPS = 1e-6


def soft_edge(image: Tensor) -> Tensor:
    """Differentiable edge map: blur, Sobel magnitude, per-image max norm."""
    gray = _to_gray(image)
    blurred = _depthwise_separable(reflect_pad2d(gray, 2), GAUSS5_1D)
    gx = _depthwise(reflect_pad2d(blurred, 1), SOBEL_X)
    gy = _depthwise(reflect_pad2d(blurred, 1), SOBEL_Y)
    mag = (gx * gx + gy * gy + _EDGE_EPS ** 2) ** 0.5 - _EDGE_EPS
    peak = reduce_max(mag, axis=(1, 2, 3), keepdims=True)
    return mag / (peak + 1e-8)


def canny_reference(image) -> np.ndarray:
    """Reference Canny: blur, Sobel, 4-direction NMS, hysteresis. Binary [H,W].

    Thresholds are 0.1/0.2 of the max gradient magnitude.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = BT601[0] * arr[0] + BT601[1] * arr[1] + BT601[2] * arr[2]
    if arr.ndim != 2:
        raise ShapeError(f"canny_reference: expected [H,W] or [3,H,W], got {arr.shape}")

    blurred = _np_filter(arr, GAUSS5)
    gx = _np_filter(blurred, SOBEL_X)
    gy = _np_filter(blurred, SOBEL_Y)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0:
        return np.zeros_like(arr, dtype=np.uint8)

    nms = _non_maximum_suppression(mag, gx, gy)
    low, high = 0.1 * peak, 0.2 * peak
    strong = nms >= high
    weak = nms >= low
    return _hysteresis(strong, weak).astype(np.uint8)


def _np_filter(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = kernel.shape[0] // 2
    padded = np.pad(arr, r, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, kernel.shape)
    return np.einsum("hwij,ij->hw", win, kernel)


def _non_maximum_suppression(mag, gx, gy):
    angle = (np.rad2deg(np.arctan2(gy, gx)) + 180.0) % 180.0
    padded = np.pad(mag, 1)
    center = padded[1:-1, 1:-1]
    east, west = padded[1:-1, 2:], padded[1:-1, :-2]
    south, north = padded[2:, 1:-1], padded[:-2, 1:-1]
    ne, sw = padded[:-2, 2:], padded[2:, :-2]
    nw, se = padded[:-2, :-2], padded[2:, 2:]

    d0 = (angle < 22.5) | (angle >= 157.5)           # horizontal gradient
    d45 = (angle >= 22.5) & (angle < 67.5)
    d90 = (angle >= 67.5) & (angle < 112.5)          # vertical gradient
    d135 = (angle >= 112.5) & (angle < 157.5)

    # ties broken by keeping the >= prev / > next side so plateau edges thin
    # to a single pixel
    keep = np.zeros_like(mag, dtype=bool)
    keep |= d0 & (center >= west) & (center > east)
    keep |= d45 & (center >= sw) & (center > ne)
    keep |= d90 & (center >= north) & (center > south)
    keep |= d135 & (center >= nw) & (center > se)
    return np.where(keep, mag, 0.0)


def _hysteresis(strong: np.ndarray, weak: np.ndarray) -> np.ndarray:
    cur = strong.copy()
    while True:
        grown = _dilate8(cur) & weak
        if np.array_equal(grown, cur):
            return cur
        cur = grown


def _dilate8(m: np.ndarray) -> np.ndarray:
    p = np.pad(m, 1)
    out = m.copy()
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            out |= p[1 + dr:p.shape[0] - 1 + dr, 1 + dc:p.shape[1] - 1 + dc]
    return out


def edge_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """BCE between the soft edge map of pred and the Canny map of gt."""
    _check_pair(pred, gt, "edge_loss")
    soft = soft_edge(pred)
    targets = np.stack([canny_reference(gt.data[i]) for i in range(gt.shape[0])])
    t = Tensor(targets[:, None, :, :].astype(pred.data.dtype),
               dtype=pred.data.dtype.type)
    p = clamp(soft, _EDGE_EPS, 1.0 - _EDGE_EPS)
    bce = -(t * log(p) + (1.0 - t) * log(1.0 - p))
    return reduce_mean(bce)


def total_loss(pred: Tensor, gt: Tensor, weights: LossWeights | None = None) -> Tensor:
    w = weights or LossWeights()
    return (l1_loss(pred, gt) * w.l1
            + ssim_loss(pred, gt) * w.ssim
            + edge_loss(pred, gt) * w.edge)


# -- metrics -------------------------------------------------------------------


PSNR_CAP = 100.0


def psnr(pred, gt, peak: float = 1.0) -> float:
    a = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    b = gt.data if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))
