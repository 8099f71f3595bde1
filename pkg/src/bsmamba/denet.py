"""Detail enhancement network: encoder/decoder around an FFC bottleneck.

The FFC block splits channels into a spatial branch (3x3 conv) and a
spectral branch (real FFT, 1x1 conv over stacked real/imag planes, inverse
FFT), cross-mixes the branches and adds the result back residually. The
full network refines an already-enhanced image: out = clamp(img + residual).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UnsupportedSizeError
from .tensor import (ComplexPair, Tensor, clamp, concat, conv2d, fft2_real,
                     ifft2_real, narrow, silu, split, upsample2x)


@dataclass
class FfcBlockWeights:
    spatial_w: Tensor    # [Cspa, Cspa, 3, 3]
    spatial_b: Tensor
    spectral_w: Tensor   # [2*Cspec, 2*Cspec, 1, 1]
    spectral_b: Tensor
    cross_fs_w: Tensor   # spectral -> spatial, [Cspa, Cspec, 1, 1]
    cross_fs_b: Tensor
    cross_sf_w: Tensor   # spatial -> spectral, [Cspec, Cspa, 1, 1]
    cross_sf_b: Tensor
    alpha: float

    def named(self, prefix: str):
        yield f"{prefix}.spatial.w", self.spatial_w
        yield f"{prefix}.spatial.b", self.spatial_b
        yield f"{prefix}.spectral.w", self.spectral_w
        yield f"{prefix}.spectral.b", self.spectral_b
        yield f"{prefix}.cross_fs.w", self.cross_fs_w
        yield f"{prefix}.cross_fs.b", self.cross_fs_b
        yield f"{prefix}.cross_sf.w", self.cross_sf_w
        yield f"{prefix}.cross_sf.b", self.cross_sf_b


@dataclass
class DenetState:
    enc1_w: Tensor
    enc1_b: Tensor
    enc2_w: Tensor
    enc2_b: Tensor
    ffc: list[FfcBlockWeights]
    dec1_w: Tensor
    dec1_b: Tensor
    dec2_w: Tensor
    dec2_b: Tensor
    out_w: Tensor
    out_b: Tensor

    def named(self, prefix: str):
        for nm in ("enc1", "enc2", "dec1", "dec2", "out"):
            yield f"{prefix}.{nm}.w", getattr(self, f"{nm}_w")
            yield f"{prefix}.{nm}.b", getattr(self, f"{nm}_b")
        for i, blk in enumerate(self.ffc):
            yield from blk.named(f"{prefix}.ffc{i}")


def _conv_init(rng, cout, cin, k):
    bound = 1.0 / np.sqrt(cin * k * k)
    return Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def init_ffc_block(channels: int, alpha: float, rng: np.random.Generator) -> FfcBlockWeights:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"ffc alpha must be in (0,1), got {alpha}")
    cspec = int(round(alpha * channels))
    cspa = channels - cspec
    if cspec < 1 or cspa < 1:
        raise ConfigError(f"ffc split alpha={alpha} leaves an empty branch for {channels} channels")
    return FfcBlockWeights(
        spatial_w=_conv_init(rng, cspa, cspa, 3), spatial_b=_zeros(cspa),
        spectral_w=_conv_init(rng, 2 * cspec, 2 * cspec, 1), spectral_b=_zeros(2 * cspec),
        cross_fs_w=_conv_init(rng, cspa, cspec, 1), cross_fs_b=_zeros(cspa),
        cross_sf_w=_conv_init(rng, cspec, cspa, 1), cross_sf_b=_zeros(cspec),
        alpha=alpha,
    )


def init_denet(rng: np.random.Generator, width: int = 16, bottleneck: int = 32,
               alpha: float = 0.5) -> DenetState:
    # out conv starts at zero: the whole net is the identity at init
    return DenetState(
        enc1_w=_conv_init(rng, width, 3, 3), enc1_b=_zeros(width),
        enc2_w=_conv_init(rng, bottleneck, width, 3), enc2_b=_zeros(bottleneck),
        ffc=[init_ffc_block(bottleneck, alpha, rng) for _ in range(2)],
        dec1_w=_conv_init(rng, width, bottleneck, 3), dec1_b=_zeros(width),
        dec2_w=_conv_init(rng, width, width, 3), dec2_b=_zeros(width),
        out_w=Tensor(np.zeros((3, width, 3, 3)), requires_grad=True), out_b=_zeros(3),
    )


def _bias(b: Tensor, c: int) -> Tensor:
    return b.reshape((1, c, 1, 1))


def spectral_transform(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """FFT -> 1x1 conv over stacked real/imag planes -> inverse FFT."""
    cs = x.shape[1]
    f = fft2_real(x)
    stacked = concat([f.re, f.im], axis=1)
    mixed = conv2d(stacked, w) + _bias(b, 2 * cs)
    re, im = split(mixed, 2, axis=1)
    return ifft2_real(ComplexPair(re, im))


def ffc_block(x: Tensor, w: FfcBlockWeights) -> Tensor:
    bsz, c, h, wid = x.shape
    if (h & (h - 1)) or (wid & (wid - 1)):
        raise UnsupportedSizeError(f"ffc_block: spatial dims {(h, wid)} must be powers of two")
    cspec = int(round(w.alpha * c))
    cspa = c - cspec
    xs = narrow(x, 1, 0, cspa)
    xf = narrow(x, 1, cspa, cspec)
    ys = conv2d(xs, w.spatial_w, padding=1) + _bias(w.spatial_b, cspa)
    yf = spectral_transform(xf, w.spectral_w, w.spectral_b)
    zs = ys + conv2d(yf, w.cross_fs_w) + _bias(w.cross_fs_b, cspa)
    zf = yf + conv2d(ys, w.cross_sf_w) + _bias(w.cross_sf_b, cspec)
    return x + silu(concat([zs, zf], axis=1))


def denet_forward(image: Tensor, state: DenetState, trace: list | None = None) -> Tensor:
    bsz, c, h, w = image.shape
    if h % 4 or w % 4:
        raise ShapeError(f"denet: spatial dims {(h, w)} must be divisible by 4")
    if (h & (h - 1)) or (w & (w - 1)):
        raise ShapeError(f"denet: spatial dims {(h, w)} must be powers of two")

    e1 = silu(conv2d(image, state.enc1_w, stride=2, padding=1) + _bias(state.enc1_b, state.enc1_w.shape[0]))
    e2 = silu(conv2d(e1, state.enc2_w, stride=2, padding=1) + _bias(state.enc2_b, state.enc2_w.shape[0]))
    z = e2
    for blk in state.ffc:
        z = ffc_block(z, blk)
    d1 = silu(conv2d(upsample2x(z), state.dec1_w, padding=1) + _bias(state.dec1_b, state.dec1_w.shape[0]))
    d1 = d1 + e1
    d2 = silu(conv2d(upsample2x(d1), state.dec2_w, padding=1) + _bias(state.dec2_b, state.dec2_w.shape[0]))
    residual = conv2d(d2, state.out_w, padding=1) + _bias(state.out_b, 3)
    if trace is not None:
        trace.extend([("enc1", e1.shape), ("enc2", e2.shape), ("bottleneck", z.shape),
                      ("dec1", d1.shape), ("dec2", d2.shape)])
    return clamp(image + residual, 0.0, 1.0)


def identity_spectral_weights(cspec: int) -> np.ndarray:
    """1x1 spectral conv that fixes the real planes and passes imag untouched."""
    return np.eye(2 * cspec).reshape(2 * cspec, 2 * cspec, 1, 1)
