"""Synthetic paired data for overfit experiments and tests.

Ground-truth images mix smooth gradients with rectangles and a disc so
they carry edges and distinct instance regions; the low-light version is
a gamma-darkened, slightly desaturated copy. Instance-mask sidecars for
the two rectangles are written next to the low images.
"""

from __future__ import annotations

import os

import numpy as np

from . import imageio
from .hierarchy import InstanceMaskSet, write_mask_sidecars

GAMMA = 2.2
GAIN = 0.30


def make_pair(size: int, seed: int) -> tuple[np.ndarray, np.ndarray, InstanceMaskSet]:
    """Returns (low, gt, masks), images [3,size,size] in [0,1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    base = 0.35 + 0.45 * (0.5 * xx + 0.5 * yy)
    gt = np.stack([base, np.roll(base, size // 5, axis=1), base[::-1]]).copy()

    def rect(cx, cy, hw, hh):
        m = np.zeros((size, size))
        m[max(cy - hh, 0):cy + hh, max(cx - hw, 0):cx + hw] = 1.0
        return m

    r1 = rect(int(size * 0.3), int(size * 0.35), size // 6, size // 8)
    r2 = rect(int(size * 0.7), int(size * 0.65), size // 8, size // 5)
    disc = ((yy - 0.7) ** 2 + (xx - 0.25) ** 2) < 0.02
    colors = rng.uniform(0.55, 0.95, (3, 3))
    for i, m in enumerate((r1, r2, disc.astype(np.float64))):
        for c in range(3):
            gt[c] = gt[c] * (1 - m) + colors[i, c] * m
    gt += rng.normal(0.0, 0.01, gt.shape)
    gt = np.clip(gt, 0.02, 0.98)

    low = np.clip(GAIN * gt ** GAMMA + rng.normal(0.0, 0.003, gt.shape), 0.0, 1.0)
    masks = InstanceMaskSet(instance_maps=np.stack([r1, r2]),
                            scores=np.array([0.9, 0.6]), source="synthetic")
    return low, gt, masks


def write_dataset(root: str, size: int = 64, count: int = 2, seed: int = 7,
                  with_masks: bool = True) -> str:
    os.makedirs(os.path.join(root, "low"), exist_ok=True)
    os.makedirs(os.path.join(root, "high"), exist_ok=True)
    for i in range(count):
        low, gt, masks = make_pair(size, seed + i)
        name = f"pair{i:02d}.png"
        low_path = os.path.join(root, "low", name)
        imageio.write_png(low_path, low)
        imageio.write_png(os.path.join(root, "high", name), gt)
        if with_masks:
            write_mask_sidecars(low_path, masks)
    return root
