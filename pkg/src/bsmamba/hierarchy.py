"""Brightness / semantic score maps and the token sort plans they induce.

A score map assigns each pixel a value in [0,1]; sorting the flattened
map (stable, ascending, raster-order tie-break) gives the scan order used
by the backbone. Semantic maps come from instance masks with confidence
scores: instance ranked i (1-based, by ascending confidence) occupies the
attention range [i/(n+1), (i+1)/(n+1)], background sits at the midpoint
of the lowest range.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import imageio
from .errors import ConfigError, DataError
from .tensor import Tensor

BT601 = (0.299, 0.587, 0.114)


@dataclass
class HierarchyMap:
    values: np.ndarray     # [H,W] float64 in [0,1]
    kind: str              # "brightness" | "semantic"
    source: str            # scorer identifier

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"hierarchy map must be 2-D, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError("hierarchy map contains non-finite scores")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise DataError("hierarchy map scores must lie in [0,1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class SortPlan:
    """Stable ascending order over flattened tokens plus its inverse."""

    forward_index: np.ndarray
    inverse_index: np.ndarray
    key_snapshot: np.ndarray

    def __len__(self) -> int:
        return self.forward_index.size


@dataclass
class InstanceMaskSet:
    """Instance masks M_i in [0,1] with confidences S_i; background derived."""

    instance_maps: np.ndarray          # [n,H,W]
    scores: np.ndarray                 # [n]
    source: str = "fixture"

    def __post_init__(self):
        self.instance_maps = np.asarray(self.instance_maps, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.instance_maps.ndim != 3:
            raise DataError(f"instance maps must be [n,H,W], got {self.instance_maps.shape}")
        if self.scores.shape != (self.instance_maps.shape[0],):
            raise DataError(
                f"{self.instance_maps.shape[0]} masks but {self.scores.shape[0]} scores")
        if self.instance_maps.size and (
                self.instance_maps.min() < 0 or self.instance_maps.max() > 1):
            raise DataError("mask values must lie in [0,1]")
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise DataError("confidence scores must lie in [0,1]")

    @property
    def count(self) -> int:
        return self.instance_maps.shape[0]

    def background(self) -> np.ndarray:
        if self.count == 0:
            raise DataError("background of an empty mask set needs an explicit shape")
        return np.clip(1.0 - self.instance_maps.max(axis=0), 0.0, 1.0)


def _image_array(image) -> np.ndarray:
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError(f"expected an RGB [3,H,W] image, got shape {arr.shape}")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise DataError("image channels must lie in [0,1]")
    return np.clip(arr, 0.0, 1.0)


def _luma(arr: np.ndarray) -> np.ndarray:
    r, g, b = BT601
    return np.clip(r * arr[0] + g * arr[1] + b * arr[2], 0.0, 1.0)


def luma_score(image) -> HierarchyMap:
    """BT.601 Y component as the brightness score."""
    return HierarchyMap(_luma(_image_array(image)), kind="brightness", source="luma")


def histogram_score(image, bins: int = 256) -> HierarchyMap:
    """Empirical luma-CDF score: fraction of pixels at or below a pixel's bin."""
    if bins < 2:
        raise ConfigError(f"histogram_score: need at least 2 bins, got {bins}")
    y = _luma(_image_array(image))
    bin_idx = np.minimum((y * bins).astype(np.int64), bins - 1)
    counts = np.bincount(bin_idx.reshape(-1), minlength=bins)
    cdf = np.cumsum(counts) / y.size
    return HierarchyMap(cdf[bin_idx], kind="brightness", source="histogram")


def semantic_map(masks: InstanceMaskSet, shape: tuple[int, int] | None = None) -> HierarchyMap:
    """Instance masks + confidences -> graded attention map.

    Ranks instances by ascending confidence so the most confident one lands
    in the top range; a pixel under several instances takes the value of
    the highest-confidence one covering it.
    """
    n = masks.count
    if n == 0:
        if shape is None:
            raise DataError("semantic_map of an empty mask set needs an explicit shape")
        return HierarchyMap(np.full(shape, 0.5), kind="semantic", source=masks.source)
    hw = masks.instance_maps.shape[1:]
    if shape is not None and tuple(shape) != hw:
        raise DataError(f"mask shape {hw} does not match requested {tuple(shape)}")
    order = np.argsort(masks.scores, kind="stable")  # ascending confidence
    values = np.full(hw, 0.5 / (n + 1))
    for rank, inst in enumerate(order, start=1):
        m = masks.instance_maps[inst]
        s = masks.scores[inst]
        covered = m > 0
        values[covered] = (rank + np.clip(m[covered] * s, 0.0, 1.0)) / (n + 1)
    return HierarchyMap(values, kind="semantic", source=masks.source)


def grading_ranges(n: int) -> list[tuple[float, float]]:
    """The n+1 attention ranges [i/(n+1), (i+1)/(n+1)], i=0 background."""
    return [(i / (n + 1), (i + 1) / (n + 1)) for i in range(n + 1)]


def build_sort_plan(hmap: HierarchyMap) -> SortPlan:
    """Stable ascending argsort of the flattened map."""
    keys = hmap.values.reshape(-1)
    if not np.isfinite(keys).all():
        raise DataError("sort keys must be finite")
    fwd = np.argsort(keys, kind="stable").astype(np.int64)
    inv = np.empty_like(fwd)
    inv[fwd] = np.arange(fwd.size, dtype=np.int64)
    return SortPlan(forward_index=fwd, inverse_index=inv, key_snapshot=keys[fwd].copy())


def downsample_map(hmap: HierarchyMap, target: tuple[int, int]) -> HierarchyMap:
    """Area-average pooling down to an integer-factor smaller grid."""
    h, w = hmap.shape
    th, tw = target
    if th > h or tw > w or h % th or w % tw:
        raise ConfigError(f"downsample_map: {h}x{w} -> {th}x{tw} is not an integer factor")
    v = hmap.values.reshape(th, h // th, tw, w // tw).mean(axis=(1, 3))
    return HierarchyMap(v, kind=hmap.kind, source=hmap.source)


# -- mask sidecar files --------------------------------------------------------
#
# For image  name.png  the sidecars are:
#   name.inst.pgm      16-bit label map, 0 = background, k = instance id k
#   name.inst.txt      one line per instance: "<id> <confidence>"
#   name.inst.<id>.pgm optional 8-bit soft mask (value/255 = m)


def sidecar_paths(image_path: str) -> tuple[str, str]:
    stem = os.path.splitext(image_path)[0]
    return stem + ".inst.pgm", stem + ".inst.txt"


def write_mask_sidecars(image_path: str, masks: InstanceMaskSet,
                        shape: tuple[int, int] | None = None,
                        soft: bool = False) -> None:
    """Write the sidecar set for an image (used by fixtures and tools)."""
    pgm_path, txt_path = sidecar_paths(image_path)
    n = masks.count
    if n == 0:
        if shape is None:
            raise DataError("writing an empty mask set needs an explicit shape")
        label = np.zeros(shape, dtype=np.uint16)
        lines = ""
    else:
        label = np.zeros(masks.instance_maps.shape[1:], dtype=np.uint16)
        order = np.argsort(masks.scores, kind="stable")
        for inst in order:  # ascending: higher confidence overwrites overlaps
            label[masks.instance_maps[inst] > 0.5] = inst + 1
        lines = "".join(f"{i + 1} {masks.scores[i]:.6f}\n" for i in range(n))
    imageio.write_pgm(pgm_path, label, maxval=65535)
    imageio._atomic_write(txt_path, lambda f: f.write(lines.encode()))
    if soft:
        stem = os.path.splitext(image_path)[0]
        for i in range(n):
            soft8 = np.clip(np.rint(masks.instance_maps[i] * 255), 0, 255).astype(np.uint8)
            imageio.write_pgm(f"{stem}.inst.{i + 1}.pgm", soft8, maxval=255)


def load_mask_sidecars(image_path: str) -> InstanceMaskSet | None:
    """Load and validate sidecars; None (with a warning) when absent."""
    pgm_path, txt_path = sidecar_paths(image_path)
    if not os.path.exists(pgm_path):
        warnings.warn(f"no mask sidecar for {image_path}; using all-background semantic map")
        return None
    label, _ = imageio.read_pgm(pgm_path)
    if not os.path.exists(txt_path):
        raise DataError(f"{pgm_path} present but score file {txt_path} missing")
    scores = _read_score_lines(txt_path)
    ids_in_map = np.unique(label)
    ids_in_map = ids_in_map[ids_in_map > 0]
    n = len(scores)
    expected = np.arange(1, n + 1)
    if not np.all(np.isin(ids_in_map, expected)):
        raise DataError(
            f"{pgm_path}: label map ids {ids_in_map.tolist()} are not contiguous from 1 "
            f"({n} score lines)")
    if ids_in_map.size and ids_in_map.max() > n:
        raise DataError(f"{pgm_path}: {ids_in_map.max()} ids but {n} score lines")
    maps = np.zeros((n,) + label.shape, dtype=np.float64)
    stem = os.path.splitext(image_path)[0]
    for i in range(1, n + 1):
        soft_path = f"{stem}.inst.{i}.pgm"
        if os.path.exists(soft_path):
            soft, maxval = imageio.read_pgm(soft_path)
            if soft.shape != label.shape:
                raise DataError(f"{soft_path}: shape {soft.shape} != label map {label.shape}")
            maps[i - 1] = soft.astype(np.float64) / maxval
        else:
            maps[i - 1] = (label == i).astype(np.float64)
    return InstanceMaskSet(instance_maps=maps, scores=np.asarray(scores),
                           source=os.path.basename(pgm_path))


def _read_score_lines(txt_path: str) -> list[float]:
    scores: dict[int, float] = {}
    with open(txt_path, "r") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{txt_path}:{lineno}: expected '<id> <score>'")
            try:
                iid, s = int(parts[0]), float(parts[1])
            except ValueError as e:
                raise DataError(f"{txt_path}:{lineno}: {e}") from e
            if not 0.0 <= s <= 1.0:
                raise DataError(f"{txt_path}:{lineno}: confidence {s} outside [0,1]")
            if iid in scores:
                raise DataError(f"{txt_path}:{lineno}: duplicate id {iid}")
            scores[iid] = s
    n = len(scores)
    if sorted(scores) != list(range(1, n + 1)):
        raise DataError(f"{txt_path}: ids {sorted(scores)} are not contiguous from 1")
    return [scores[i] for i in range(1, n + 1)]


def load_external_score(image_path: str) -> HierarchyMap:
    """Brightness score map supplied as a sidecar PGM `<stem>.bright.pgm`."""
    path = os.path.splitext(image_path)[0] + ".bright.pgm"
    if not os.path.exists(path):
        raise DataError(f"external scorer: no score sidecar {path}")
    arr, maxval = imageio.read_pgm(path)
    return HierarchyMap(arr.astype(np.float64) / maxval, kind="brightness", source="external")
