"""Run a pretrained Mask R-CNN over a directory of images and write the
instance-mask sidecar files the enhancement pipeline ingests.

Sidecar contract (for image name.png):
    name.inst.pgm       16-bit binary PGM label map, 0 = background,
                        k = instance id k (ids contiguous from 1)
    name.inst.txt       one "<id> <confidence>" line per instance
    name.inst.<id>.pgm  optional 8-bit soft masks (value/255 = mask prob)

Overlapping detections resolve to the higher-confidence instance. Files
are written atomically per image.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image


class SetupError(Exception):
    """Segmentation model weights are not available."""


class ExportDataError(Exception):
    """Input image problems."""


DOWNLOAD_HELP = (
    "no local weights supplied and the torchvision download failed. Either\n"
    "  - pass --weights /path/to/maskrcnn_state_dict.pth, or\n"
    "  - on a machine with internet access run:\n"
    "      python -c \"import torch, torchvision;\n"
    "        m = torchvision.models.detection.maskrcnn_resnet50_fpn(weights='DEFAULT');\n"
    "        torch.save(m.state_dict(), 'maskrcnn_coco.pth')\"\n"
    "    and copy maskrcnn_coco.pth next to this tool."
)


@dataclass
class ExportRecord:
    name: str
    count: int
    instances: list = field(default_factory=list)  # (id, confidence, coverage)


def load_model(weights_path: str | None = None, min_size: int = 320,
               max_size: int = 640):
    """Build Mask R-CNN; local state dict if given, else torchvision zoo."""
    import torch
    import torchvision

    if weights_path is not None:
        if not os.path.exists(weights_path):
            raise SetupError(f"weights file {weights_path} does not exist")
        model = torchvision.models.detection.maskrcnn_resnet50_fpn(
            weights=None, weights_backbone=None, min_size=min_size, max_size=max_size)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    else:
        try:
            model = torchvision.models.detection.maskrcnn_resnet50_fpn(
                weights="DEFAULT", min_size=min_size, max_size=max_size)
        except Exception as e:  # URLError, RuntimeError from hub download, ...
            raise SetupError(f"{e}\n{DOWNLOAD_HELP}") from e
    model.eval()
    return model


def _read_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as e:
        raise ExportDataError(f"cannot decode {path}: {e}") from e
    return arr.transpose(2, 0, 1)


def detect(model, image: np.ndarray, confidence_floor: float):
    """Returns (soft_masks [n,H,W], scores [n]) above the floor, by
    descending confidence."""
    import torch

    with torch.no_grad():
        out = model([torch.from_numpy(image)])[0]
    scores = out["scores"].numpy()
    keep = scores >= confidence_floor
    if not keep.any():
        return np.zeros((0,) + image.shape[1:], dtype=np.float64), np.zeros(0)
    masks = out["masks"].numpy()[keep, 0]
    scores = scores[keep]
    order = np.argsort(-scores, kind="stable")
    return masks[order].astype(np.float64), np.clip(scores[order], 0.0, 1.0)


def write_sidecars(image_path: str, masks: np.ndarray, scores: np.ndarray,
                   shape: tuple[int, int], soft: bool = False,
                   mask_threshold: float = 0.5) -> ExportRecord:
    """Serialize one image's detections to the sidecar files."""
    stem = os.path.splitext(image_path)[0]
    n = len(scores)
    label = np.zeros(shape, dtype=np.uint16)
    # ascending confidence so the most confident instance wins overlaps
    for idx in np.argsort(scores, kind="stable"):
        label[masks[idx] >= mask_threshold] = idx + 1

    _write_pgm(stem + ".inst.pgm", label, maxval=65535)
    lines = "".join(f"{i + 1} {scores[i]:.6f}\n" for i in range(n))
    _atomic_write_bytes(stem + ".inst.txt", lines.encode())
    if soft:
        for i in range(n):
            soft8 = np.clip(np.rint(masks[i] * 255.0), 0, 255).astype(np.uint8)
            _write_pgm(f"{stem}.inst.{i + 1}.pgm", soft8, maxval=255)

    record = ExportRecord(name=os.path.basename(image_path), count=n)
    for i in range(n):
        coverage = float((label == i + 1).mean())
        record.instances.append((i + 1, float(scores[i]), coverage))
    return record


def export_masks(in_dir: str, out_dir: str, confidence_floor: float = 0.5,
                 weights_path: str | None = None, soft: bool = False,
                 model=None) -> list[ExportRecord]:
    """Export sidecars for every PNG/JPEG image under in_dir."""
    if model is None:
        model = load_model(weights_path)
    names = sorted(f for f in os.listdir(in_dir)
                   if f.lower().endswith((".png", ".jpg", ".jpeg")))
    if not names:
        raise ExportDataError(f"no images found under {in_dir}")
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for name in names:
        src = os.path.join(in_dir, name)
        try:
            image = _read_image(src)
        except ExportDataError as e:
            print(f"warning: skipping {name}: {e}")
            continue
        masks, scores = detect(model, image, confidence_floor)
        dst_image = os.path.join(out_dir, name)
        if os.path.abspath(dst_image) != os.path.abspath(src):
            _copy_file(src, dst_image)
        records.append(write_sidecars(dst_image, masks, scores,
                                      shape=image.shape[1:], soft=soft))
    return records


# -- small file helpers (the sidecar format is shared by contract, not code) --


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_pgm(path: str, arr: np.ndarray, maxval: int) -> None:
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode()
    payload = arr.astype(">u2" if maxval > 255 else "u1").tobytes()
    _atomic_write_bytes(path, header + payload)


def _copy_file(src: str, dst: str) -> None:
    with open(src, "rb") as f:
        _atomic_write_bytes(dst, f.read())
