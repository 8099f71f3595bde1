"""Dataset ingestion, training loop, enhancement and evaluation.

Datasets follow the paired layout `root/low/*.png` + `root/high/*.png`
with matching filenames; optional instance-mask sidecars sit next to the
low images. Training is fully deterministic for a given seed and
precision mode.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import hierarchy, imageio
from .errors import ConfigError, DataError, NumericError
from .hierarchy import HierarchyMap, InstanceMaskSet
from .losses import LossWeights, psnr, ssim, total_loss
from .model import (Model, ModelConfig, init_model, load_model, model_forward,
                    named_tensors, save_model, zero_grads)
from .tensor import Tensor, no_grad, set_default_dtype


@dataclass
class TrainConfig:
    learning_rate: float = 4.0e-4
    batch_size: int = 2
    crop_size: int = 64
    iterations: int = 500
    milestones: tuple = (0.5, 0.75, 0.9)
    lr_decay: float = 0.5
    loss_weights: tuple = (1.0, 0.5, 0.1)
    seed: int = 0
    composition: str = "sequential_bs"
    scorer: str = "luma"
    precision: str = "64"
    channels: int = 32
    num_blocks: int = 4
    state_dim: int = 8
    mlp_expansion: int = 2
    use_denet: bool = True
    log_every: int = 50

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        c = self.crop_size
        if c < 16 or (c & (c - 1)):
            raise ConfigError(f"crop_size must be a power of two >= 16, got {c}")
        ms = tuple(self.milestones)
        if any(not 0.0 < m < 1.0 for m in ms) or any(a >= b for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be strictly increasing in (0,1), got {ms}")
        if self.precision not in ("32", "64"):
            raise ConfigError(f"precision must be '32' or '64', got {self.precision!r}")
        if self.batch_size < 1 or self.iterations < 1:
            raise ConfigError("batch_size and iterations must be positive")

    def model_config(self) -> ModelConfig:
        return ModelConfig(channels=self.channels, num_blocks=self.num_blocks,
                           state_dim=self.state_dim, mlp_expansion=self.mlp_expansion,
                           composition=self.composition, scorer=self.scorer,
                           use_denet=self.use_denet)

    def weights(self) -> LossWeights:
        l1, s, e = self.loss_weights
        return LossWeights(l1=l1, ssim=s, edge=e)


_BOOL_STRINGS = {"true": True, "false": False, "1": True, "0": False}


def parse_config_file(path: str, base: TrainConfig | None = None) -> TrainConfig:
    """`key = value` lines; '#' starts a comment; unknown keys are errors."""
    values: dict[str, object] = {}
    ftypes = {f.name: f.type for f in fields(TrainConfig)}
    try:
        lines = open(path).read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in ftypes:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce_field(key, ftypes[key], raw, path, lineno)
    cfg = base or TrainConfig()
    return replace(cfg, **values)


def _coerce_field(key, ftype, raw, path, lineno):
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            return _BOOL_STRINGS[raw.lower()]
        if ftype == "tuple":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return raw
    except (ValueError, KeyError) as e:
        raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from e


# -- dataset -------------------------------------------------------------------


@dataclass
class PairRecord:
    name: str
    low_path: str
    gt_path: str


@dataclass
class PairedDataset:
    pairs: list[PairRecord]
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.pairs)

    def load(self, idx: int) -> tuple[np.ndarray, np.ndarray, InstanceMaskSet | None]:
        rec = self.pairs[idx]
        if rec.name not in self._cache:
            low = imageio.read_png(rec.low_path)
            gt = imageio.read_png(rec.gt_path)
            if low.shape != gt.shape:
                raise DataError(
                    f"pair {rec.name}: low {low.shape} and high {gt.shape} shapes differ")
            masks = hierarchy.load_mask_sidecars(rec.low_path)
            self._cache[rec.name] = (low, gt, masks)
        return self._cache[rec.name]


def load_dataset(root: str) -> PairedDataset:
    low_dir = os.path.join(root, "low")
    high_dir = os.path.join(root, "high")
    if not os.path.isdir(low_dir) or not os.path.isdir(high_dir):
        raise DataError(f"dataset root {root} must contain low/ and high/ directories")
    lows = {f for f in os.listdir(low_dir) if f.lower().endswith(".png")}
    highs = {f for f in os.listdir(high_dir) if f.lower().endswith(".png")}
    orphans = sorted(lows.symmetric_difference(highs))
    if orphans:
        raise DataError(f"unmatched image filenames: {orphans}")
    if not lows:
        raise DataError(f"no PNG pairs found under {root}")
    pairs = [PairRecord(name=f, low_path=os.path.join(low_dir, f),
                        gt_path=os.path.join(high_dir, f)) for f in sorted(lows)]
    return PairedDataset(pairs=pairs)


def augment(low: np.ndarray, gt: np.ndarray, masks: InstanceMaskSet | None,
            rng: np.random.Generator, crop: int,
            extras: list[np.ndarray] | None = None):
    """Identical random crop + horizontal/vertical flips for all planes.

    extras are additional [..,H,W] planes (e.g. external score maps) cut
    with the same window; returned as a list in the same order.
    """
    h, w = low.shape[-2:]
    if h < crop or w < crop:
        raise DataError(f"image {h}x{w} smaller than crop size {crop}")
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    flip_h = bool(rng.integers(0, 2))
    flip_v = bool(rng.integers(0, 2))

    def cut(a: np.ndarray) -> np.ndarray:
        a = a[..., top:top + crop, left:left + crop]
        if flip_h:
            a = a[..., ::-1]
        if flip_v:
            a = a[..., ::-1, :]
        return np.ascontiguousarray(a)

    mcrop = None
    if masks is not None:
        mcrop = InstanceMaskSet(instance_maps=cut(masks.instance_maps),
                                scores=masks.scores.copy(), source=masks.source)
    if extras is None:
        return cut(low), cut(gt), mcrop
    return cut(low), cut(gt), mcrop, [cut(e) for e in extras]


# -- optimizer -------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update; params with no gradient are skipped."""
    state.step += 1
    t = state.step
    for name in sorted(params):
        p = params[name]
        if p.grad is None:
            continue
        g = p.grad
        if not np.isfinite(g).all():
            raise NumericError(f"NaN/Inf gradient for tensor {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        mhat = m / (1 - ADAM_BETA1 ** t)
        vhat = v / (1 - ADAM_BETA2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def lr_at(iteration: int, total: int, base: float, milestones, decay: float) -> float:
    frac = iteration / total
    k = sum(1 for m in milestones if frac >= m)
    return base * decay ** k


# -- score maps --------------------------------------------------------------------


def compute_score_maps(images: np.ndarray, mask_sets, scorer: str,
                       external: list[HierarchyMap] | None = None) -> dict:
    """Brightness + semantic maps for a [B,3,H,W] batch."""
    b, _, h, w = images.shape
    bright: list[HierarchyMap] = []
    semantic: list[HierarchyMap] = []
    for i in range(b):
        if scorer == "luma":
            bright.append(hierarchy.luma_score(images[i]))
        elif scorer == "histogram":
            bright.append(hierarchy.histogram_score(images[i]))
        elif scorer == "external":
            if external is None or external[i] is None:
                raise DataError("external scorer selected but no score map provided")
            bright.append(external[i])
        else:
            raise ConfigError(f"unknown scorer {scorer!r}")
        ms = mask_sets[i] if mask_sets is not None else None
        if ms is None:
            ms = InstanceMaskSet(np.zeros((0, h, w)), np.zeros(0))
        semantic.append(hierarchy.semantic_map(ms, shape=(h, w)))
    return {"brightness": bright, "semantic": semantic}


# -- training ----------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_path: str
    log_lines: list[str]
    baseline_psnr: float
    final_psnr: float
    elapsed: float


def train(config: TrainConfig, dataset: PairedDataset | str, out_path: str) -> TrainResult:
    set_default_dtype(np.float64 if config.precision == "64" else np.float32)
    if isinstance(dataset, str):
        dataset = load_dataset(dataset)
    rng = np.random.default_rng(config.seed)
    model = init_model(config.model_config(), seed=config.seed)
    params = named_tensors(model)
    adam = AdamState()
    weights = config.weights()
    external = config.scorer == "external"

    milestone_iters = {max(1, int(round(m * config.iterations))) for m in config.milestones}
    log_lines: list[str] = []
    window: list[float] = []
    t0 = time.time()

    for it in range(1, config.iterations + 1):
        lr = lr_at(it, config.iterations, config.learning_rate,
                   config.milestones, config.lr_decay)
        lows, gts, msets, emaps = [], [], [], []
        for _ in range(config.batch_size):
            idx = int(rng.integers(0, len(dataset)))
            low, gt, masks = dataset.load(idx)
            extras = None
            if external:
                ext = hierarchy.load_external_score(dataset.pairs[idx].low_path)
                extras = [ext.values]
            cut = augment(low, gt, masks, rng, config.crop_size, extras)
            lows.append(cut[0])
            gts.append(cut[1])
            msets.append(cut[2])
            if external:
                emaps.append(HierarchyMap(cut[3][0], "brightness", "external"))
        low_np = np.stack(lows)
        gt_np = np.stack(gts)
        maps = compute_score_maps(low_np, msets, config.scorer,
                                  external=emaps if external else None)

        out, _, _ = model_forward(Tensor(low_np), model, maps)
        loss = total_loss(out, Tensor(gt_np), weights)
        zero_grads(model)
        loss.backward()
        adam_step(params, adam, lr)

        window.append(loss.item())
        if it % config.log_every == 0:
            batch_psnr = psnr(out.data, gt_np)
            line = (f"iter={it} loss={loss.item():.17e} "
                    f"window_loss={float(np.mean(window)):.17e} "
                    f"psnr={batch_psnr:.12f} lr={lr:.10e}")
            log_lines.append(line)
            window.clear()
        if it in milestone_iters:
            save_model(out_path, model)

    save_model(out_path, model)
    baseline, final = _dataset_psnr(dataset, model)
    log_lines.append(f"final baseline_psnr={baseline:.12f} train_psnr={final:.12f}")
    with open(out_path + ".log", "w") as f:
        f.write("\n".join(log_lines) + "\n")
    return TrainResult(checkpoint_path=out_path, log_lines=log_lines,
                       baseline_psnr=baseline, final_psnr=final,
                       elapsed=time.time() - t0)


def _dataset_psnr(dataset: PairedDataset, model: Model) -> tuple[float, float]:
    base, final = [], []
    for i in range(len(dataset)):
        low, gt, masks = dataset.load(i)
        external = None
        if model.config.scorer == "external":
            external = hierarchy.load_external_score(dataset.pairs[i].low_path)
        out = enhance_array(model, low, masks, external)
        base.append(psnr(low, gt))
        final.append(psnr(out, gt))
    return float(np.mean(base)), float(np.mean(final))


# -- inference ---------------------------------------------------------------------


def _next_pow2(n: int, floor: int = 16) -> int:
    p = floor
    while p < n:
        p *= 2
    return p


def _reflect_to(arr: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Reflect-pad the trailing two axes up to (th, tw), chunked for tiny inputs."""
    while arr.shape[-2] < th or arr.shape[-1] < tw:
        ph = min(th - arr.shape[-2], arr.shape[-2] - 1)
        pw = min(tw - arr.shape[-1], arr.shape[-1] - 1)
        if ph == 0 and pw == 0:
            raise DataError(f"cannot reflect-pad {arr.shape[-2:]} to {(th, tw)}")
        pad = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
        arr = np.pad(arr, pad, mode="reflect")
    return arr


def enhance_array(model: Model, image: np.ndarray,
                  masks: InstanceMaskSet | None = None,
                  external_map: HierarchyMap | None = None) -> np.ndarray:
    """Enhance one [3,H,W] image; non-power-of-two sizes are reflect-padded."""
    _, h, w = image.shape
    th, tw = _next_pow2(h), _next_pow2(w)
    scorer = model.config.scorer
    maps = compute_score_maps(image[None], [masks], scorer,
                              external=[external_map] if external_map is not None else None)
    if (th, tw) != (h, w):
        padded = _reflect_to(image, th, tw)
        maps = {kind: [HierarchyMap(_reflect_to(m.values, th, tw), m.kind, m.source)
                       for m in lst] for kind, lst in maps.items()}
    else:
        padded = image
    with no_grad():
        out, _, _ = model_forward(Tensor(padded[None]), model, maps)
    return np.clip(out.data[0, :, :h, :w], 0.0, 1.0)


def enhance(ckpt_path: str, in_path: str, out_dir: str, dump_maps: bool = False) -> list[str]:
    """Enhance a PNG file or a directory of PNGs; returns written paths."""
    model = load_model(ckpt_path)
    if os.path.isdir(in_path):
        names = sorted(f for f in os.listdir(in_path) if f.lower().endswith(".png")
                       and ".enhanced." not in f)
        inputs = [os.path.join(in_path, f) for f in names]
    else:
        inputs = [in_path]
    if not inputs:
        raise DataError(f"no PNG inputs under {in_path}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for path in inputs:
        image = imageio.read_png(path)
        masks = hierarchy.load_mask_sidecars(path)
        external = None
        if model.config.scorer == "external":
            external = hierarchy.load_external_score(path)
        out = enhance_array(model, image, masks, external)
        stem = os.path.splitext(os.path.basename(path))[0]
        dst = os.path.join(out_dir, stem + ".enhanced.png")
        imageio.write_png(dst, out)
        written.append(dst)
        if dump_maps:
            written.extend(_dump_maps(model, image, masks, external, out_dir, stem))
    return written


def _dump_maps(model, image, masks, external, out_dir, stem) -> list[str]:
    maps = compute_score_maps(image[None], [masks], model.config.scorer,
                              external=[external] if external is not None else None)
    paths = []
    for kind_name, hmap in (("bright", maps["brightness"][0]),
                            ("semantic", maps["semantic"][0])):
        mp = os.path.join(out_dir, f"{stem}.{kind_name}.png")
        imageio.write_png(mp, hmap.values)
        plan = hierarchy.build_sort_plan(hmap)
        order = np.empty(plan.forward_index.size, dtype=np.float64)
        order[plan.forward_index] = np.arange(plan.forward_index.size)
        op = os.path.join(out_dir, f"{stem}.{kind_name}_order.png")
        imageio.write_png(op, (order / max(order.size - 1, 1)).reshape(hmap.shape))
        paths.extend([mp, op])
    return paths


# -- evaluation --------------------------------------------------------------------


def evaluate(ckpt_path: str, data_root: str, csv_path: str | None = None) -> dict:
    """Mean PSNR/SSIM of the enhanced low images against ground truth."""
    from .ssm import scan_counter

    model = load_model(ckpt_path)
    dataset = load_dataset(data_root) if isinstance(data_root, str) else data_root
    rows = []
    scans = 0
    for i in range(len(dataset)):
        low, gt, masks = dataset.load(i)
        external = None
        if model.config.scorer == "external":
            external = hierarchy.load_external_score(dataset.pairs[i].low_path)
        out = enhance_array(model, low, masks, external)
        scans = scan_counter.count  # per-image forward pass count
        with no_grad():
            s = ssim(Tensor(out[None]), Tensor(gt[None])).item()
        rows.append((dataset.pairs[i].name, psnr(out, gt), s))
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    if csv_path:
        with open(csv_path, "w") as f:
            f.write("name,psnr,ssim\n")
            for name, p, s in rows:
                f.write(f"{name},{p:.6f},{s:.6f}\n")
            f.write(f"mean,{mean_psnr:.6f},{mean_ssim:.6f}\n")
    return {"psnr": mean_psnr, "ssim": mean_ssim, "scans_per_image": scans,
            "rows": rows}
