"""Model assembly: config, initialization, naming, persistence glue.

A freshly initialized model is the identity map end to end: the projection
head and all residual-branch output layers start at zero, and the head
carries a logit skip from the input image.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import checkpoint as ckpt
from .backbone import (COMPOSITIONS, SCORERS, BlockConfig, BsmambaBlockState,
                       backbone_forward, init_block)
from .denet import DenetState, denet_forward, init_denet
from .errors import CheckpointError, ConfigError
from .tensor import Tensor


@dataclass
class ModelConfig:
    channels: int = 32
    num_blocks: int = 4
    state_dim: int = 8
    mlp_expansion: int = 2
    composition: str = "sequential_bs"
    scorer: str = "luma"
    use_denet: bool = True
    denet_width: int = 16
    denet_bottleneck: int = 32
    ffc_alpha: float = 0.5

    def __post_init__(self):
        if self.composition not in COMPOSITIONS:
            raise ConfigError(f"composition {self.composition!r} not one of {COMPOSITIONS}")
        if self.scorer not in SCORERS:
            raise ConfigError(f"scorer {self.scorer!r} not one of {SCORERS}")
        for name in ("channels", "num_blocks", "state_dim", "mlp_expansion",
                     "denet_width", "denet_bottleneck"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def block_config(self) -> BlockConfig:
        return BlockConfig(channels=self.channels, state_dim=self.state_dim,
                           mlp_expansion=self.mlp_expansion,
                           composition=self.composition, scorer=self.scorer)

    def to_dict(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in d:
                raise CheckpointError(f"checkpoint config missing field {f.name!r}")
            raw = d[f.name]
            if f.type == "bool":
                kwargs[f.name] = raw == "True"
            elif f.type == "int":
                kwargs[f.name] = int(raw)
            elif f.type == "float":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


@dataclass
class Model:
    config: ModelConfig
    stem_w: Tensor
    stem_b: Tensor
    blocks: list[BsmambaBlockState]
    head_w: Tensor
    head_b: Tensor
    denet: DenetState | None


def init_model(config: ModelConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    c = config.channels
    stem_bound = 1.0 / np.sqrt(3 * 9)
    return Model(
        config=config,
        stem_w=Tensor(rng.uniform(-stem_bound, stem_bound, (c, 3, 3, 3)), requires_grad=True),
        stem_b=Tensor(np.zeros(c), requires_grad=True),
        blocks=[init_block(config.block_config(), rng) for _ in range(config.num_blocks)],
        head_w=Tensor(np.zeros((3, c, 3, 3)), requires_grad=True),
        head_b=Tensor(np.zeros(3), requires_grad=True),
        denet=init_denet(rng, config.denet_width, config.denet_bottleneck,
                         config.ffc_alpha) if config.use_denet else None,
    )


def named_tensors(model: Model) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {"stem.w": model.stem_w, "stem.b": model.stem_b,
                              "head.w": model.head_w, "head.b": model.head_b}
    for i, block in enumerate(model.blocks):
        out.update(dict(block.named(f"blocks.{i}")))
    if model.denet is not None:
        out.update(dict(model.denet.named("denet")))
    return out


def count_parameters(model: Model) -> int:
    return sum(t.size for t in named_tensors(model).values())


def zero_grads(model: Model) -> None:
    for t in named_tensors(model).values():
        t.zero_grad()


def model_forward(image: Tensor, model: Model, maps: dict) -> tuple[Tensor, Tensor, Tensor]:
    """Full enhancement pass; returns (output, intermediate, features)."""
    features, intermediate = backbone_forward(image, model, maps)
    if model.denet is not None:
        out = denet_forward(intermediate, model.denet)
    else:
        out = intermediate
    return out, intermediate, features


def save_model(path: str, model: Model) -> None:
    tensors = {name: t.data for name, t in named_tensors(model).items()}
    ckpt.save_checkpoint(path, model.config.to_dict(), tensors)


def load_model(path: str) -> Model:
    config_dict, tensors = ckpt.load_checkpoint(path)
    config = ModelConfig.from_dict(config_dict)
    model = init_model(config, seed=0)
    expected = named_tensors(model)
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"checkpoint does not match architecture (missing {missing[:4]}, extra {extra[:4]})")
    for name, t in expected.items():
        arr = tensors[name]
        if tuple(arr.shape) != t.shape:
            raise CheckpointError(
                f"checkpoint tensor {name} has shape {arr.shape}, expected {t.shape}")
        t.data = arr.astype(t.data.dtype)
    return model
