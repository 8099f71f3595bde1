"""BSMamba blocks: hierarchy-sorted scans wrapped in pre-norm residual units.

One sub-block is the two-stage unit

    x' = x + out_proj(mix(LayerNorm(x)))
    y  = x' + MLP(LayerNorm(x'))

where mix is a brightness- or semantic-sorted selective scan (or the
four-direction ss2d baseline). A full BSMamba block composes a brightness
and a semantic sub-block according to the configured composition mode; the
default backbone stacks four such blocks between a conv stem and a
sigmoid projection head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .hierarchy import HierarchyMap, SortPlan, build_sort_plan, downsample_map
from .ssm import SsmParams, init_ssm_params, scan_counter, selective_scan, ss2d_vanilla
from .tensor import (Tensor, clamp, concat, conv2d, gelu, layer_norm, log,
                     gather_tokens, matmul, narrow, scatter_tokens, sigmoid)

COMPOSITIONS = ("sequential_bs", "sequential_sb", "parallel_sum",
                "parallel_concat", "vanilla_ss2d")
SCORERS = ("luma", "histogram", "external")


@dataclass
class BlockConfig:
    channels: int = 32
    state_dim: int = 8
    mlp_expansion: int = 2
    composition: str = "sequential_bs"
    scorer: str = "luma"

    def __post_init__(self):
        if self.composition not in COMPOSITIONS:
            raise ConfigError(f"composition {self.composition!r} not one of {COMPOSITIONS}")
        if self.scorer not in SCORERS:
            raise ConfigError(f"scorer {self.scorer!r} not one of {SCORERS}")
        if self.composition == "parallel_concat" and self.channels % 2:
            raise ConfigError("parallel_concat needs an even channel count")


@dataclass
class SubBlockState:
    """One Eq-style residual unit: norm, scan branch, norm, MLP."""

    ln1_gamma: Tensor
    ln1_beta: Tensor
    ssms: list[SsmParams]          # 1 entry (hierarchy scan) or 4 (ss2d)
    out_w: Tensor
    out_b: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor

    def named(self, prefix: str):
        yield f"{prefix}.ln1.gamma", self.ln1_gamma
        yield f"{prefix}.ln1.beta", self.ln1_beta
        for i, ssm in enumerate(self.ssms):
            yield from ssm.named(f"{prefix}.ssm{i}")
        yield f"{prefix}.out.w", self.out_w
        yield f"{prefix}.out.b", self.out_b
        yield f"{prefix}.ln2.gamma", self.ln2_gamma
        yield f"{prefix}.ln2.beta", self.ln2_beta
        yield f"{prefix}.mlp.w1", self.mlp_w1
        yield f"{prefix}.mlp.b1", self.mlp_b1
        yield f"{prefix}.mlp.w2", self.mlp_w2
        yield f"{prefix}.mlp.b2", self.mlp_b2


@dataclass
class BsmambaBlockState:
    composition: str
    subs: dict[str, SubBlockState]

    def named(self, prefix: str):
        for key in sorted(self.subs):
            yield from self.subs[key].named(f"{prefix}.{key}")


def init_sub_block(channels: int, state_dim: int, mlp_expansion: int,
                   rng: np.random.Generator, n_scans: int = 1) -> SubBlockState:
    bound = 1.0 / np.sqrt(channels)
    hidden = channels * mlp_expansion
    # scan output projection and second MLP layer start at zero so each
    # residual stage is the identity at init
    return SubBlockState(
        ln1_gamma=Tensor(np.ones(channels), requires_grad=True),
        ln1_beta=Tensor(np.zeros(channels), requires_grad=True),
        ssms=[init_ssm_params(channels, state_dim, rng) for _ in range(n_scans)],
        out_w=Tensor(np.zeros((channels, channels)), requires_grad=True),
        out_b=Tensor(np.zeros(channels), requires_grad=True),
        ln2_gamma=Tensor(np.ones(channels), requires_grad=True),
        ln2_beta=Tensor(np.zeros(channels), requires_grad=True),
        mlp_w1=Tensor(rng.uniform(-bound, bound, (channels, hidden)), requires_grad=True),
        mlp_b1=Tensor(np.zeros(hidden), requires_grad=True),
        mlp_w2=Tensor(np.zeros((hidden, channels)), requires_grad=True),
        mlp_b2=Tensor(np.zeros(channels), requires_grad=True),
    )


def init_block(config: BlockConfig, rng: np.random.Generator) -> BsmambaBlockState:
    comp = config.composition
    if comp == "vanilla_ss2d":
        subs = {"vanilla": init_sub_block(config.channels, config.state_dim,
                                          config.mlp_expansion, rng, n_scans=4)}
    elif comp == "parallel_concat":
        half = config.channels // 2
        subs = {"brightness": init_sub_block(half, config.state_dim, config.mlp_expansion, rng),
                "semantic": init_sub_block(half, config.state_dim, config.mlp_expansion, rng)}
    else:
        subs = {"brightness": init_sub_block(config.channels, config.state_dim,
                                             config.mlp_expansion, rng),
                "semantic": init_sub_block(config.channels, config.state_dim,
                                           config.mlp_expansion, rng)}
    return BsmambaBlockState(composition=comp, subs=subs)


# -- token plumbing ---------------------------------------------------------------


def flatten_tokens(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,L,C] in raster order."""
    b, c, h, w = x.shape
    return x.reshape((b, c, h * w)).transpose(0, 2, 1)


def unflatten_tokens(t: Tensor, h: int, w: int) -> Tensor:
    b, l, c = t.shape
    return t.transpose(0, 2, 1).reshape((b, c, h, w))


def _plan_indices(plan) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(plan, SortPlan):
        return plan.forward_index, plan.inverse_index
    fwd, inv = plan
    return np.asarray(fwd), np.asarray(inv)


def _sorted_scan(tokens: Tensor, plan, ssm: SsmParams) -> Tensor:
    fwd, inv = _plan_indices(plan)
    if fwd.shape[-1] != tokens.shape[1]:
        raise ShapeError(
            f"sort plan length {fwd.shape[-1]} != token count {tokens.shape[1]}")
    return scatter_tokens(selective_scan(gather_tokens(tokens, fwd), ssm), inv)


def bhs_apply(x: Tensor, plan, ssm: SsmParams) -> Tensor:
    """Brightness hierarchy scan: sort tokens, scan once, unsort."""
    b, c, h, w = x.shape
    return unflatten_tokens(_sorted_scan(flatten_tokens(x), plan, ssm), h, w)


def shs_apply(x: Tensor, plan, ssm: SsmParams) -> Tensor:
    """Semantic hierarchy scan; identical mechanics with a semantic plan."""
    return bhs_apply(x, plan, ssm)


# -- residual units -----------------------------------------------------------------


def sub_block_tokens(tokens: Tensor, state: SubBlockState, mixer) -> Tensor:
    h = layer_norm(tokens, state.ln1_gamma, state.ln1_beta, axis=-1)
    tokens = tokens + (matmul(mixer(h), state.out_w) + state.out_b)
    h2 = layer_norm(tokens, state.ln2_gamma, state.ln2_beta, axis=-1)
    mlp = matmul(gelu(matmul(h2, state.mlp_w1) + state.mlp_b1), state.mlp_w2) + state.mlp_b2
    return tokens + mlp


def mamba_block_forward(x: Tensor, block: BsmambaBlockState, kind: str, plan) -> Tensor:
    """One brightness or semantic residual unit on a [B,C,H,W] map."""
    if kind not in block.subs:
        raise ConfigError(f"block has no {kind!r} sub-block (composition {block.composition})")
    b, c, h, w = x.shape
    state = block.subs[kind]
    tokens = flatten_tokens(x)
    out = sub_block_tokens(tokens, state, lambda t: _sorted_scan(t, plan, state.ssms[0]))
    return unflatten_tokens(out, h, w)


def block_forward(x: Tensor, block: BsmambaBlockState, plans: dict) -> Tensor:
    """Full BSMamba block under the configured composition mode."""
    comp = block.composition
    b, c, h, w = x.shape
    if comp == "sequential_bs":
        x = mamba_block_forward(x, block, "brightness", plans["brightness"])
        return mamba_block_forward(x, block, "semantic", plans["semantic"])
    if comp == "sequential_sb":
        x = mamba_block_forward(x, block, "semantic", plans["semantic"])
        return mamba_block_forward(x, block, "brightness", plans["brightness"])
    if comp == "parallel_sum":
        yb = mamba_block_forward(x, block, "brightness", plans["brightness"])
        ys = mamba_block_forward(x, block, "semantic", plans["semantic"])
        return (yb + ys) * 0.5
    if comp == "parallel_concat":
        half = c // 2
        xb = narrow(x, 1, 0, half)
        xs = narrow(x, 1, half, half)
        yb = mamba_block_forward(xb, block, "brightness", plans["brightness"])
        ys = mamba_block_forward(xs, block, "semantic", plans["semantic"])
        return concat([yb, ys], axis=1)
    if comp == "vanilla_ss2d":
        state = block.subs["vanilla"]
        tokens = flatten_tokens(x)

        def mixer(t):
            return flatten_tokens(ss2d_vanilla(unflatten_tokens(t, h, w), state.ssms))

        return unflatten_tokens(sub_block_tokens(tokens, state, mixer), h, w)
    raise ConfigError(f"unknown composition {comp!r}")


# -- backbone -----------------------------------------------------------------------


def stack_plans(maps: list[HierarchyMap], h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-image sort plans as stacked [B,L] forward/inverse index arrays."""
    fwds, invs = [], []
    for m in maps:
        if m.shape != (h, w):
            if m.shape[0] % h == 0 and m.shape[1] % w == 0:
                m = downsample_map(m, (h, w))
            else:
                raise ShapeError(f"score map {m.shape} does not match token grid {(h, w)}")
        plan = build_sort_plan(m)
        fwds.append(plan.forward_index)
        invs.append(plan.inverse_index)
    return np.stack(fwds), np.stack(invs)


def _logit(image: Tensor) -> Tensor:
    p = clamp(image, 1e-4, 1.0 - 1e-4)
    return log(p) - log(1.0 - p)


def backbone_forward(image: Tensor, model, maps: dict) -> tuple[Tensor, Tensor]:
    """Stem conv, four BSMamba blocks, sigmoid head with input logit skip.

    maps: {"brightness": [HierarchyMap]*B, "semantic": [HierarchyMap]*B}.
    Returns (features [B,C,H,W], intermediate image [B,3,H,W]).
    """
    b, cin, h, w = image.shape
    if cin != 3:
        raise ShapeError(f"backbone: expected RGB input, got {image.shape}")
    if h < 16 or w < 16 or (h & (h - 1)) or (w & (w - 1)):
        raise ShapeError(f"backbone: spatial dims {(h, w)} must be powers of two >= 16")
    for kind in ("brightness", "semantic"):
        if kind not in maps or len(maps[kind]) != b:
            raise ShapeError(f"backbone: need {b} {kind} maps")

    scan_counter.reset()
    plans = {kind: stack_plans(maps[kind], h, w) for kind in ("brightness", "semantic")}

    x = conv2d(image, model.stem_w, padding=1) + model.stem_b.reshape((1, -1, 1, 1))
    for block in model.blocks:
        x = block_forward(x, block, plans)
    head = conv2d(x, model.head_w, padding=1) + model.head_b.reshape((1, 3, 1, 1))
    intermediate = sigmoid(head + _logit(image))
    return x, intermediate
