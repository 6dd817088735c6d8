"""Shared CNN stem, k parallel experts and their content/style heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import DimensionError, Tensor, ops
from .haa import HaaConfig, hae_block_forward, init_hae_block

IMAGE_SHAPE = (1, 32, 32)
STEM_WIDTH = 8


@dataclass(frozen=True)
class EncoderConfig:
    k: int = 3
    haa: HaaConfig = field(default_factory=HaaConfig)
    blocks_per_expert: int = 2
    use_hae: bool = True  # False swaps every block for conv3x3 + GELU

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"a mixture needs k >= 2 experts, got {self.k}")
        if self.blocks_per_expert < 1:
            raise ValueError("blocks_per_expert must be >= 1")


@dataclass
class ExpertBundle:
    f: Tensor
    f_c: Tensor
    f_s: Tensor


def _conv_bias(x: Tensor, w: Tensor, b: Tensor, stride: int, pad: int) -> Tensor:
    y = ops.conv2d(x, w, stride=stride, pad=pad)
    return y + ops.reshape(b, (b.shape[0], 1, 1))


def init_encoder(rng: np.random.Generator, cfg: EncoderConfig, dtype=np.float32) -> nn.Params:
    c = cfg.haa.c_bar
    p = {
        "stem.conv1.w": nn.normal(rng, (STEM_WIDTH, 1, 3, 3), 9, dtype),
        "stem.conv1.b": nn.zeros(STEM_WIDTH, dtype),
        "stem.conv2.w": nn.normal(rng, (c, STEM_WIDTH, 3, 3), 9 * STEM_WIDTH, dtype),
        "stem.conv2.b": nn.zeros(c, dtype),
    }
    for i in range(cfg.k):
        for j in range(cfg.blocks_per_expert):
            if cfg.use_hae:
                block = init_hae_block(rng, cfg.haa, dtype)
            else:
                block = {"conv.w": nn.normal(rng, (c, c, 3, 3), 9 * c, dtype), "conv.b": nn.zeros(c, dtype)}
            p.update(nn.prefixed(f"expert{i}.block{j}", block))
        p[f"head{i}.content"] = nn.normal(rng, (c, c), c, dtype)
        p[f"head{i}.style"] = nn.normal(rng, (c, c), c, dtype)
    return p


def stem_forward(x: Tensor, params: nn.Params) -> Tensor:
    if x.shape[-3:] != IMAGE_SHAPE or x.ndim not in (3, 4):
        raise DimensionError(f"stem expects (N,)1x32x32 images, got {x.shape}")
    h = ops.gelu(_conv_bias(x, params["stem.conv1.w"], params["stem.conv1.b"], 2, 1))
    return ops.gelu(_conv_bias(h, params["stem.conv2.w"], params["stem.conv2.b"], 2, 1))


def expert_forward(z: Tensor, params: nn.Params, i: int, cfg: EncoderConfig) -> Tensor:
    f = z
    for j in range(cfg.blocks_per_expert):
        block = nn.scope(params, f"expert{i}.block{j}")
        if cfg.use_hae:
            f = hae_block_forward(f, block, cfg.haa)
        else:
            f = ops.gelu(_conv_bias(f, block["conv.w"], block["conv.b"], 1, 1))
    return f


def encode(x: Tensor, params: nn.Params, cfg: EncoderConfig) -> list[ExpertBundle]:
    """One bundle per expert; the stem output is computed once and shared."""
    z = stem_forward(x, params)
    bundles = []
    for i in range(cfg.k):
        f = expert_forward(z, params, i, cfg)
        bundles.append(
            ExpertBundle(
                f=f,
                f_c=ops.channel_linear(f, params[f"head{i}.content"]),
                f_s=ops.channel_linear(f, params[f"head{i}.style"]),
            )
        )
    return bundles


def _spatial_mean(t: Tensor) -> Tensor:
    return ops.mean(t, axis=(-2, -1))


def pool_style(bundles: list[ExpertBundle]) -> Tensor:
    """Expert-ordered concatenation of spatially averaged style maps, length k·C."""
    return ops.concat([_spatial_mean(b.f_s) for b in bundles], axis=-1)


def pool_content(bundles: list[ExpertBundle]) -> Tensor:
    return ops.concat([_spatial_mean(b.f_c) for b in bundles], axis=-1)
