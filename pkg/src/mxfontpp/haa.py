"""Heterogeneous aggregation attention and the pre-norm expert block built on it.

The attention splits its input along channels.  The first half goes through
spatial attention, where every position queries average-pooled keys and
values.  The second half goes through channel attention, where every channel
(flattened over H×W) queries the other channels.  The two outputs are
concatenated back in that order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import DimensionError, Tensor, ops


@dataclass(frozen=True)
class HaaConfig:
    c_bar: int = 16
    h_bar: int = 8
    w_bar: int = 8
    s: int = 2
    ffn_mult: int = 2

    def __post_init__(self):
        if self.c_bar % 2:
            raise ValueError(f"c_bar must be even, got {self.c_bar}")
        if self.s < 1 or self.h_bar % self.s or self.w_bar % self.s:
            raise ValueError(f"pool factor {self.s} must divide {self.h_bar}x{self.w_bar}")
        if self.ffn_mult < 1:
            raise ValueError("ffn_mult must be >= 1")


def init_hae_block(rng: np.random.Generator, cfg: HaaConfig, dtype=np.float32) -> nn.Params:
    c, half, hidden = cfg.c_bar, cfg.c_bar // 2, cfg.c_bar * cfg.ffn_mult
    p = {
        "ln1.g": nn.ones(c, dtype),
        "ln1.b": nn.zeros(c, dtype),
        "ln2.g": nn.ones(c, dtype),
        "ln2.b": nn.zeros(c, dtype),
        "ffn.w1": nn.normal(rng, (hidden, c), c, dtype),
        "ffn.b1": nn.zeros(hidden, dtype),
        "ffn.w2": nn.normal(rng, (c, hidden), hidden, dtype),
        "ffn.b2": nn.zeros(c, dtype),
    }
    for branch in ("spatial", "channel"):
        for w in ("wq", "wk", "wv", "wo"):
            p[f"{branch}.{w}"] = nn.normal(rng, (half, half), half, dtype)
        p[f"{branch}.bo"] = nn.zeros(half, dtype)
    return p


def _swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return ops.transpose(x, axes)


def _flat(x: Tensor) -> Tensor:
    return ops.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def channel_attention(z_c: Tensor, params: nn.Params, return_attention: bool = False):
    """Self-attention among channels; the attention map is (C/2)×(C/2)."""
    if z_c.ndim not in (3, 4) or z_c.shape[-3] != params["wq"].shape[1]:
        raise DimensionError(f"channel_attention: input {z_c.shape} vs weights {params['wq'].shape}")
    hw = z_c.shape[-2] * z_c.shape[-1]
    q = _flat(ops.channel_linear(z_c, params["wq"]))
    k = _flat(ops.channel_linear(z_c, params["wk"]))
    v = _flat(ops.channel_linear(z_c, params["wv"]))
    attn = ops.softmax(ops.matmul(q, _swap_last(k)) * (1.0 / math.sqrt(hw)), axis=-1)
    mixed = ops.reshape(ops.matmul(attn, v), z_c.shape)
    out = ops.channel_linear(mixed, params["wo"], params["bo"])
    return (out, attn) if return_attention else out


def spatial_attention(z_s: Tensor, params: nn.Params, s: int, return_attention: bool = False):
    """Positions attend over s×s mean-pooled keys/values; map is (H·W)×(H·W/s²)."""
    if z_s.ndim not in (3, 4) or z_s.shape[-3] != params["wq"].shape[1]:
        raise DimensionError(f"spatial_attention: input {z_s.shape} vs weights {params['wq'].shape}")
    d = z_s.shape[-3]
    pooled = ops.avg_pool2d(z_s, s)
    q = _swap_last(_flat(ops.channel_linear(z_s, params["wq"])))  # (.., HW, d)
    k = _flat(ops.channel_linear(pooled, params["wk"]))  # (.., d, M)
    v = _flat(ops.channel_linear(pooled, params["wv"]))  # (.., d, M)
    attn = ops.softmax(ops.matmul(q, k) * (1.0 / math.sqrt(d)), axis=-1)
    mixed = ops.reshape(ops.matmul(v, _swap_last(attn)), z_s.shape)
    out = ops.channel_linear(mixed, params["wo"], params["bo"])
    return (out, attn) if return_attention else out


def haa_forward(z: Tensor, params: nn.Params, cfg: HaaConfig) -> Tensor:
    if z.shape[-3:] != (cfg.c_bar, cfg.h_bar, cfg.w_bar):
        raise DimensionError(f"haa_forward: got {z.shape}, config wants {(cfg.c_bar, cfg.h_bar, cfg.w_bar)}")
    z_s, z_c = ops.chunk_channels(z)
    return ops.concat_channels(
        [
            spatial_attention(z_s, nn.scope(params, "spatial"), cfg.s),
            channel_attention(z_c, nn.scope(params, "channel")),
        ]
    )


def ffn_forward(x: Tensor, params: nn.Params) -> Tensor:
    hidden = ops.gelu(ops.channel_linear(x, params["w1"], params["b1"]))
    return ops.channel_linear(hidden, params["w2"], params["b2"])


def hae_block_forward(z: Tensor, params: nn.Params, cfg: HaaConfig) -> Tensor:
    """Two pre-norm residual sublayers: attention, then a per-position FFN."""
    z1 = z + haa_forward(ops.layer_norm(z, params["ln1.g"], params["ln1.b"], axis=-3), params, cfg)
    h = ops.layer_norm(z1, params["ln2.g"], params["ln2.b"], axis=-3)
    return z1 + ffn_forward(h, nn.scope(params, "ffn"))
