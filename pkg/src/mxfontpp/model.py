"""Whole-model parameter layout and the shared forward passes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import Tensor, no_grad, ops
from .encoder import EncoderConfig, ExpertBundle, encode, init_encoder, pool_content, pool_style
from .glyphgen import N_COMPONENTS
from .haa import HaaConfig
from .heads import (
    content_classify,
    csh_loss,
    generate,
    init_classifiers,
    init_discriminator,
    init_generator,
    match_components,
    style_classify,
)

VARIANTS = ("full", "no_hae", "no_csh")
G_PREFIXES = ("enc.", "cls.", "gen.")
D_PREFIXES = ("disc.",)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    n_fonts: int = 12
    n_components: int = N_COMPONENTS

    @property
    def k(self) -> int:
        return self.encoder.k


def model_config(
    variant: str = "full",
    k: int = 3,
    c_bar: int = 16,
    blocks_per_expert: int = 2,
    pool: int = 2,
    ffn_mult: int = 2,
    n_fonts: int = 12,
) -> ModelConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    haa = HaaConfig(c_bar=c_bar, h_bar=8, w_bar=8, s=pool, ffn_mult=ffn_mult)
    enc = EncoderConfig(k=k, haa=haa, blocks_per_expert=blocks_per_expert, use_hae=variant != "no_hae")
    return ModelConfig(encoder=enc, n_fonts=n_fonts)


def init_model(seed: int, cfg: ModelConfig, dtype=np.float32) -> nn.Params:
    """All learnable tensors, named ``enc.*``, ``cls.*``, ``gen.*``, ``disc.*``."""
    rng = np.random.default_rng([seed, 0x6D78])
    c, k = cfg.encoder.haa.c_bar, cfg.k
    params: nn.Params = {}
    params.update(nn.prefixed("enc", init_encoder(rng, cfg.encoder, dtype)))
    params.update(nn.prefixed("cls", init_classifiers(rng, k, c, cfg.n_fonts, cfg.n_components, dtype)))
    params.update(nn.prefixed("gen", init_generator(rng, k, c, dtype)))
    params.update(nn.prefixed("disc", init_discriminator(rng, cfg.n_fonts, dtype)))
    return dict(sorted(params.items()))


def group(params: nn.Params, prefixes) -> nn.Params:
    return {k: v for k, v in params.items() if k.startswith(tuple(prefixes))}


def slice_bundles(bundles: list[ExpertBundle], start: int, stop: int) -> list[ExpertBundle]:
    return [
        ExpertBundle(*(ops.slice_axis(t, start, stop, 0) for t in (b.f, b.f_c, b.f_s)))
        for b in bundles
    ]


def average_refs(bundles: list[ExpertBundle], n: int, r: int) -> list[ExpertBundle]:
    """Mean over the r reference glyphs per item: (n·r, C, H, W) -> (n, C, H, W)."""
    out = []
    for b in bundles:
        tail = b.f.shape[1:]
        out.append(
            ExpertBundle(
                *(ops.mean(ops.reshape(t, (n, r) + tail), axis=1) for t in (b.f, b.f_c, b.f_s))
            )
        )
    return out


def content_logits(bundles: list[ExpertBundle], cls: nn.Params) -> Tensor:
    """(M, k, P+1) component logits, one row per expert."""
    rows = []
    for b in bundles:
        logits = content_classify(ops.mean(b.f_c, axis=(-2, -1)), cls)
        rows.append(ops.reshape(logits, (logits.shape[0], 1, logits.shape[1])))
    return ops.concat(rows, axis=1)


def classifier_losses(bundles, cls: nn.Params, font_labels, comp_sets) -> tuple[Tensor, Tensor, Tensor]:
    """Style cross-entropy, matched content cross-entropy and the pooled style/content vectors' L_csh."""
    f_s = pool_style(bundles)
    f_c = pool_content(bundles)
    style_ce = ops.mean(ops.cross_entropy(style_classify(f_s, cls), font_labels))
    _, content_ce = match_components(content_logits(bundles, cls), comp_sets)
    return style_ce, content_ce, csh_loss(f_s, f_c)


def synthesize(
    params: nn.Params, cfg: ModelConfig, content_images: np.ndarray, ref_images: np.ndarray
) -> np.ndarray:
    """Inference: (N,1,32,32) content glyphs + (N,r,1,32,32) style references -> images."""
    n, r = ref_images.shape[:2]
    enc = nn.scope(params, "enc")
    gen = nn.scope(params, "gen")
    dtype = next(iter(params.values())).dtype
    with no_grad():
        content = encode(Tensor(content_images, dtype=dtype), enc, cfg.encoder)
        refs = encode(Tensor(ref_images.reshape((n * r,) + ref_images.shape[2:]), dtype=dtype), enc, cfg.encoder)
        out = generate(content, average_refs(refs, n, r), gen)
    return out.data
