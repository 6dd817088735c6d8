"""The 64-bit gradient verification suite behind ``mxfontpp gradcheck``.

Each case builds fresh float64 parameters and a scalar closure.  Array-valued
ops are reduced with a fixed random projection so every output entry carries
weight.  Kinked ops (abs, relu, clamp) get inputs kept away from their kinks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .autodiff import GradCheckReport, Tensor, grad_check, ops
from .glyphgen import build_charset, make_fonts, render_glyph
from .haa import HaaConfig, channel_attention, haa_forward, hae_block_forward, init_hae_block, spatial_attention
from .heads import (
    LossWeights,
    csh_loss,
    d_hinge_loss,
    discriminate,
    g_hinge_loss,
    match_components,
    style_classify,
    total_loss,
)
from .model import group, init_model, model_config
from .trainer import Batch, generator_parts

F64 = np.float64
# sampled coordinates per parameter block for the whole-model objectives
MODEL_ENTRIES = 4

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor]]]


def _leaf(rng, shape, lo=None, hi=None, away=0.0) -> Tensor:
    if lo is not None:
        x = rng.uniform(lo, hi, size=shape)
    else:
        x = rng.standard_normal(shape)
    if away:
        x = np.where(np.abs(x) < away, np.sign(x + 1e-12) * away + x, x)
    return Tensor(x.astype(F64), requires_grad=True)


def _project(rng, out_fn):
    """Scalar sum(out * R) for a fixed random R drawn on first use."""
    weights: dict[int, np.ndarray] = {}

    def f():
        outs = out_fn()
        outs = outs if isinstance(outs, tuple) else (outs,)
        total = None
        for i, out in enumerate(outs):
            if i not in weights:
                weights[i] = rng.standard_normal(out.shape)
            term = ops.sum(out * Tensor(weights[i]))
            total = term if total is None else total + term
        return total

    return f


def _unary(op, **leaf_kw) -> Case:
    def build(rng):
        x = _leaf(rng, (3, 4), **leaf_kw)
        return _project(rng, lambda: op(x)), {"x": x}

    return build


def _binary(op, shape_b=(4,), **leaf_kw) -> Case:
    def build(rng):
        a = _leaf(rng, (3, 4))
        b = _leaf(rng, shape_b, **leaf_kw)
        return _project(rng, lambda: op(a, b)), {"a": a, "b": b}

    return build


def _case_clamp(rng):
    x = rng.uniform(-1.0, 1.0, size=(3, 4))
    # keep every entry at least 0.1 from the clamp bounds
    x = np.where(np.abs(np.abs(x) - 0.5) < 0.1, x * 0.6, x)
    x = Tensor(x, requires_grad=True)
    return _project(rng, lambda: ops.clamp(x, -0.5, 0.5)), {"x": x}


def _case_matmul(rng):
    a, b = _leaf(rng, (5, 4)), _leaf(rng, (4, 3))
    return _project(rng, lambda: ops.matmul(a, b)), {"a": a, "b": b}


def _case_softmax(rng):
    x = _leaf(rng, (3, 5))
    return _project(rng, lambda: ops.softmax(x, axis=-1)), {"x": x}


def _case_layer_norm(rng):
    x, g, b = _leaf(rng, (2, 6, 3, 3)), _leaf(rng, (6,)), _leaf(rng, (6,))
    return _project(rng, lambda: ops.layer_norm(x, g, b, axis=-3)), {"x": x, "gain": g, "bias": b}


def _case_conv2d(rng):
    x, w = _leaf(rng, (2, 3, 6, 6)), _leaf(rng, (4, 3, 3, 3))
    return _project(rng, lambda: ops.conv2d(x, w, stride=2, pad=1)), {"x": x, "kernel": w}


def _case_avg_pool(rng):
    x = _leaf(rng, (2, 4, 4))
    return _project(rng, lambda: ops.avg_pool2d(x, 2)), {"x": x}


def _case_upsample(rng):
    x = _leaf(rng, (2, 3, 3))
    return _project(rng, lambda: ops.upsample2x(x)), {"x": x}


def _case_chunk_concat(rng):
    z = _leaf(rng, (4, 3, 3))
    return _project(rng, lambda: ops.concat_channels(ops.chunk_channels(z))), {"z": z}


def _case_chunk(rng):
    z = _leaf(rng, (4, 3, 3))
    return _project(rng, lambda: ops.chunk_channels(z)), {"z": z}


def _case_concat_channels(rng):
    a, b = _leaf(rng, (2, 3, 3)), _leaf(rng, (3, 3, 3))
    return _project(rng, lambda: ops.concat_channels([a, b])), {"a": a, "b": b}


def _case_channel_linear(rng):
    x, w, b = _leaf(rng, (2, 3, 4, 4)), _leaf(rng, (5, 3)), _leaf(rng, (5,))
    return _project(rng, lambda: ops.channel_linear(x, w, b)), {"x": x, "w": w, "b": b}


def _case_cross_entropy(rng):
    x = _leaf(rng, (4, 6))
    labels = rng.integers(0, 6, size=4)
    return _project(rng, lambda: ops.cross_entropy(x, labels)), {"logits": x}


def _case_take(rng):
    x = _leaf(rng, (5, 3))
    idx = np.array([0, 3, 3, 1])
    return _project(rng, lambda: ops.take(x, idx, axis=0)), {"x": x}


def _case_slice(rng):
    x = _leaf(rng, (4, 5))
    return _project(rng, lambda: ops.slice_axis(x, 1, 4, axis=1)), {"x": x}


def _case_concat(rng):
    a, b = _leaf(rng, (2, 3)), _leaf(rng, (4, 3))
    return _project(rng, lambda: ops.concat([a, b], axis=0)), {"a": a, "b": b}


def _case_shape(rng):
    x = _leaf(rng, (2, 3, 4))
    return _project(rng, lambda: ops.transpose(ops.reshape(x, (6, 4)), (1, 0))), {"x": x}


def _case_reduce(rng):
    x = _leaf(rng, (2, 3, 4))
    return _project(rng, lambda: (ops.sum(x, axis=1), ops.mean(x, axis=(0, 2)), ops.mean(x))), {"x": x}


# -- composites -----------------------------------------------------------------

_HAA = HaaConfig(c_bar=8, h_bar=4, w_bar=4, s=2, ffn_mult=2)


def _block_params(rng, cfg=_HAA) -> dict[str, Tensor]:
    params = init_hae_block(rng, cfg, F64)
    # non-zero biases so every bias path carries signal
    for name in ("ln1.b", "ln2.b", "ffn.b1", "ffn.b2", "spatial.bo", "channel.bo"):
        params[name].data = 0.1 * rng.standard_normal(params[name].shape)
    return params


def _case_channel_attention(rng):
    params = nn.scope(_block_params(rng), "channel")
    z = _leaf(rng, (4, 4, 4))
    return _project(rng, lambda: channel_attention(z, params)), {"z": z, **params}


def _case_spatial_attention(rng):
    params = nn.scope(_block_params(rng), "spatial")
    z = _leaf(rng, (4, 4, 4))
    return _project(rng, lambda: spatial_attention(z, params, 2)), {"z": z, **params}


def _case_haa(rng):
    params = _block_params(rng)
    z = _leaf(rng, (8, 4, 4))
    return _project(rng, lambda: haa_forward(z, params, _HAA)), {"z": z, **group(params, ("spatial", "channel"))}


def _case_hae_block(rng):
    params = _block_params(rng)
    z = _leaf(rng, (2, 8, 4, 4))
    return _project(rng, lambda: hae_block_forward(z, params, _HAA)), {"z": z, **params}


def _case_csh(rng):
    a, b = _leaf(rng, (6,)), _leaf(rng, (6,))
    return (lambda: csh_loss(a, b)), {"f_s": a, "f_c": b}


def _case_match(rng):
    logits = _leaf(rng, (2, 3, 11))
    gt = [frozenset({1, 4}), frozenset({7})]
    return (lambda: match_components(logits, gt)[1]), {"logits": logits}


def _case_style_ce(rng):
    f = _leaf(rng, (3, 12))
    params = {"style.w": _leaf(rng, (12, 5)), "style.b": _leaf(rng, (5,))}
    labels = np.array([0, 4, 2])
    return (lambda: ops.mean(ops.cross_entropy(style_classify(f, params), labels))), {"f_s": f, **params}


OP_CASES: dict[str, Case] = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "div": _binary(ops.div, lo=0.5, hi=2.0),
    "sqrt": _unary(ops.sqrt, lo=0.5, hi=2.0),
    "abs": _unary(ops.abs, away=0.1),
    "relu": _unary(ops.relu, away=0.1),
    "clamp": _case_clamp,
    "sigmoid": _unary(ops.sigmoid),
    "gelu": _unary(ops.gelu),
    "matmul": _case_matmul,
    "softmax": _case_softmax,
    "layer_norm": _case_layer_norm,
    "conv2d": _case_conv2d,
    "avg_pool2d": _case_avg_pool,
    "upsample2x": _case_upsample,
    "chunk_channels": _case_chunk,
    "concat_channels": _case_concat_channels,
    "concat_channels∘chunk_channels": _case_chunk_concat,
    "channel_linear": _case_channel_linear,
    "cross_entropy": _case_cross_entropy,
    "take": _case_take,
    "slice": _case_slice,
    "concat": _case_concat,
    "reshape+transpose": _case_shape,
    "sum+mean": _case_reduce,
    "channel_attention": _case_channel_attention,
    "spatial_attention": _case_spatial_attention,
    "haa_forward": _case_haa,
    "hae_block": _case_hae_block,
    "csh_loss": _case_csh,
    "match_components": _case_match,
    "style_ce": _case_style_ce,
}


# -- whole model ------------------------------------------------------------------

def tiny_batch(seed: int = 0, n: int = 2, r: int = 2, n_fonts: int = 4) -> tuple[Batch, Callable]:
    """A small paired batch rendered directly, without a dataset on disk."""
    charset = build_charset(12, seed)
    fonts = make_fonts(n_fonts, seed)
    rng = np.random.default_rng([seed, 0x6C])
    image = lambda c, f: render_glyph(charset[c], fonts[f]).image.reshape(1, 32, 32)
    font_ids = rng.integers(0, n_fonts, size=n)
    content_chars = rng.choice(len(charset), size=n, replace=False)
    content_fonts = rng.integers(0, n_fonts, size=n)
    style_chars = np.stack([rng.choice([c for c in range(len(charset)) if c != cc], r, replace=False) for cc in content_chars])
    comp = lambda c: frozenset(charset[c].components)
    batch = Batch(
        content_images=np.stack([image(c, f) for c, f in zip(content_chars, content_fonts)]),
        content_chars=content_chars,
        content_fonts=content_fonts,
        style_images=np.stack([[image(c, f) for c in cs] for cs, f in zip(style_chars, font_ids)]),
        style_chars=style_chars,
        font_ids=font_ids,
        target_images=np.stack([image(c, f) for c, f in zip(content_chars, font_ids)]),
        comp_gt=[comp(c) for c in content_chars],
    )
    return batch, comp


def model_objectives(variant: str = "full", seed: int = 0):
    """Float64 model parameters plus closures for the generator and discriminator objectives."""
    batch, comp = tiny_batch(seed)
    mcfg = model_config(variant, n_fonts=4)
    params = init_model(seed, mcfg, F64)
    disc = nn.scope(params, "disc")
    weights = LossWeights()

    def g_objective() -> Tensor:
        fake, parts = generator_parts(batch, params, mcfg, comp)
        parts["adv_g"] = g_hinge_loss(discriminate(fake, batch.font_ids, disc))
        return total_loss(parts, weights).objective

    def d_objective() -> Tensor:
        fake, _ = generator_parts(batch, params, mcfg, comp)
        target = Tensor(batch.target_images)
        return d_hinge_loss(discriminate(target, batch.font_ids, disc), discriminate(fake.detach(), batch.font_ids, disc))

    return params, g_objective, d_objective


@dataclass
class SuiteResult:
    report: GradCheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed


def _merge(into: GradCheckReport, prefix: str, part: GradCheckReport) -> None:
    for b in part.blocks:
        b.name = f"{prefix}:{b.name}"
        into.blocks.append(b)


def run_suite(
    h: float = 1e-5,
    tol: float = 1e-4,
    seed: int = 0,
    model_entries: int = MODEL_ENTRIES,
    include_model: bool = True,
    only: list[str] | None = None,
) -> SuiteResult:
    """Every op case, then the generator and discriminator objectives of the full model."""
    started = time.perf_counter()
    report = GradCheckReport(tol=tol)
    for name, build in OP_CASES.items():
        if only is not None and name not in only:
            continue
        rng = np.random.default_rng([seed, len(name), sum(map(ord, name))])
        f, params = build(rng)
        _merge(report, name, grad_check(f, params, h=h, tol=tol))
    if include_model:
        params, g_obj, d_obj = model_objectives("full", seed)
        g_params = group(params, ("enc.", "cls.", "gen."))
        d_params = group(params, ("disc.",))
        _merge(report, "model.G", grad_check(g_obj, g_params, h, tol, max_entries=model_entries, seed=seed))
        _merge(report, "model.D", grad_check(d_obj, d_params, h, tol, max_entries=model_entries, seed=seed))
    return SuiteResult(report, time.perf_counter() - started)
