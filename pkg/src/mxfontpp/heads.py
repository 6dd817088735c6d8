"""Classifiers, component matching, content-style homogeneity loss, G and D."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels, nn
from .autodiff import DimensionError, NonFiniteError, Tensor, ops
from .encoder import ExpertBundle

DISC_WIDTHS = (8, 16, 32)
DECODER_WIDTH = 8
CSH_NORM_EPS = 1e-8
# sigmoid(2.2) ~ 0.9: glyphs are mostly white, so the decoder starts near the background
OUTPUT_BIAS_INIT = 2.2


# --------------------------------------------------------------------------
# classifiers
# --------------------------------------------------------------------------

def init_classifiers(
    rng: np.random.Generator, k: int, c_bar: int, n_fonts: int, n_components: int, dtype=np.float32
) -> nn.Params:
    return {
        "style.w": nn.normal(rng, (k * c_bar, n_fonts), k * c_bar, dtype),
        "style.b": nn.zeros(n_fonts, dtype),
        "content.w": nn.normal(rng, (c_bar, n_components + 1), c_bar, dtype),
        "content.b": nn.zeros(n_components + 1, dtype),
    }


def _linear(x: Tensor, w: Tensor, b: Tensor, what: str) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"{what}: feature length {x.shape[-1]} != {w.shape[0]}")
    if x.ndim == 1:
        return ops.reshape(ops.matmul(ops.reshape(x, (1, -1)), w), (w.shape[1],)) + b
    return ops.matmul(x, w) + b


def style_classify(f_s: Tensor, params: nn.Params) -> Tensor:
    """Font logits from a pooled, expert-concatenated style vector."""
    return _linear(f_s, params["style.w"], params["style.b"], "style_classify")


def content_classify(f_c: Tensor, params: nn.Params) -> Tensor:
    """Component logits (last class is the null component) from one expert's pooled content."""
    return _linear(f_c, params["content.w"], params["content.b"], "content_classify")


# --------------------------------------------------------------------------
# component matching
# --------------------------------------------------------------------------

def padded_labels(comp_gt: Iterable[int], k: int, null_label: int) -> np.ndarray:
    gt = sorted(comp_gt)
    if len(gt) > k:
        raise ValueError(f"{len(gt)} ground-truth components cannot be matched to {k} experts")
    return np.asarray(gt + [null_label] * (k - len(gt)), dtype=np.int64)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def match_components(per_expert_logits: Tensor, comp_gt) -> tuple[np.ndarray, Tensor]:
    """Cheapest one-to-one pairing of experts with the null-padded component set.

    ``per_expert_logits`` is (k, P+1) with one ``comp_gt`` set, or (N, k, P+1)
    with a sequence of N sets.  Returns the label assigned to each expert and the
    matched cross-entropy averaged over experts (and items).
    """
    batched = per_expert_logits.ndim == 3
    logits = per_expert_logits if batched else ops.reshape(per_expert_logits, (1,) + per_expert_logits.shape)
    sets = list(comp_gt) if batched else [comp_gt]
    n, k, n_cls = logits.shape
    if len(sets) != n:
        raise DimensionError(f"{len(sets)} component sets for {n} logit rows")
    logp = _log_softmax(logits.data.astype(np.float64))
    labels = np.empty((n, k), dtype=np.int64)
    for b, gt in enumerate(sets):
        padded = padded_labels(gt, k, n_cls - 1)
        cost = -logp[b][:, padded]  # expert × padded-label
        labels[b] = padded[kernels.linear_assignment(cost)]
    loss = ops.mean(ops.cross_entropy(logits, labels))
    return (labels if batched else labels[0]), loss


# --------------------------------------------------------------------------
# content-style homogeneity
# --------------------------------------------------------------------------

def csh_loss(f_s: Tensor, f_c: Tensor) -> Tensor:
    """(cos(f_s, f_c) + 1) / 2 per row, averaged over rows.

    Rows where either vector has norm below 1e-8 contribute a constant 0.5.
    """
    if f_s.shape != f_c.shape:
        raise DimensionError(f"csh_loss shapes differ: {f_s.shape} vs {f_c.shape}")
    ss = ops.sum(f_s * f_s, axis=-1)
    cc = ops.sum(f_c * f_c, axis=-1)
    degenerate = (np.sqrt(ss.data) < CSH_NORM_EPS) | (np.sqrt(cc.data) < CSH_NORM_EPS)
    valid = (~degenerate).astype(f_s.dtype)
    pad = degenerate.astype(f_s.dtype)
    cos = ops.sum(f_s * f_c, axis=-1) / (ops.sqrt(ss + pad) * ops.sqrt(cc + pad))
    cos = ops.clamp(cos, -1.0, 1.0)
    per_row = (cos + 1.0) * (0.5 * valid) + 0.5 * pad
    return ops.mean(per_row)


# --------------------------------------------------------------------------
# generator
# --------------------------------------------------------------------------

def init_generator(rng: np.random.Generator, k: int, c_bar: int, dtype=np.float32) -> nn.Params:
    return {
        "fuse.w": nn.normal(rng, (c_bar, 2 * k * c_bar), 2 * k * c_bar, dtype),
        "fuse.b": nn.zeros(c_bar, dtype),
        "up1.w": nn.normal(rng, (DECODER_WIDTH, c_bar, 3, 3), 9 * c_bar, dtype),
        "up1.b": nn.zeros(DECODER_WIDTH, dtype),
        "up2.w": nn.normal(rng, (1, DECODER_WIDTH, 3, 3), 9 * DECODER_WIDTH, dtype),
        "up2.b": nn.param(np.full(1, OUTPUT_BIAS_INIT), dtype),
    }


def _conv_bias(x, w, b, stride, pad):
    return ops.conv2d(x, w, stride=stride, pad=pad) + ops.reshape(b, (b.shape[0], 1, 1))


def fusion_input(content: Sequence[ExpertBundle], style: Sequence[ExpertBundle]) -> Tensor:
    """Per expert (style ∘ content) along channels, experts concatenated in order."""
    if len(content) != len(style):
        raise DimensionError(f"{len(content)} content bundles vs {len(style)} style bundles")
    parts = []
    for c_b, s_b in zip(content, style):
        parts += [s_b.f_s, c_b.f_c]
    return ops.concat_channels(parts)


def generate(content: Sequence[ExpertBundle], style: Sequence[ExpertBundle], params: nn.Params) -> Tensor:
    """Decode the fused features to a 1×32×32 image in [0, 1]."""
    h = ops.gelu(ops.channel_linear(fusion_input(content, style), params["fuse.w"], params["fuse.b"]))
    h = ops.gelu(_conv_bias(ops.upsample2x(h), params["up1.w"], params["up1.b"], 1, 1))
    return ops.sigmoid(_conv_bias(ops.upsample2x(h), params["up2.w"], params["up2.b"], 1, 1))


# --------------------------------------------------------------------------
# projection discriminator
# --------------------------------------------------------------------------

def init_discriminator(rng: np.random.Generator, n_fonts: int, dtype=np.float32) -> nn.Params:
    p, c_in = {}, 1
    for i, c_out in enumerate(DISC_WIDTHS, 1):
        p[f"conv{i}.w"] = nn.normal(rng, (c_out, c_in, 3, 3), 9 * c_in, dtype)
        p[f"conv{i}.b"] = nn.zeros(c_out, dtype)
        c_in = c_out
    p["patch.w"] = nn.normal(rng, (1, c_in), c_in, dtype)
    p["patch.b"] = nn.zeros(1, dtype)
    p["embed"] = nn.normal(rng, (n_fonts, c_in), c_in, dtype)
    return p


def discriminate(image: Tensor, font_id, params: nn.Params) -> Tensor:
    """Mean patch realness plus embedding(font) · pooled trunk feature.

    Returns a scalar for one (1, 32, 32) image or an (N,) vector for a batch.
    """
    batched = image.ndim == 4
    x = image if batched else ops.reshape(image, (1,) + image.shape)
    fonts = np.atleast_1d(np.asarray(font_id, dtype=np.int64))
    if fonts.shape[0] != x.shape[0]:
        raise DimensionError(f"{fonts.shape[0]} font ids for {x.shape[0]} images")
    n_fonts = params["embed"].shape[0]
    if fonts.min() < 0 or fonts.max() >= n_fonts:
        raise ValueError(f"font id outside the {n_fonts} training fonts")
    h = x
    for i in range(1, len(DISC_WIDTHS) + 1):
        h = ops.gelu(_conv_bias(h, params[f"conv{i}.w"], params[f"conv{i}.b"], 2, 1))
    realness = ops.mean(ops.channel_linear(h, params["patch.w"], params["patch.b"]), axis=(-3, -2, -1))
    pooled = ops.mean(h, axis=(-2, -1))
    projection = ops.sum(ops.take(params["embed"], fonts, axis=0) * pooled, axis=-1)
    score = realness + projection
    return score if batched else ops.reshape(score, ())


def d_hinge_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    return ops.mean(ops.relu(1.0 - real_scores)) + ops.mean(ops.relu(1.0 + fake_scores))


def g_hinge_loss(fake_scores: Tensor) -> Tensor:
    return -ops.mean(fake_scores)


# --------------------------------------------------------------------------
# objective
# --------------------------------------------------------------------------

RECON_LOSSES = ("l2", "l1")


def reconstruction_loss(fake: Tensor, target: Tensor, kind: str = "l2") -> Tensor:
    """Mean pixel error between generated and ground-truth glyphs.

    "l2" is the default.  With "l1" the sigmoid decoder tends to collapse to a
    blank page: every background pixel sits below 1.0 and pushes the output up
    with the same force as an ink pixel pushes it down.
    """
    if fake.shape != target.shape:
        raise DimensionError(f"reconstruction shapes differ: {fake.shape} vs {target.shape}")
    diff = fake - target
    if kind == "l2":
        return ops.mean(diff * diff)
    if kind == "l1":
        return ops.mean(ops.abs(diff))
    raise ValueError(f"reconstruction loss must be one of {RECON_LOSSES}, got {kind!r}")


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    recon: float = 50.0
    style: float = 1.0
    content: float = 1.0
    csh: float = 1.0

    def as_tuple(self) -> tuple[float, ...]:
        return (self.adv, self.recon, self.style, self.content, self.csh)


# generator-objective parts in weight order
TERMS = ("adv_g", "recon", "style_ce", "content_ce", "csh")
REPORT_FIELDS = ("adv_g", "adv_d", "recon", "style_ce", "content_ce", "csh", "total")


@dataclass
class LossReport:
    adv_g: float
    adv_d: float
    recon: float
    style_ce: float
    content_ce: float
    csh: float
    total: float
    weights: tuple[float, ...]
    objective: Tensor | float | None = field(default=None, repr=False, compare=False)

    def row(self) -> list[float]:
        return [getattr(self, f) for f in REPORT_FIELDS]


def _value(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def total_loss(parts: Mapping[str, Tensor | float], weights: LossWeights | Sequence[float]) -> LossReport:
    """Weighted generator objective; ``adv_d`` is carried along for reporting only."""
    w = weights.as_tuple() if isinstance(weights, LossWeights) else tuple(float(v) for v in weights)
    if len(w) != len(TERMS):
        raise ValueError(f"expected {len(TERMS)} weights, got {len(w)}")
    values = {name: _value(parts.get(name, 0.0)) for name in TERMS + ("adv_d",)}
    for name, v in values.items():
        if not np.isfinite(v):
            raise NonFiniteError(f"loss part {name} is not finite ({v})")
    objective = None
    for name, lam in zip(TERMS, w):
        part = parts.get(name, 0.0)
        if lam == 0.0:
            continue
        objective = part * lam if objective is None else objective + part * lam
    total = float(sum(lam * values[name] for name, lam in zip(TERMS, w)))
    return LossReport(
        adv_g=values["adv_g"],
        adv_d=values["adv_d"],
        recon=values["recon"],
        style_ce=values["style_ce"],
        content_ce=values["content_ce"],
        csh=values["csh"],
        total=total,
        weights=w,
        objective=objective if objective is not None else 0.0,
    )
