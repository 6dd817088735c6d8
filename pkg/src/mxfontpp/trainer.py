"""Deterministic adversarial training loop with resumable checkpoints."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .autodiff import Tape, Tensor, backward
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, parse_config_text
from .encoder import encode
from .glyphgen import Dataset
from .heads import (
    REPORT_FIELDS,
    LossReport,
    d_hinge_loss,
    discriminate,
    g_hinge_loss,
    generate,
    reconstruction_loss,
    total_loss,
)
from .model import (
    D_PREFIXES,
    G_PREFIXES,
    ModelConfig,
    average_refs,
    classifier_losses,
    group,
    init_model,
    slice_bundles,
)

log = logging.getLogger(__name__)

LOSS_LOG = "loss_log.tsv"


# --------------------------------------------------------------------------
# optimiser
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_update(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    betas: tuple[float, float],
    eps: float,
    t: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam step at (1-based) iteration ``t``."""
    if not param.shape == grad.shape == m.shape == v.shape:
        raise ValueError(f"adam_update shapes differ: {param.shape} {grad.shape} {m.shape} {v.shape}")
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    step = (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    return param - step, m.astype(param.dtype), v.astype(param.dtype)


def init_adam(params: nn.Params) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
    )


def apply_adam(params: nn.Params, names, state: AdamState, cfg: TrainConfig, t: int) -> None:
    for name in names:
        p = params[name]
        if p.grad is None:
            continue
        p.data, state.m[name], state.v[name] = adam_update(
            p.data, p.grad, state.m[name], state.v[name], cfg.lr,
            (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps, t,
        )


def zero_grads(params: nn.Params) -> None:
    for p in params.values():
        p.grad = None


# --------------------------------------------------------------------------
# batches
# --------------------------------------------------------------------------

@dataclass
class Batch:
    content_images: np.ndarray  # (N, 1, 32, 32)
    content_chars: np.ndarray
    content_fonts: np.ndarray
    style_images: np.ndarray  # (N, r, 1, 32, 32), all in font_ids[i]
    style_chars: np.ndarray  # (N, r)
    font_ids: np.ndarray
    target_images: np.ndarray  # (N, 1, 32, 32) = render(content_chars[i], font_ids[i])
    comp_gt: list[frozenset[int]]


def sample_batch(data: Dataset, cfg: TrainConfig, step: int) -> Batch:
    """Batch for ``step``; a pure function of (seed, step) so resumed runs see the same data."""
    rng = np.random.default_rng([cfg.seed, step, 0xBA7C])
    fonts = np.asarray(data.split.train_fonts)
    chars = np.asarray(data.split.train_chars)
    n, r = cfg.batch_size, cfg.n_style_refs
    if len(chars) < r + 1:
        raise ValueError(f"need at least {r + 1} training characters for {r} style references")
    font_ids = rng.choice(fonts, size=n)
    content_chars = rng.choice(chars, size=n)
    if cfg.content_font == "base":
        content_fonts = np.full(n, data.base_font)
    else:
        content_fonts = rng.choice(fonts, size=n)
    style_chars = np.stack(
        [rng.choice(chars[chars != c], size=r, replace=False) for c in content_chars]
    )
    img = data.images
    return Batch(
        content_images=img[content_fonts, content_chars][:, None],
        content_chars=content_chars,
        content_fonts=content_fonts,
        style_images=img[font_ids[:, None], style_chars][:, :, None],
        style_chars=style_chars,
        font_ids=font_ids,
        target_images=img[font_ids, content_chars][:, None],
        comp_gt=[data.comp_gt(c) for c in content_chars],
    )


# --------------------------------------------------------------------------
# one step
# --------------------------------------------------------------------------

def forward_generator(batch: Batch, params: nn.Params, mcfg: ModelConfig):
    """Encode content and references in one pass, then generate.

    Returns the fake images and the bundles of every encoded glyph (content first).
    """
    n, r = batch.style_images.shape[:2]
    dtype = params["gen.fuse.w"].dtype
    images = np.concatenate(
        [batch.content_images, batch.style_images.reshape((n * r,) + batch.style_images.shape[2:])]
    )
    bundles = encode(Tensor(images, dtype=dtype), nn.scope(params, "enc"), mcfg.encoder)
    content = slice_bundles(bundles, 0, n)
    style = average_refs(slice_bundles(bundles, n, n + n * r), n, r)
    return generate(content, style, nn.scope(params, "gen")), bundles


def generator_parts(
    batch: Batch, params: nn.Params, mcfg: ModelConfig, comp_lookup, recon: str = "l2"
) -> tuple[Tensor, dict]:
    """Fake images and the non-adversarial generator loss terms."""
    fake, bundles = forward_generator(batch, params, mcfg)
    r = batch.style_images.shape[1]
    font_labels = np.concatenate([batch.content_fonts, np.repeat(batch.font_ids, r)])
    comp_sets = list(batch.comp_gt) + [comp_lookup(c) for c in batch.style_chars.reshape(-1)]
    target = Tensor(batch.target_images, dtype=fake.dtype)
    style_ce, content_ce, csh = classifier_losses(bundles, nn.scope(params, "cls"), font_labels, comp_sets)
    parts = {
        "recon": reconstruction_loss(fake, target, recon),
        "style_ce": style_ce,
        "content_ce": content_ce,
        "csh": csh,
    }
    return fake, parts


def train_step(
    batch: Batch,
    params: nn.Params,
    opt: AdamState,
    cfg: TrainConfig,
    mcfg: ModelConfig,
    comp_lookup,
) -> LossReport:
    """One discriminator update followed by one update of everything else."""
    disc = nn.scope(params, "disc")
    d_names = list(group(params, D_PREFIXES))
    g_names = list(group(params, G_PREFIXES))
    t = opt.t + 1
    with Tape():
        fake, parts = generator_parts(batch, params, mcfg, comp_lookup, cfg.recon_loss)
        target = Tensor(batch.target_images, dtype=fake.dtype)

        zero_grads(params)
        adv_d = d_hinge_loss(
            discriminate(target, batch.font_ids, disc),
            discriminate(fake.detach(), batch.font_ids, disc),
        )
        backward(adv_d)
        apply_adam(params, d_names, opt, cfg, t)

        zero_grads(params)
        parts["adv_g"] = g_hinge_loss(discriminate(fake, batch.font_ids, disc))
        parts["adv_d"] = adv_d
        report = total_loss(parts, cfg.weights)
        backward(report.objective)
        apply_adam(params, g_names, opt, cfg, t)
        zero_grads(params)
    opt.t = t
    report.objective = None
    return report


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

def build_variant(cfg: TrainConfig, n_fonts: int, dtype=np.float32) -> tuple[ModelConfig, nn.Params]:
    mcfg = cfg.model_config(n_fonts)
    params = init_model(cfg.seed, mcfg, dtype)
    log.info("variant %s: %d parameters", cfg.variant, nn.count(params))
    return mcfg, params


def make_checkpoint(step: int, params: nn.Params, opt: AdamState, cfg: TrainConfig) -> Checkpoint:
    return Checkpoint(
        step=step,
        params={k: p.data.copy() for k, p in params.items()},
        adam_m={k: v.copy() for k, v in opt.m.items()},
        adam_v={k: v.copy() for k, v in opt.v.items()},
        config_text=cfg.to_text(),
    )


def config_from_checkpoint(ckpt: Checkpoint) -> TrainConfig:
    return TrainConfig(**parse_config_text(ckpt.config_text, "checkpoint"))


def restore(ckpt: Checkpoint, n_fonts: int) -> tuple[TrainConfig, ModelConfig, nn.Params, AdamState]:
    cfg = config_from_checkpoint(ckpt)
    mcfg, params = build_variant(cfg, n_fonts)
    if set(params) != set(ckpt.params):
        missing = set(params) ^ set(ckpt.params)
        raise ValueError(f"checkpoint tensors do not match the model: {sorted(missing)[:5]}")
    for name, p in params.items():
        if p.shape != ckpt.params[name].shape:
            raise ValueError(f"{name}: checkpoint shape {ckpt.params[name].shape} != {p.shape}")
        p.data = ckpt.params[name].astype(p.dtype, copy=True)
    opt = AdamState(
        m={k: v.copy() for k, v in ckpt.adam_m.items()},
        v={k: v.copy() for k, v in ckpt.adam_v.items()},
        t=ckpt.step,
    )
    if not opt.m:
        opt = init_adam(params)
        opt.t = ckpt.step
    return cfg, mcfg, params, opt


def checkpoint_path(out_dir: Path, step: int) -> Path:
    return out_dir / f"ckpt_{step:06d}.mxpp"


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    path: Path
    reports: list[LossReport]


def train(
    cfg: TrainConfig,
    resume: str | Path | None = None,
    force: bool = False,
    stop_at: int | None = None,
    data: Dataset | None = None,
) -> TrainResult:
    """Run ``cfg.steps`` steps (or up to ``stop_at``), checkpointing every ``checkpoint_every``."""
    cfg.validate()
    data = data if data is not None else Dataset(cfg.data_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / LOSS_LOG

    if resume is not None:
        ckpt = load_checkpoint(resume)
        saved_cfg, mcfg, params, opt = restore(ckpt, data.n_train_fonts)
        if saved_cfg.replace(steps=cfg.steps, out_dir=cfg.out_dir, data_dir=cfg.data_dir) != cfg:
            raise ValueError("resume config differs from the checkpoint beyond steps/out_dir/data_dir")
        start = ckpt.step
        rows = log_path.read_text(encoding="utf-8").splitlines() if log_path.exists() else []
        kept = [rows[0]] + [r for r in rows[1:] if int(r.split("\t")[0]) <= start] if rows else []
        log_path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")
    else:
        if not force and (log_path.exists() or any(out.glob("ckpt_*.mxpp"))):
            raise FileExistsError(f"{out} already holds a run; use force or resume")
        for old in out.glob("ckpt_*.mxpp"):
            old.unlink()
        mcfg, params = build_variant(cfg, data.n_train_fonts)
        opt = init_adam(params)
        start = 0
        log_path.write_text("step\t" + "\t".join(REPORT_FIELDS) + "\n", encoding="utf-8")

    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    reports: list[LossReport] = []
    started = time.perf_counter()
    with log_path.open("a", encoding="utf-8") as fh:
        for step in range(start, end):
            batch = sample_batch(data, cfg, step)
            report = train_step(batch, params, opt, cfg, mcfg, data.comp_gt)
            reports.append(report)
            fh.write(f"{step + 1}\t" + "\t".join(f"{v:.6g}" for v in report.row()) + "\n")
            done = step + 1
            if done % cfg.checkpoint_every == 0 or done == end:
                fh.flush()
                save_checkpoint(make_checkpoint(done, params, opt, cfg), checkpoint_path(out, done), overwrite=True)
            if done % 100 == 0:
                log.info(
                    "step %d/%d recon=%.4f total=%.4f (%.1fs)",
                    done, end, report.recon, report.total, time.perf_counter() - started,
                )
    ckpt = make_checkpoint(end, params, opt, cfg)
    return TrainResult(ckpt, checkpoint_path(out, end), reports)
