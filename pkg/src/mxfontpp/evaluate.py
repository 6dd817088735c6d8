"""Unseen-font evaluation harness and its leakage audit.

For each (font F, char c) of a split the generator receives c rendered in the
base font as content and ``n_style_refs`` other glyphs of F as style
references; the output is scored against the ground-truth render of (F, c).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint
from .glyphgen import IMAGE_SIZE, Dataset, write_pgm
from .metrics import l1_metric, rmse_metric, ssim_metric
from .model import synthesize
from .trainer import restore

SPLITS = ("ufsc", "ufuc")
EVAL_BATCH = 32
GRID_COLUMNS = 8

# (content (N,1,32,32), refs (N,r,1,32,32), pairs) -> generated (N,1,32,32)
Generator = Callable[[np.ndarray, np.ndarray, list], np.ndarray]


@dataclass
class PairResult:
    font: int
    char: int
    refs: tuple[int, ...]
    l1: float
    rmse: float
    ssim: float


@dataclass
class EvalReport:
    split: str
    n_style_refs: int
    seed: int
    rows: list[PairResult]
    mean_l1: float
    mean_rmse: float
    mean_ssim: float
    grid_path: Path | None = None
    audit: "AuditResult | None" = None
    files: dict[str, Path] = field(default_factory=dict)

    def summary(self) -> dict[str, object]:
        out = {
            "split": self.split,
            "pairs": len(self.rows),
            "n_style_refs": self.n_style_refs,
            "seed": self.seed,
            "mean_l1": f"{self.mean_l1:.6f}",
            "mean_rmse": f"{self.mean_rmse:.6f}",
            "mean_ssim": f"{self.mean_ssim:.6f}",
        }
        if self.audit is not None:
            out["audit_reads"] = self.audit.n_reads
            out["audit_train_pair_reads"] = len(self.audit.train_pair_reads)
            out["audit_violations"] = len(self.audit.violations)
            out["audit_passed"] = self.audit.passed
            out["audit_strict_passed"] = self.audit.strict_passed
        return out


def reference_chars(split_chars, char: int, font: int, n_refs: int, seed: int) -> tuple[int, ...]:
    """Seeded draw of up to ``n_refs`` style chars from the split, never ``char`` itself."""
    pool = np.array([c for c in split_chars if c != char], dtype=np.int64)
    if pool.size == 0:
        raise ValueError(f"no reference characters available for char {char}")
    rng = np.random.default_rng([seed, font, char, 0x5EF])
    picked = rng.choice(pool, size=min(n_refs, pool.size), replace=False)
    return tuple(int(c) for c in picked)


def model_generator(ckpt: Checkpoint, data: Dataset) -> Generator:
    _, mcfg, params, _ = restore(ckpt, data.n_train_fonts)

    def run(content: np.ndarray, refs: np.ndarray, pairs) -> np.ndarray:
        return synthesize(params, mcfg, content, refs)

    return run


# --------------------------------------------------------------------------
# leakage audit
# --------------------------------------------------------------------------

@dataclass
class AuditResult:
    n_reads: int
    train_pair_reads: list[tuple[int, int, str]]
    violations: list[tuple[int, int, str]]

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def strict_passed(self) -> bool:
        """No read at all, in any role, of a train-split pair."""
        return not self.train_pair_reads


def audit_reads(log, data: Dataset, split: str) -> AuditResult:
    """Check every logged read against the split read back from the manifest.

    Style references and targets must be pairs of ``split`` itself.  Content
    reads must use the base font; on UFSC these are train-split pairs by
    construction (a seen character in a training font), so they are listed in
    ``train_pair_reads`` but are not violations.  Any other read is one.
    """
    allowed = set(data.split.pairs(split))
    train = set(data.split.pairs("train"))
    manifest = {(f, c) for _, f, c, _ in data.split.samples}
    train_reads, violations = [], []
    for font, char, role in log:
        key = (font, char)
        if key in train:
            train_reads.append((font, char, role))
        if key not in manifest:
            violations.append((font, char, role))
        elif role in ("style", "target"):
            if key not in allowed:
                violations.append((font, char, role))
        elif role == "content":
            if font != data.base_font or char not in data.split.chars_of(split):
                violations.append((font, char, role))
        else:
            violations.append((font, char, role))
    return AuditResult(len(log), train_reads, violations)


# --------------------------------------------------------------------------
# harness
# --------------------------------------------------------------------------

def sample_grid(content, refs, generated, target, columns: int = GRID_COLUMNS) -> np.ndarray:
    """Rows: content, first reference, generated, target; one column per pair."""
    n = min(columns, content.shape[0])
    rows = [content[:n, 0], refs[:n, 0, 0], generated[:n, 0], target[:n, 0]]
    return np.concatenate([np.concatenate(list(r), axis=1) for r in rows], axis=0)


def _write_outputs(report: EvalReport, grid: np.ndarray, out_dir: Path, force: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "pairs": out_dir / f"{report.split}_pairs.tsv",
        "summary": out_dir / f"{report.split}_summary.txt",
        "grid": out_dir / f"{report.split}_grid.pgm",
    }
    existing = [p for p in files.values() if p.exists()]
    if existing and not force:
        raise FileExistsError(f"{existing[0]} exists; use force to overwrite")
    lines = ["font_id\tchar_id\tref_chars\tl1\trmse\tssim"]
    lines += [
        f"{r.font}\t{r.char}\t{','.join(map(str, r.refs))}\t{r.l1:.9f}\t{r.rmse:.9f}\t{r.ssim:.9f}"
        for r in report.rows
    ]
    files["pairs"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    files["summary"].write_text(
        "".join(f"{k}={v}\n" for k, v in report.summary().items()), encoding="utf-8"
    )
    write_pgm(files["grid"], grid)
    report.grid_path = files["grid"]
    report.files = files


def evaluate(
    checkpoint: Checkpoint | str | Path | None,
    data: Dataset | str | Path,
    split: str,
    n_style_refs: int = 4,
    seed: int = 0,
    out_dir: str | Path | None = None,
    force: bool = False,
    generator: Generator | None = None,
) -> EvalReport:
    """Score generated glyphs on ``split`` ("ufsc", "ufuc", or "train" for fit checks).

    ``generator`` replaces the checkpointed model when given (``checkpoint``
    may then be None).  Every image read goes through ``Dataset.read`` and is
    audited for UFSC/UFUC.
    """
    if split not in SPLITS + ("train",):
        raise ValueError(f"split must be one of {SPLITS + ('train',)}, got {split!r}")
    if n_style_refs < 1:
        raise ValueError("n_style_refs must be >= 1")
    data = data if isinstance(data, Dataset) else Dataset(data)
    if generator is None:
        if checkpoint is None:
            raise ValueError("evaluate needs a checkpoint or a generator")
        ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
        generator = model_generator(ckpt, data)
    pairs = data.split.pairs(split)
    if not pairs:
        raise ValueError(f"split {split!r} is empty")
    split_chars = data.split.chars_of(split)

    previous_log = data.access_log
    data.access_log = []
    try:
        refs_of = [reference_chars(split_chars, c, f, n_style_refs, seed) for f, c in pairs]
        content = np.stack([data.read(data.base_font, c, "content") for _, c in pairs])
        refs = np.stack(
            [np.stack([data.read(f, rc, "style") for rc in rs]) for (f, _), rs in zip(pairs, refs_of)]
        )
        target = np.stack([data.read(f, c, "target") for f, c in pairs])
        log = data.access_log
    finally:
        data.access_log = previous_log

    generated = np.concatenate(
        [
            generator(content[i : i + EVAL_BATCH], refs[i : i + EVAL_BATCH], pairs[i : i + EVAL_BATCH])
            for i in range(0, len(pairs), EVAL_BATCH)
        ]
    ).astype(np.float64)
    if generated.shape != (len(pairs), 1, IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"generator returned shape {generated.shape}")

    rows = [
        PairResult(f, c, rs, l1_metric(g, t), rmse_metric(g, t), ssim_metric(g, t))
        for (f, c), rs, g, t in zip(pairs, refs_of, generated, target)
    ]
    report = EvalReport(
        split=split,
        n_style_refs=len(refs_of[0]),
        seed=seed,
        rows=rows,
        mean_l1=float(np.mean([r.l1 for r in rows])),
        mean_rmse=float(np.mean([r.rmse for r in rows])),
        mean_ssim=float(np.mean([r.ssim for r in rows])),
        audit=audit_reads(log, data, split) if split in SPLITS else None,
    )
    if out_dir is not None:
        _write_outputs(report, sample_grid(content, refs, generated, target), Path(out_dir), force)
    return report
