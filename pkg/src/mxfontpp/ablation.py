"""Variant × seed ablation runs and their comparison table."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .checkpoint import load_checkpoint
from .config import TrainConfig
from .evaluate import SPLITS, evaluate
from .glyphgen import Dataset
from .model import VARIANTS
from .trainer import checkpoint_path, config_from_checkpoint, train

log = logging.getLogger(__name__)

TABLE = "ablation.tsv"
METRICS = ("l1", "rmse", "ssim")
COLUMNS = tuple(f"{s}_{m}" for s in SPLITS for m in METRICS)


@dataclass
class AblationTable:
    rows: list[tuple[str, str, dict[str, float]]] = field(default_factory=list)

    def add(self, variant: str, seed: int, values: dict[str, float]) -> None:
        self.rows.append((variant, str(seed), values))

    def means(self) -> dict[str, dict[str, float]]:
        out = {}
        for variant in VARIANTS:
            runs = [v for name, seed, v in self.rows if name == variant and seed != "mean"]
            if runs:
                out[variant] = {c: float(np.mean([r[c] for r in runs])) for c in COLUMNS}
        return out

    def to_text(self) -> str:
        lines = ["variant\tseed\t" + "\t".join(COLUMNS)]
        for variant, seed, values in self.rows:
            lines.append(f"{variant}\t{seed}\t" + "\t".join(f"{values[c]:.6f}" for c in COLUMNS))
        for variant, values in self.means().items():
            lines.append(f"{variant}\tmean\t" + "\t".join(f"{values[c]:.6f}" for c in COLUMNS))
        return "\n".join(lines) + "\n"


def ordering_holds(table: AblationTable, split: str = "ufuc") -> dict[str, bool]:
    """Per ablation: full has L1 no higher and SSIM no lower, on seed means."""
    means = table.means()
    full = means["full"]
    return {
        v: full[f"{split}_l1"] <= m[f"{split}_l1"] and full[f"{split}_ssim"] >= m[f"{split}_ssim"]
        for v, m in means.items()
        if v != "full"
    }


def _finished(cfg: TrainConfig) -> Path | None:
    """Final checkpoint of an identical, completed run, if one is on disk."""
    path = checkpoint_path(Path(cfg.out_dir), cfg.steps)
    if path.exists() and config_from_checkpoint(load_checkpoint(path)) == cfg:
        return path
    return None


def run_ablation(
    base: TrainConfig,
    root: str | Path,
    seeds: Iterable[int] = range(3),
    variants: Iterable[str] = VARIANTS,
    n_style_refs: int = 4,
    force: bool = False,
    data: Dataset | None = None,
) -> AblationTable:
    """Train every (variant, seed) under ``root`` and evaluate on UFSC and UFUC.

    A run whose final checkpoint already exists with the same config is reused
    rather than retrained, so an interrupted ablation can be restarted.
    """
    root = Path(root)
    data = data if data is not None else Dataset(base.data_dir)
    table = AblationTable()
    out_table = root / TABLE
    if out_table.exists() and not force:
        raise FileExistsError(f"{out_table} exists; use force to overwrite")
    for variant in variants:
        for seed in seeds:
            cfg = base.replace(variant=variant, seed=seed, out_dir=str(root / f"{variant}_s{seed}"))
            path = None if force else _finished(cfg)
            if path is None:
                log.info("training %s seed %d", variant, seed)
                path = train(cfg, force=force, data=data).path
            ckpt = load_checkpoint(path)
            values = {}
            for split in SPLITS:
                report = evaluate(
                    ckpt, data, split, n_style_refs, seed=0,
                    out_dir=Path(cfg.out_dir) / "eval", force=True,
                )
                values.update({f"{split}_{m}": getattr(report, f"mean_{m}") for m in METRICS})
            table.add(variant, seed, values)
    root.mkdir(parents=True, exist_ok=True)
    out_table.write_text(table.to_text(), encoding="utf-8")
    return table
