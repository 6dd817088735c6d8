"""Central-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, no_grad

# below this magnitude a gradient entry is compared absolutely
REL_FLOOR = 1e-6


@dataclass
class BlockResult:
    name: str
    max_rel_err: float
    n_checked: int


@dataclass
class GradCheckReport:
    tol: float
    blocks: list[BlockResult] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((b.max_rel_err for b in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return all(b.max_rel_err < self.tol for b in self.blocks)

    @property
    def failures(self) -> list[BlockResult]:
        return [b for b in self.blocks if not b.max_rel_err < self.tol]

    def lines(self) -> list[str]:
        return [
            f"{'ok  ' if b.max_rel_err < self.tol else 'FAIL'} {b.name:<48s} "
            f"max_rel_err={b.max_rel_err:.3e} n={b.n_checked}"
            for b in self.blocks
        ]


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``backward`` against central differences for every block in ``params``.

    ``f`` recomputes the scalar from scratch each call.  With ``max_entries`` set,
    that many coordinates per block are drawn at random; otherwise all are checked.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check runs in 64-bit mode; {name} is {p.dtype}")
    for p in params.values():
        p.grad = None
    loss = f()
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            if max_entries is None or flat.size <= max_entries:
                idx = np.arange(flat.size)
            else:
                idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            numeric = np.empty(idx.size)
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                numeric[n] = (fp - fm) / (2 * h)
            err = rel_err(analytic[name].reshape(-1)[idx], numeric)
            report.blocks.append(BlockResult(name, float(err.max(initial=0.0)), int(idx.size)))
    return report
