"""Parameter containers and initialisers shared by the model modules.

Parameters live in flat ``dict[str, Tensor]`` maps with dotted names; a
sub-module receives a view with its prefix stripped.
"""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .autodiff import Tensor

Params = dict[str, Tensor]


def param(values: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64).astype(dtype), requires_grad=True)


def normal(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 1.0) -> Tensor:
    return param(rng.normal(0.0, gain / math.sqrt(fan_in), size=shape), dtype)


def zeros(shape, dtype) -> Tensor:
    return param(np.zeros(shape), dtype)


def ones(shape, dtype) -> Tensor:
    return param(np.ones(shape), dtype)


def prefixed(prefix: str, params: Mapping[str, Tensor]) -> Params:
    return {f"{prefix}.{k}": v for k, v in params.items()}


def scope(params: Mapping[str, Tensor], prefix: str) -> Params:
    head = prefix + "."
    return {k[len(head) :]: v for k, v in params.items() if k.startswith(head)}


def count(params: Mapping[str, Tensor]) -> int:
    return sum(p.size for p in params.values())
