from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mxfontpp.glyphgen import Dataset, make_dataset

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def default_data_dir(tmp_path_factory):
    """The default corpus: 16 fonts × 80 chars, seed 0."""
    root = tmp_path_factory.mktemp("default_corpus")
    make_dataset(root, seed=0)
    return root


@pytest.fixture(scope="session")
def default_data(default_data_dir):
    return Dataset(default_data_dir)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    """2 training fonts × 5 training chars, plus one unseen font and char."""
    root = tmp_path_factory.mktemp("toy_corpus")
    make_dataset(root, n_fonts=3, n_unseen_fonts=1, n_chars=6, n_unseen_chars=1, seed=3)
    return Dataset(root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, default_data):
    """A two-step run on the default corpus; enough for a loadable checkpoint."""
    from mxfontpp.config import TrainConfig
    from mxfontpp.trainer import train

    out = tmp_path_factory.mktemp("tiny_run")
    cfg = TrainConfig(steps=2, batch_size=2, data_dir=str(default_data.root), out_dir=str(out))
    return train(cfg, data=default_data)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
