from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from zoh.objectives import load_cw_attack, make_function, make_quadratic

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIGS = REPO_ROOT / "configs"
DATA = REPO_ROOT / "data"
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quad2():
    """Noiseless f(x) = x1² + x2²."""
    return make_quadratic(2, [1.0, 1.0], noise_zeta=0.0, seed=0)


@pytest.fixture
def quad4_noisy():
    return make_quadratic(4, [1.0, 2.0, 3.0, 4.0], noise_zeta=0.1, seed=3)


@pytest.fixture
def constant4():
    return make_function(lambda x: 3.0, 4, gradient=lambda x: np.zeros(4))


@pytest.fixture
def toy_attack():
    return load_cw_attack(DATA / "toy_classifier.json", DATA / "toy_images.csv", lam=10.0)


@pytest.fixture
def write_config(tmp_path):
    """Write a config dict to a JSON file inside tmp_path."""

    def _write(payload, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return _write
