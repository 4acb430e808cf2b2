"""Shared fixtures for invarlab tests — small seeded images and datasets."""

import numpy as np
import pytest

from invarlab.image import quantize
from invarlab.metrics import Sample
from invarlab.seeds import derive_rng


def random_image(seed: int, width: int = 16, height: int | None = None) -> np.ndarray:
    rng = derive_rng(seed, 999)
    return rng.random((height or width, width, 3))


@pytest.fixture
def image():
    """A 16x16 random image."""
    return random_image(0)


@pytest.fixture
def fixture_4x4():
    """4x4 image on the 8-bit grid, values 0..255 spread over pixels and channels."""
    values = (np.arange(48, dtype=np.float64) * 5.0) % 256.0
    return quantize(values.reshape(4, 4, 3) / 255.0)


@pytest.fixture
def samples16():
    """Twelve 16x16 samples over three classes."""
    return [Sample(f"s{i:02d}", f"c{i % 3}", random_image(i)) for i in range(12)]


@pytest.fixture
def rng():
    return derive_rng(0)


@pytest.fixture
def in_tmp(tmp_path, monkeypatch):
    """Run from the tmp dir so config lookups and audit files stay there."""
    monkeypatch.chdir(tmp_path)
    return tmp_path
