import numpy as np
import pytest

from bsmamba.tensor import set_default_dtype


@pytest.fixture(autouse=True)
def _float64_default():
    """Oracle and gradient tests assume 64-bit; restore after each test."""
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def synth_root(tmp_path):
    from bsmamba import synthetic

    root = tmp_path / "data"
    synthetic.write_dataset(str(root), size=64, count=2, seed=7)
    return str(root)
