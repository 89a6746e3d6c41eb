import numpy as np
import pytest

from strollr.config import PatchGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_geom():
    return PatchGeometry(side=3, depth=2, match_count=5, window_side=6)


def random_unitary(dim: int, rng: np.random.Generator, complex_valued: bool = False) -> np.ndarray:
    shape = (dim, dim)
    mat = rng.standard_normal(shape)
    if complex_valued:
        mat = mat + 1j * rng.standard_normal(shape)
    q, r = np.linalg.qr(mat)
    return q * (np.diag(r) / np.abs(np.diag(r)))
