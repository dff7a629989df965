import numpy as np
import pytest

from hymlab import geometry as gm


@pytest.fixture(scope="session")
def flat8():
    return gm.make_flat_torus((8, 8, 8, 8), (1, 1, 1, 1))


@pytest.fixture(scope="session")
def flat16():
    return gm.make_flat_torus((16, 16, 16, 16), (1, 1, 1, 1))


@pytest.fixture(scope="session")
def sheared16():
    return gm.make_sheared_gauduchon_torus((16, 16, 16, 16), (1, 1, 1, 1), 0.1)


@pytest.fixture(scope="session")
def sheared8():
    return gm.make_sheared_gauduchon_torus((8, 8, 8, 8), (1, 1, 1, 1), 0.1)


def band_limited(geom, rng, kmax=2, terms=10):
    """Random smooth (spectrally resolved) scalar field; the standard test input."""
    hat = np.zeros(geom.grid_shape, dtype=np.complex128)
    for _ in range(terms):
        idx = tuple(int(rng.integers(-kmax, kmax + 1)) % s for s in geom.grid_shape)
        hat[idx] = rng.normal() + 1j * rng.normal()
    f = geom.ifft(hat)
    m = float(np.max(np.abs(f)))
    return f / m if m else f


def real_band_limited(geom, rng, kmax=2, terms=10):
    return np.real(band_limited(geom, rng, kmax, terms)).astype(np.complex128)
