from __future__ import annotations

import numpy as np
import pytest


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_pd(rng, n, spread=0.1):
    """Hermitian positive definite matrix close to the identity."""
    return np.eye(n) + spread * random_hermitian(rng, n) / np.sqrt(n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
