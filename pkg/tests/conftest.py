import numpy as np
import pytest


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix from QR of a Gaussian draw (sign-fixed R diag)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
