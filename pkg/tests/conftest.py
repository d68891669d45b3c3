import numpy as np
import pytest


def random_spd(rng: np.random.Generator, d: int, jitter: float = 0.3) -> np.ndarray:
    """Random symmetric positive definite matrix, comfortably conditioned."""
    a = rng.standard_normal((d, d))
    return a @ a.T + jitter * d * np.eye(d)


def random_correlated_spd(rng: np.random.Generator, d: int) -> np.ndarray:
    """Random SPD with substantial off-diagonal mass."""
    mat = random_spd(rng, d, jitter=0.2)
    for _ in range(20):
        off = np.abs(mat - np.diag(np.diag(mat)))
        if off.max() > 0.1 * np.diag(mat).max():
            return mat
        mat = random_spd(rng, d, jitter=0.2)
    return mat


def random_row_stochastic(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    mat = rng.uniform(0.05, 1.0, size=(rows, cols))
    return mat / mat.sum(axis=1, keepdims=True)


def random_positive_joint(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    joint = rng.uniform(0.05, 1.0, size=(n, m))
    return joint / joint.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
