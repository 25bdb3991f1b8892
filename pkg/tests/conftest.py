import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_polytope(rng, n=2, max_halfspaces=12):
    """Bounded random polytope: random direction normals around a box core."""
    from malab.domains import Polytope

    m = int(rng.integers(n + 1, max_halfspaces + 1))
    normals = rng.normal(size=(m, n))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    offsets = rng.uniform(0.4, 2.5, size=m)
    # cap every axis so the polytope is guaranteed bounded
    normals = np.vstack([normals, np.eye(n), -np.eye(n)])
    offsets = np.r_[offsets, rng.uniform(1.0, 3.0, 2 * n)]
    return Polytope(normals, offsets)
