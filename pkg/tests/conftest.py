import itertools
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"


def kron_matrix(factors):
    """Explicit kron(A_N, ..., A_1), the matrix acting on vec(core)."""
    h = np.ones((1, 1))
    for a in factors:
        h = np.kron(a, h)
    return h


def vec(t):
    return np.asarray(t).reshape(-1, order="F")


def brute_mode_product(t, a, mode):
    """n-mode product by explicit index loops."""
    out_shape = list(t.shape)
    out_shape[mode] = a.shape[0]
    out = np.zeros(out_shape)
    for idx in itertools.product(*(range(d) for d in out_shape)):
        s = 0.0
        for k in range(t.shape[mode]):
            src = list(idx)
            src[mode] = k
            s += a[idx[mode], k] * t[tuple(src)]
        out[idx] = s
    return out


def random_problem(rng, core_dims, dims, missing=0.4, orthonormal=False):
    """Random factors, data tensor and mask for a core subproblem."""
    if orthonormal:
        factors = [np.linalg.qr(rng.standard_normal((d, r)))[0] for d, r in zip(dims, core_dims)]
    else:
        factors = [rng.standard_normal((d, r)) for d, r in zip(dims, core_dims)]
    y = rng.standard_normal(dims)
    mask = rng.random(dims) >= missing
    if not mask.any():
        mask.flat[0] = True
    return factors, y, mask


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
