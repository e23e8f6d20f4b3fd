"""Dense N-way tensor kernels.

Tensors are plain ``numpy.ndarray`` objects. The linear layout used for
vectorization and for the column order of unfoldings is first-index-fastest
(Fortran order), so that for a Tucker product

    vec(G x_1 A1 x_2 A2 ... x_N AN) == kron(AN, ..., A2, A1) @ vec(G)

holds without any permutation. Modes are 0-based throughout.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import TensorShapeError

MAX_MODES = 8


def as_tensor(data, dtype=np.float64) -> np.ndarray:
    """Validate and convert ``data`` to a dense real tensor."""
    t = np.asarray(data, dtype=dtype)
    if t.ndim < 1 or t.ndim > MAX_MODES:
        raise TensorShapeError(f"tensor must have 1..{MAX_MODES} modes, got {t.ndim}")
    if any(d < 1 for d in t.shape):
        raise TensorShapeError(f"every dimension must be >= 1, got {t.shape}")
    return t


def _check_mode(ndim: int, mode: int) -> int:
    if not 0 <= mode < ndim:
        raise TensorShapeError(f"mode {mode} out of range for a {ndim}-way tensor")
    return mode


def vec(t: np.ndarray) -> np.ndarray:
    """Vectorize with the first index varying fastest."""
    return np.asarray(t).reshape(-1, order="F")


def unvec(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    if v.size != int(np.prod(dims)):
        raise TensorShapeError(f"cannot reshape {v.size} entries into {tuple(dims)}")
    return v.reshape(tuple(dims), order="F")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding: the mode fibers become columns.

    The remaining indices enumerate the columns in increasing mode order with
    the lowest remaining mode varying fastest.
    """
    t = np.asarray(t)
    _check_mode(t.ndim, mode)
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1, order="F")


def fold(m: np.ndarray, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold` for the given ``mode`` and full ``dims``."""
    m = np.asarray(m)
    dims = tuple(int(d) for d in dims)
    _check_mode(len(dims), mode)
    rest = dims[:mode] + dims[mode + 1:]
    if m.ndim != 2 or m.shape[0] != dims[mode] or m.shape[1] != int(np.prod(rest)):
        raise TensorShapeError(
            f"matrix of shape {m.shape} cannot be folded along mode {mode} into {dims}")
    return np.moveaxis(m.reshape((dims[mode],) + rest, order="F"), 0, mode)


def nmode_product(t: np.ndarray, a: np.ndarray, mode: int) -> np.ndarray:
    """Multiply every mode-``mode`` fiber of ``t`` by the matrix ``a``."""
    t = np.asarray(t)
    a = np.asarray(a)
    _check_mode(t.ndim, mode)
    if a.ndim != 2 or a.shape[1] != t.shape[mode]:
        raise TensorShapeError(
            f"matrix of shape {a.shape} does not conform to mode {mode} of size {t.shape[mode]}")
    return np.moveaxis(np.tensordot(a, t, axes=(1, mode)), 0, mode)


def multi_mode_product(t: np.ndarray, factors: Sequence[np.ndarray], skip: int | None = None,
                       transpose: bool = False) -> np.ndarray:
    """Apply ``factors[n]`` along every mode ``n`` (except ``skip``).

    With ``transpose=True`` the transposed factors are applied instead, which
    is the adjoint of the Tucker reconstruction map.
    """
    t = np.asarray(t)
    if len(factors) != t.ndim:
        raise TensorShapeError(f"expected {t.ndim} factors, got {len(factors)}")
    if skip is not None:
        _check_mode(t.ndim, skip)
    out = t
    for n, a in enumerate(factors):
        if n == skip:
            continue
        out = nmode_product(out, a.T if transpose else a, n)
    return out


def inner(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise TensorShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.dot(x.ravel(), y.ravel()))


def frobenius_norm(x: np.ndarray) -> float:
    return float(np.sqrt(inner(x, x)))


def subtensor_sq_norms(t: np.ndarray, mode: int) -> np.ndarray:
    """Squared Frobenius norms of the order-(N-1) sub-tensors along ``mode``."""
    t = np.asarray(t)
    _check_mode(t.ndim, mode)
    axes = tuple(k for k in range(t.ndim) if k != mode)
    return np.sum(t * t, axis=axes)


def subtensor_norms(t: np.ndarray, mode: int) -> np.ndarray:
    """Frobenius norm of each sub-tensor obtained by fixing the ``mode`` index.

    Equal to the Euclidean norms of the rows of ``unfold(t, mode)``.
    """
    return np.sqrt(subtensor_sq_norms(t, mode))


def _leading_left_basis(m: np.ndarray, k: int) -> np.ndarray:
    u, _, _ = np.linalg.svd(m, full_matrices=False)
    if u.shape[1] >= k:
        return u[:, :k]
    # unfolding has fewer columns than rows: complete to an orthonormal basis
    q, _ = np.linalg.qr(np.hstack([u, np.eye(m.shape[0])]))
    q = q[:, :m.shape[0]]
    q[:, :u.shape[1]] = u
    return q[:, :k]


def hosvd_init(y: np.ndarray, mask: np.ndarray, core_dims: Sequence[int] | None = None):
    """Truncated HOSVD of the zero-filled observed tensor.

    Returns a :class:`~irtucker.tucker.TuckerModel` whose factors have
    orthonormal columns.
    """
    from .tucker import TuckerModel

    y = as_tensor(y)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != y.shape:
        raise TensorShapeError(f"mask shape {mask.shape} differs from data shape {y.shape}")
    if core_dims is None:
        core_dims = y.shape
    core_dims = tuple(int(r) for r in core_dims)
    if len(core_dims) != y.ndim or any(r < 1 or r > i for r, i in zip(core_dims, y.shape)):
        raise TensorShapeError(f"core dims {core_dims} must lie within 1..{y.shape}")
    filled = np.where(mask, y, 0.0)
    factors = [_leading_left_basis(unfold(filled, n), r) for n, r in enumerate(core_dims)]
    core = multi_mode_product(filled, factors, transpose=True)
    return TuckerModel(core, factors)
