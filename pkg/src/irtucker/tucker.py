"""Tucker model container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TensorShapeError


def _ordered_mode_product(t: np.ndarray, a: np.ndarray, mode: int) -> np.ndarray:
    # Sums over the contracted index in a fixed order with elementwise ufuncs
    # only, so dropping an all-zero slice cannot change a single output bit.
    moved = np.moveaxis(t, mode, 0)
    out = np.zeros((a.shape[0],) + moved.shape[1:])
    for r in range(a.shape[1]):
        out += np.multiply.outer(a[:, r], moved[r])
    return np.moveaxis(out, 0, mode)


@dataclass
class TuckerModel:
    """Core tensor plus one factor matrix per mode.

    ``factors[n]`` has shape ``(I_n, R_n)`` where ``R_n = core.shape[n]``.
    """

    core: np.ndarray
    factors: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=np.float64)
        self.factors = [np.asarray(a, dtype=np.float64) for a in self.factors]
        if len(self.factors) != self.core.ndim:
            raise TensorShapeError(
                f"{self.core.ndim}-way core needs {self.core.ndim} factors, got {len(self.factors)}")
        for n, a in enumerate(self.factors):
            if a.ndim != 2 or a.shape[1] != self.core.shape[n]:
                raise TensorShapeError(
                    f"factor {n} has shape {a.shape}, expected (*, {self.core.shape[n]})")

    @property
    def ndim(self) -> int:
        return self.core.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        """Dimensions of the reconstructed tensor."""
        return tuple(a.shape[0] for a in self.factors)

    @property
    def rank(self) -> tuple[int, ...]:
        """Current core dimensions, i.e. the estimated multilinear rank."""
        return tuple(self.core.shape)

    def reconstruct(self) -> np.ndarray:
        out = self.core
        for n, a in enumerate(self.factors):
            out = _ordered_mode_product(out, a, n)
        return out

    def copy(self) -> "TuckerModel":
        return TuckerModel(self.core.copy(), [a.copy() for a in self.factors])
