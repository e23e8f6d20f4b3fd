"""Synthetic low-rank tensors, random masks, noise and error metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import TensorShapeError
from .tensor import multi_mode_product


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def gen_cp(dims: Sequence[int], rank: int, rng=None) -> np.ndarray:
    """Sum of ``rank`` unit-weight rank-one tensors with standard normal factors."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    rng = _rng(rng)
    factors = [rng.standard_normal((int(d), rank)) for d in dims]
    core = np.zeros((rank,) * len(dims))
    core[(np.arange(rank),) * len(dims)] = 1.0
    return multi_mode_product(core, factors)


def gen_tucker(dims: Sequence[int], core_dims: Sequence[int], rng=None) -> np.ndarray:
    """Standard normal core of size ``core_dims`` times standard normal factors."""
    if len(dims) != len(core_dims) or any(r < 1 or r > d for r, d in zip(core_dims, dims)):
        raise TensorShapeError(f"core dims {tuple(core_dims)} must lie within {tuple(dims)}")
    rng = _rng(rng)
    core = rng.standard_normal(tuple(int(r) for r in core_dims))
    factors = [rng.standard_normal((int(d), int(r))) for d, r in zip(dims, core_dims)]
    return multi_mode_product(core, factors)


def random_mask(dims: Sequence[int], missing_fraction: float, rng=None) -> np.ndarray:
    """Boolean mask with exactly ``round((1 - missing_fraction) * size)`` True
    entries placed uniformly at random."""
    if not 0.0 <= missing_fraction < 1.0:
        raise ValueError("missing_fraction must lie in [0, 1)")
    rng = _rng(rng)
    dims = tuple(int(d) for d in dims)
    size = int(np.prod(dims))
    n_obs = int(round((1.0 - missing_fraction) * size))
    if n_obs < 1:
        raise ValueError("mask would have no observed entries")
    flat = np.zeros(size, dtype=bool)
    flat[rng.permutation(size)[:n_obs]] = True
    return flat.reshape(dims, order="F")


def add_noise_snr(t, snr_db: float | None, mask, rng=None) -> np.ndarray:
    """Add white Gaussian noise to the observed entries at the requested SNR.

    Signal power is the mean square of the observed entries. ``snr_db=None``
    (or ``inf``) returns an unchanged copy.
    """
    t = np.array(t, dtype=np.float64)
    if snr_db is None or np.isposinf(snr_db):
        return t
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite or None")
    mask = np.asarray(mask, dtype=bool)
    rng = _rng(rng)
    power = float(np.mean(t[mask] ** 2)) if mask.any() else 0.0
    if power == 0.0:
        raise ValueError("observed signal power is zero")
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    noise = sigma * rng.standard_normal(int(mask.sum()))
    t[mask] = t[mask] + noise
    return t


def nmse(truth, estimate, squared: bool = False) -> float:
    """``||truth - estimate||_F / ||truth||_F`` (the square of it if ``squared``)."""
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise TensorShapeError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    denom = float(np.linalg.norm(truth))
    if denom == 0.0:
        raise ValueError("truth tensor is zero")
    ratio = float(np.linalg.norm(truth - estimate)) / denom
    return ratio * ratio if squared else ratio


def mse_missing(truth, estimate, mask) -> float:
    """Mean squared error over the unobserved entries only."""
    mask = np.asarray(mask, dtype=bool)
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if not (truth.shape == estimate.shape == mask.shape):
        raise TensorShapeError("truth, estimate and mask must share a shape")
    missing = ~mask
    if not missing.any():
        raise ValueError("no missing entries")
    diff = truth[missing] - estimate[missing]
    return float(np.mean(diff * diff))


@dataclass
class ExperimentSpec:
    """One synthetic completion experiment (a benchmark table row)."""

    name: str
    generator: str
    dims: tuple[int, ...]
    missing_fraction: float
    rank: int | None = None
    core_dims: tuple[int, ...] | None = None
    snr_db: float | None = 10.0
    trials: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.core_dims is not None:
            self.core_dims = tuple(int(r) for r in self.core_dims)
        if self.generator == "cp":
            if self.rank is None or not 1 <= self.rank <= min(self.dims):
                raise ValueError(f"{self.name}: cp generator needs 1 <= rank <= min(dims)")
        elif self.generator == "tucker":
            if (self.core_dims is None or len(self.core_dims) != len(self.dims)
                    or any(not 1 <= r <= d for r, d in zip(self.core_dims, self.dims))):
                raise ValueError(f"{self.name}: tucker generator needs core_dims within dims")
        else:
            raise ValueError(f"{self.name}: unknown generator {self.generator!r}")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ValueError(f"{self.name}: missing_fraction must lie in [0, 1)")
        if self.trials < 1:
            raise ValueError(f"{self.name}: trials must be >= 1")

    @property
    def true_rank(self) -> tuple[int, ...]:
        if self.generator == "cp":
            return (self.rank,) * len(self.dims)
        return self.core_dims

    def trial_data(self, trial: int):
        """Return ``(truth, observed, mask)`` for one trial, seeded by
        ``rng_seed + trial``."""
        rng = np.random.default_rng(self.rng_seed + trial)
        if self.generator == "cp":
            truth = gen_cp(self.dims, self.rank, rng)
        else:
            truth = gen_tucker(self.dims, self.core_dims, rng)
        mask = random_mask(self.dims, self.missing_fraction, rng)
        observed = add_noise_snr(truth, self.snr_db, mask, rng)
        return truth, observed, mask
