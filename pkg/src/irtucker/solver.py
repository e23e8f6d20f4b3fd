"""Iteratively reweighted Tucker decomposition of incomplete tensors.

The objective minimized is

    L(X, {A_n}) = sum_n sum_i log(||X_(n,i)||_F^2 + eps)
                  + lambda1 * ||O * (Y - X x_1 A1 ... x_N AN)||_F^2
                  + lambda2 * sum_n ||A_n||_F^2

where ``X_(n,i)`` is the i-th sub-tensor of the core along mode n. Each
outer iteration majorizes the log-sum term by a weighted quadratic, takes a
few MFISTA steps on the core, refits every factor row by ridge regression
and drops core slices whose norm has collapsed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import mfista
from .errors import NumericalFailure, TensorShapeError
from .tensor import (
    as_tensor,
    hosvd_init,
    multi_mode_product,
    subtensor_sq_norms,
    unfold,
    vec,
    unvec,
)
from .tucker import TuckerModel

log = logging.getLogger(__name__)

DIRECT_SOLVE_CAP = 512


@dataclass
class SolverConfig:
    """Tuning knobs for :func:`solve`.

    ``logsum_epsilon=None`` resolves to ``1e-8 * (mean(y_obs**2) + 1)``.
    ``outer_tol`` is relative: iteration stops once
    ``||X_new - X_old||_F <= outer_tol * ||X_old||_F`` on the surviving slices.
    ``init_core_dims=None`` starts from a full-size core.

    With ``normalize=True`` the data are rescaled before solving so that the
    observed entries satisfy ``||y_obs||_F**2 == normalize_energy * sum(dims)``;
    the returned model is mapped back to the original units. The log-sum
    penalty is not scale invariant, so ``lambda1`` only carries a fixed meaning
    on data of a fixed scale.
    """

    lambda1: float = 0.5
    lambda2: float = 1.0
    logsum_epsilon: float | None = None
    delta: float = 0.1
    t_max: int = 2
    prune_tol: float = 1e-4
    outer_tol: float = 1e-4
    max_outer_iters: int = 1000
    init_core_dims: tuple[int, ...] | None = None
    normalize: bool = False
    normalize_energy: float = 16.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("lambda1 and lambda2 must be positive")
        if self.logsum_epsilon is not None and self.logsum_epsilon <= 0:
            raise ValueError("logsum_epsilon must be positive")
        if not 0.0 < self.delta < 2.0:
            raise ValueError("delta must lie in (0, 2)")
        if self.t_max < 1 or self.max_outer_iters < 1:
            raise ValueError("t_max and max_outer_iters must be >= 1")
        if self.prune_tol < 0 or self.outer_tol <= 0:
            raise ValueError("prune_tol must be >= 0 and outer_tol > 0")
        if self.normalize_energy <= 0:
            raise ValueError("normalize_energy must be positive")
        if self.init_core_dims is not None:
            self.init_core_dims = tuple(int(r) for r in self.init_core_dims)

    def resolve_epsilon(self, y, mask) -> float:
        if self.logsum_epsilon is not None:
            return float(self.logsum_epsilon)
        obs = np.asarray(y)[np.asarray(mask, dtype=bool)]
        return 1e-8 * (float(np.mean(obs * obs)) + 1.0)

    def data_scale(self, y, mask) -> float:
        """Factor applied to the data before solving (1.0 unless normalizing)."""
        if not self.normalize:
            return 1.0
        norm = float(np.linalg.norm(np.asarray(y)[np.asarray(mask, dtype=bool)]))
        if norm == 0.0:
            return 1.0
        return float(np.sqrt(self.normalize_energy * sum(np.shape(y)))) / norm


@dataclass
class SolveReport:
    objective_trace: list[float] = field(default_factory=list)
    rank_trace: list[tuple[int, ...]] = field(default_factory=list)
    final_rank: tuple[int, ...] = ()
    iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0
    logsum_epsilon: float = 0.0
    data_scale: float = 1.0


def _check_problem(y, mask):
    y = as_tensor(y)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != y.shape:
        raise TensorShapeError(f"mask shape {mask.shape} differs from data shape {y.shape}")
    return y, mask


def _check_model(y, model: TuckerModel):
    if model.shape != y.shape:
        raise TensorShapeError(f"model reconstructs to {model.shape}, data is {y.shape}")


def logsum_penalty(core, eps: float, group_counts: Sequence[int] | None = None) -> float:
    """Group log-sum over all order-(N-1) sub-tensors of ``core``.

    ``group_counts[n]`` may exceed ``core.shape[n]``; the missing groups are
    taken to be zero slices that were pruned away and contribute ``log(eps)``.
    """
    total = 0.0
    for n in range(core.ndim):
        total += float(np.sum(np.log(subtensor_sq_norms(core, n) + eps)))
        if group_counts is not None:
            total += (group_counts[n] - core.shape[n]) * float(np.log(eps))
    return total


def objective(y, mask, model: TuckerModel, cfg: SolverConfig, eps: float | None = None,
              group_counts: Sequence[int] | None = None) -> float:
    """Evaluate the penalized objective ``L`` for ``model``."""
    y, mask = _check_problem(y, mask)
    _check_model(y, model)
    if eps is None:
        eps = cfg.resolve_epsilon(y, mask)
    fit = mfista.smooth_value(model.core, np.where(mask, y, 0.0), mask, model.factors, cfg.lambda1)
    ridge = cfg.lambda2 * sum(float(np.vdot(a, a)) for a in model.factors)
    return float(logsum_penalty(model.core, eps, group_counts) + fit + ridge)


def build_weights(core, logsum_epsilon: float) -> np.ndarray:
    """Weight tensor ``D[i1..iN] = sum_n 1 / (||X_(n, i_n)||^2 + eps)``."""
    core = np.asarray(core, dtype=np.float64)
    if core.size == 0:
        raise TensorShapeError("core must be nonempty")
    d = np.zeros(core.shape)
    for n in range(core.ndim):
        w = 1.0 / (subtensor_sq_norms(core, n) + logsum_epsilon)
        shape = [1] * core.ndim
        shape[n] = core.shape[n]
        d = d + w.reshape(shape)
    return d


def surrogate(y, mask, model: TuckerModel, anchor_core, cfg: SolverConfig,
              eps: float | None = None) -> float:
    """Majorizer ``Q(X, {A} | X_t)`` of :func:`objective`, tight at ``X = X_t``.

    The log-sum term is replaced by its tangent bound at ``anchor_core``.
    """
    y, mask = _check_problem(y, mask)
    if eps is None:
        eps = cfg.resolve_epsilon(y, mask)
    weights = build_weights(anchor_core, eps)
    const = 0.0
    for n in range(anchor_core.ndim):
        s = subtensor_sq_norms(anchor_core, n) + eps
        const += float(np.sum(np.log(s) - 1.0 + eps / s))
    fit = mfista.smooth_value(model.core, np.where(mask, y, 0.0), mask, model.factors, cfg.lambda1)
    ridge = cfg.lambda2 * sum(float(np.vdot(a, a)) for a in model.factors)
    return fit + mfista.penalty_value(model.core, weights) + ridge + const


def core_update_direct(y, mask, model: TuckerModel, weights, cfg: SolverConfig,
                       max_entries: int = DIRECT_SOLVE_CAP) -> np.ndarray:
    """Exact minimizer of the weighted core subproblem by a dense solve.

    Forms the Kronecker matrix of the factors explicitly, so it is limited to
    cores of at most ``max_entries`` entries.
    """
    y, mask = _check_problem(y, mask)
    _check_model(y, model)
    if model.core.size > max_entries:
        raise ValueError(f"core has {model.core.size} entries, direct solve capped at {max_entries}")
    h = np.ones((1, 1))
    for a in model.factors:
        h = np.kron(a, h)
    obs = vec(mask)
    hs = h[obs]
    lhs = hs.T @ hs + np.diag(vec(weights)) / cfg.lambda1
    rhs = hs.T @ vec(y)[obs]
    try:
        x = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("singular core system") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite direct core solution")
    return unvec(x, model.core.shape)


def factor_row_update(y_row, mask_row, phi, lambda1: float, lambda2: float) -> np.ndarray:
    """Ridge solution for one factor row against the shared design ``phi``."""
    o = np.asarray(mask_row, dtype=bool)
    p = np.asarray(phi)[o]
    gram = lambda1 * (p.T @ p) + lambda2 * np.eye(p.shape[1])
    rhs = lambda1 * (np.asarray(y_row)[o] @ p)
    return np.linalg.solve(gram, rhs)


def update_factor(y, mask, model: TuckerModel, mode: int, cfg: SolverConfig) -> np.ndarray:
    """Refit every row of factor ``mode`` with the core and other factors fixed.

    All rows share one design matrix; the per-row Gram matrices are batched.
    """
    y, mask = _check_problem(y, mask)
    _check_model(y, model)
    partial = multi_mode_product(model.core, model.factors, skip=mode)
    phi = unfold(partial, mode).T
    o = unfold(mask, mode).astype(np.float64)
    yo = unfold(np.where(mask, y, 0.0), mode)
    r = phi.shape[1]
    outer = (phi[:, :, None] * phi[:, None, :]).reshape(phi.shape[0], r * r)
    grams = cfg.lambda1 * (o @ outer).reshape(-1, r, r) + cfg.lambda2 * np.eye(r)
    rhs = cfg.lambda1 * (yo @ phi)
    return np.linalg.solve(grams, rhs[:, :, None])[:, :, 0]


def _surviving_indices(core, prune_tol: float) -> list[np.ndarray]:
    scale = max(1e-30, float(np.linalg.norm(core)))
    kept = []
    for n in range(core.ndim):
        norms = np.sqrt(subtensor_sq_norms(core, n))
        keep = np.flatnonzero(norms > prune_tol * scale)
        if keep.size == 0:
            keep = np.array([int(np.argmax(norms))])
        kept.append(keep)
    return kept


def prune(model: TuckerModel, prune_tol: float = 1e-4) -> TuckerModel:
    """Drop core sub-tensors whose norm is at most ``prune_tol * ||core||_F``
    together with the matching factor columns. At least one index per mode
    always survives."""
    if prune_tol < 0:
        raise ValueError("prune_tol must be nonnegative")
    kept = _surviving_indices(model.core, prune_tol)
    return TuckerModel(model.core[np.ix_(*kept)],
                       [a[:, k] for a, k in zip(model.factors, kept)])


def solve(y, mask, cfg: SolverConfig | None = None,
          init: TuckerModel | None = None) -> tuple[TuckerModel, SolveReport]:
    """Decompose the observed part of ``y`` into a compact Tucker model.

    Parameters
    ----------
    y : ndarray
        Data tensor. Unobserved entries are ignored and may hold any value.
    mask : ndarray of bool
        True where ``y`` is observed.
    cfg : SolverConfig, optional
    init : TuckerModel, optional
        Starting point. Defaults to the HOSVD of the zero-filled data.

    Returns
    -------
    model : TuckerModel
        Pruned model; ``model.rank`` is the estimated multilinear rank.
    report : SolveReport
        ``objective_trace`` is evaluated on the (possibly rescaled) problem
        actually solved; pruned slices keep contributing ``log(eps)`` so the
        trace is comparable across iterations.
    """
    cfg = cfg or SolverConfig()
    y, mask = _check_problem(y, mask)
    if not mask.any():
        raise ValueError("no observed entries")
    if not np.all(np.isfinite(y[mask])):
        raise ValueError("observed entries must be finite")
    scale = cfg.data_scale(y, mask)
    y = np.where(mask, y, 0.0) * scale
    eps = cfg.resolve_epsilon(y, mask)
    start = time.perf_counter()

    if init is not None:
        model = TuckerModel(init.core * scale, [a.copy() for a in init.factors])
    else:
        model = hosvd_init(y, mask, cfg.init_core_dims)
    _check_model(y, model)
    groups = model.rank
    report = SolveReport(logsum_epsilon=eps, data_scale=scale)
    report.objective_trace.append(objective(y, mask, model, cfg, eps, groups))
    report.rank_trace.append(model.rank)

    for it in range(1, cfg.max_outer_iters + 1):
        old_core = model.core
        weights = build_weights(old_core, eps)
        core = mfista.run(y, mask, model.factors, weights, old_core,
                          lambda1=cfg.lambda1, delta=cfg.delta, t_max=cfg.t_max)
        model = TuckerModel(core, model.factors)
        for n in range(model.ndim):
            model.factors[n] = update_factor(y, mask, model, n, cfg)
        if not all(np.all(np.isfinite(a)) for a in model.factors):
            raise NumericalFailure("non-finite factor update")

        kept = _surviving_indices(model.core, cfg.prune_tol)
        model = TuckerModel(model.core[np.ix_(*kept)],
                            [a[:, k] for a, k in zip(model.factors, kept)])
        old_kept = old_core[np.ix_(*kept)]

        report.objective_trace.append(objective(y, mask, model, cfg, eps, groups))
        report.rank_trace.append(model.rank)
        report.iterations = it
        change = float(np.linalg.norm(model.core - old_kept))
        ref = float(np.linalg.norm(old_kept))
        log.debug("iter %d  L=%.6g  rank=%s  dX=%.3g  rel=%.3g", it, report.objective_trace[-1],
                  model.rank, change, change / max(ref, 1e-300))
        if change <= cfg.outer_tol * ref:
            report.converged = True
            break

    if scale != 1.0:
        model = TuckerModel(model.core / scale, model.factors)
    report.final_rank = model.rank
    report.wall_time = time.perf_counter() - start
    return model, report
