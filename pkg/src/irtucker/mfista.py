"""Over-relaxed monotone FISTA for the weighted core subproblem.

With the factors fixed, the core update minimizes

    F(X) = f(X) + g(X)
    f(X) = lambda1 * || O * (Y - X x_1 A1 ... x_N AN) ||_F^2
    g(X) = <X, D * X>

where ``D`` is the (entrywise positive) weight tensor. Everything is computed
in tensor form; the Kronecker matrix of the factors is never built.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalFailure, TensorShapeError
from .tensor import multi_mode_product

TIE_TOL = 1e-14


def _masked_residual(core, y, mask, factors):
    recon = multi_mode_product(core, factors)
    if recon.shape != np.shape(y):
        raise TensorShapeError(f"model reconstructs to {recon.shape}, data is {np.shape(y)}")
    return np.where(mask, recon - y, 0.0)


def smooth_value(core, y, mask, factors, lambda1: float) -> float:
    r = _masked_residual(core, y, mask, factors)
    return float(lambda1 * np.vdot(r, r))


def penalty_value(core, weights) -> float:
    return float(np.sum(weights * core * core))


def objective_value(core, y, mask, factors, weights, lambda1: float) -> float:
    """F = f + g for the core subproblem."""
    return smooth_value(core, y, mask, factors, lambda1) + penalty_value(core, weights)


def gradient(core, y, mask, factors, lambda1: float) -> np.ndarray:
    """Gradient of the masked data-fit term with respect to the core.

    ``2 * lambda1 * (O * (X x_n A_n - Y)) x_n A_n^T``
    """
    core = np.asarray(core)
    if np.shape(y) != np.shape(mask):
        raise TensorShapeError(f"data {np.shape(y)} and mask {np.shape(mask)} differ")
    r = _masked_residual(core, y, mask, factors)
    return 2.0 * lambda1 * multi_mode_product(r, factors, transpose=True)


def prox_weighted(x, weights, beta: float) -> np.ndarray:
    """Proximal map of ``beta * <Z, D * Z>``: elementwise ``x / (1 + 2 beta d)``."""
    return np.asarray(x) / (1.0 + 2.0 * beta * np.asarray(weights))


def lipschitz_bound(factors: Sequence[np.ndarray], lambda1: float) -> float:
    """Upper bound ``2 lambda1 prod_n lambda_max(A_n^T A_n)`` on the gradient's
    Lipschitz constant (the mask can only shrink the spectrum)."""
    if len(factors) == 0:
        raise TensorShapeError("need at least one factor")
    bound = 2.0 * lambda1
    for a in factors:
        if a.size == 0:
            return 0.0
        bound *= float(np.linalg.norm(a, 2)) ** 2
    return bound


def step_size(factors, lambda1: float, delta: float) -> float:
    lip = lipschitz_bound(factors, lambda1)
    if lip <= 0.0:
        return 1.0
    return (2.0 - delta) / lip


@dataclass
class MfistaState:
    x_prev: np.ndarray
    w: np.ndarray
    eta: float
    beta: float
    f_best: float


def run(y, mask, factors, weights, x0, *, lambda1: float, delta: float = 0.1,
        t_max: int = 2, beta: float | None = None, history: list | None = None) -> np.ndarray:
    """Run ``t_max`` over-relaxed MFISTA iterations starting from ``x0``.

    The returned core never has a larger subproblem objective than ``x0``.
    If ``history`` is given, the objective of ``x0`` and of every accepted
    iterate is appended to it.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if not 0.0 < delta < 2.0:
        raise ValueError("delta must lie in (0, 2)")
    x0 = np.asarray(x0, dtype=np.float64)
    if np.shape(weights) != x0.shape:
        raise TensorShapeError(f"weights {np.shape(weights)} do not match core {x0.shape}")
    if beta is None:
        beta = step_size(factors, lambda1, delta)

    def F(x):
        return objective_value(x, y, mask, factors, weights, lambda1)

    state = MfistaState(x_prev=x0, w=x0, eta=1.0, beta=beta, f_best=F(x0))
    if history is not None:
        history.append(state.f_best)
    for _ in range(t_max):
        w = state.w
        z = prox_weighted(w - beta * gradient(w, y, mask, factors, lambda1), weights, beta)
        fz = F(z)
        if not np.isfinite(fz) or not np.all(np.isfinite(z)):
            raise NumericalFailure("non-finite iterate in MFISTA core update")
        if fz - state.f_best <= TIE_TOL:
            x, fx = z, fz
        else:
            x, fx = state.x_prev, state.f_best
        eta_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * state.eta ** 2))
        ratio = state.eta / eta_next
        state.w = (x + ratio * (z - x)
                   + ((state.eta - 1.0) / eta_next) * (x - state.x_prev)
                   + ratio * (1.0 - delta) * (w - z))
        state.x_prev, state.f_best, state.eta = x, fx, eta_next
        if history is not None:
            history.append(fx)
    return state.x_prev
