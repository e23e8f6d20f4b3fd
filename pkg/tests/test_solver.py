import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from irtucker import mfista
from irtucker.datagen import nmse
from irtucker.errors import TensorShapeError
from irtucker.solver import (
    SolverConfig,
    build_weights,
    core_update_direct,
    factor_row_update,
    logsum_penalty,
    objective,
    prune,
    solve,
    surrogate,
    update_factor,
)
from irtucker.tensor import multi_mode_product, subtensor_norms, unfold
from irtucker.tucker import TuckerModel

from conftest import kron_matrix, random_problem, vec


def naive_objective(y, mask, core, factors, lambda1, lambda2, eps):
    total = 0.0
    for n in range(core.ndim):
        for i in range(core.shape[n]):
            s = 0.0
            for idx in itertools.product(*(range(r) for r in core.shape)):
                if idx[n] == i:
                    s += core[idx] ** 2
            total += np.log(s + eps)
    for idx in itertools.product(*(range(d) for d in y.shape)):
        if not mask[idx]:
            continue
        x = 0.0
        for jdx in itertools.product(*(range(r) for r in core.shape)):
            term = core[jdx]
            for n, a in enumerate(factors):
                term *= a[idx[n], jdx[n]]
            x += term
        total += lambda1 * (y[idx] - x) ** 2
    for a in factors:
        total += lambda2 * np.sum(a * a)
    return total


def random_model(rng, core_dims, dims):
    return TuckerModel(rng.standard_normal(core_dims),
                       [rng.standard_normal((d, r)) for d, r in zip(dims, core_dims)])


# --- objective ------------------------------------------------------------

def test_objective_at_zero_model(rng):
    y = rng.standard_normal((3, 4, 2))
    mask = rng.random(y.shape) > 0.3
    model = TuckerModel(np.zeros((2, 3, 2)), [np.zeros((3, 2)), np.zeros((4, 3)), np.zeros((2, 2))])
    cfg = SolverConfig(lambda1=0.7, logsum_epsilon=1e-3)
    expect = (2 + 3 + 2) * np.log(1e-3) + 0.7 * np.sum(y[mask] ** 2)
    assert objective(y, mask, model, cfg) == pytest.approx(expect, rel=1e-13)


def test_objective_perfect_fit(rng):
    model = random_model(rng, (2, 2, 2), (3, 3, 3))
    y = model.reconstruct()
    mask = np.ones(y.shape, bool)
    cfg = SolverConfig(lambda2=0.3, logsum_epsilon=1e-4)
    expect = logsum_penalty(model.core, 1e-4) + 0.3 * sum(np.sum(a * a) for a in model.factors)
    assert objective(y, mask, model, cfg) == pytest.approx(expect, rel=1e-12)


def test_objective_matches_naive_loops(rng):
    model = random_model(rng, (2, 3, 2), (3, 4, 3))
    y = rng.standard_normal((3, 4, 3))
    mask = rng.random(y.shape) > 0.4
    cfg = SolverConfig(lambda1=0.8, lambda2=0.6, logsum_epsilon=1e-2)
    expect = naive_objective(y, mask, model.core, model.factors, 0.8, 0.6, 1e-2)
    assert objective(y, mask, model, cfg) == pytest.approx(expect, rel=1e-12)


def test_objective_ignores_unobserved_values(rng):
    model = random_model(rng, (2, 2), (3, 3))
    y = rng.standard_normal((3, 3))
    mask = rng.random(y.shape) > 0.5
    cfg = SolverConfig(logsum_epsilon=1e-3)
    a = objective(y, mask, model, cfg)
    b = objective(np.where(mask, y, 1e6), mask, model, cfg)
    assert a == b


def test_logsum_penalty_charges_pruned_groups():
    core = np.ones((2, 1))
    full = logsum_penalty(core, 1e-3)
    counted = logsum_penalty(core, 1e-3, group_counts=(4, 3))
    assert counted - full == pytest.approx((2 + 2) * np.log(1e-3))


def test_objective_shape_mismatch(rng):
    model = random_model(rng, (2, 2), (3, 3))
    with pytest.raises(TensorShapeError):
        objective(np.zeros((3, 4)), np.ones((3, 4), bool), model, SolverConfig())
    with pytest.raises(TensorShapeError):
        objective(np.zeros((3, 3)), np.ones((3, 4), bool), model, SolverConfig())


# --- weights --------------------------------------------------------------

def test_weights_zero_core():
    d = build_weights(np.zeros((2, 3, 4)), 1e-3)
    np.testing.assert_allclose(d, 3 / 1e-3, rtol=1e-14)


def test_weights_equal_slices():
    # every slice of a 2x2x2 all-ones core has squared norm 4
    d = build_weights(np.ones((2, 2, 2)), 0.5)
    np.testing.assert_allclose(d, 3 / (4 + 0.5), rtol=1e-14)


def test_weights_match_summation(rng):
    core = rng.standard_normal((2, 3, 2))
    eps = 1e-2
    norms = [subtensor_norms(core, n) for n in range(3)]
    d = build_weights(core, eps)
    for idx in np.ndindex(core.shape):
        expect = sum(1 / (norms[n][idx[n]] ** 2 + eps) for n in range(3))
        assert d[idx] == pytest.approx(expect, rel=1e-13)


# --- direct core solve ------------------------------------------------------

def test_direct_orthonormal_least_squares(rng):
    factors = [np.linalg.qr(rng.standard_normal((3, 3)))[0] for _ in range(3)]
    y = rng.standard_normal((3, 3, 3))
    mask = np.ones(y.shape, bool)
    model = TuckerModel(np.zeros((3, 3, 3)), factors)
    x = core_update_direct(y, mask, model, np.zeros((3, 3, 3)), SolverConfig())
    np.testing.assert_allclose(vec(x), kron_matrix(factors).T @ vec(y), atol=1e-12)


def test_direct_without_observations_is_zero(rng):
    model = random_model(rng, (2, 2, 2), (3, 3, 3))
    x = core_update_direct(rng.standard_normal((3, 3, 3)), np.zeros((3, 3, 3), bool), model,
                           np.ones((2, 2, 2)), SolverConfig())
    assert not x.any()


def test_direct_matches_gradient_descent(rng):
    factors, y, mask = random_problem(rng, (2, 2, 2), (3, 3, 3))
    w = build_weights(rng.standard_normal((2, 2, 2)), 1e-1)
    lam = 0.5
    x = core_update_direct(y, mask, TuckerModel(np.zeros((2, 2, 2)), factors), w,
                           SolverConfig(lambda1=lam))
    h = kron_matrix(factors)[vec(mask)]
    hess = 2 * lam * h.T @ h + 2 * np.diag(vec(w))
    step = 1.0 / np.linalg.eigvalsh(hess)[-1]
    z = np.zeros(8)
    for _ in range(200000):
        g = 2 * lam * h.T @ (h @ z - vec(y)[vec(mask)]) + 2 * vec(w) * z
        z -= step * g
        if np.linalg.norm(g) < 1e-13:
            break
    assert np.linalg.norm(vec(x) - z) <= 1e-6 * np.linalg.norm(z)


def test_direct_zeroes_gradient(rng):
    factors, y, mask = random_problem(rng, (2, 3, 2), (3, 4, 4))
    w = build_weights(rng.standard_normal((2, 3, 2)), 1e-2)
    x = core_update_direct(y, mask, TuckerModel(np.zeros((2, 3, 2)), factors), w,
                           SolverConfig(lambda1=0.5))
    g = mfista.gradient(x, y, mask, factors, 0.5) + 2 * w * x
    assert np.linalg.norm(g) <= 1e-6 * max(1.0, np.linalg.norm(mfista.gradient(
        np.zeros_like(x), y, mask, factors, 0.5)))


def test_direct_size_cap(rng):
    model = random_model(rng, (9, 8, 8), (9, 8, 8))
    with pytest.raises(ValueError):
        core_update_direct(np.zeros((9, 8, 8)), np.ones((9, 8, 8), bool), model,
                           np.ones((9, 8, 8)), SolverConfig())


# --- factor update --------------------------------------------------------

def test_factor_row_degenerate_cases(rng):
    phi = rng.standard_normal((6, 3))
    assert not factor_row_update(rng.standard_normal(6), np.zeros(6, bool), phi, 0.5, 1.0).any()
    assert not factor_row_update(np.zeros(6), np.ones(6, bool), phi, 0.5, 1.0).any()


def test_factor_row_matches_ridge_lstsq(rng):
    phi = rng.standard_normal((4, 3))
    y = rng.standard_normal(4)
    obs = np.array([True, False, True, False])
    lam1, lam2 = 0.5, 0.8
    # min lam1 ||y_o - P a||^2 + lam2 ||a||^2 as one stacked least squares problem
    a_mat = np.vstack([np.sqrt(lam1) * phi[obs], np.sqrt(lam2) * np.eye(3)])
    b = np.concatenate([np.sqrt(lam1) * y[obs], np.zeros(3)])
    expect = np.linalg.lstsq(a_mat, b, rcond=None)[0]
    np.testing.assert_allclose(factor_row_update(y, obs, phi, lam1, lam2), expect, rtol=1e-12)


def test_update_factor_all_missing(rng):
    model = random_model(rng, (2, 2, 2), (3, 4, 3))
    a = update_factor(rng.standard_normal((3, 4, 3)), np.zeros((3, 4, 3), bool), model, 1,
                      SolverConfig())
    assert a.shape == (4, 2) and not a.any()


def test_update_factor_regenerate_and_fit(rng):
    model = random_model(rng, (2, 3, 2), (5, 6, 4))
    y = model.reconstruct()
    mask = np.ones(y.shape, bool)
    for mode in range(3):
        a = update_factor(y, mask, model, mode, SolverConfig(lambda1=1.0, lambda2=1e-8))
        np.testing.assert_allclose(a, model.factors[mode], rtol=1e-4, atol=1e-6)


def test_update_factor_matches_rowwise(rng):
    model = random_model(rng, (2, 3, 2), (5, 4, 3))
    y = rng.standard_normal((5, 4, 3))
    mask = rng.random(y.shape) > 0.4
    cfg = SolverConfig(lambda1=0.5, lambda2=0.9)
    for mode in range(3):
        a = update_factor(y, mask, model, mode, cfg)
        phi = unfold(multi_mode_product(model.core, model.factors, skip=mode), mode).T
        ym, om = unfold(y, mode), unfold(mask, mode)
        for i in range(y.shape[mode]):
            np.testing.assert_allclose(a[i], factor_row_update(ym[i], om[i], phi, 0.5, 0.9),
                                       rtol=1e-10, atol=1e-12)


def test_update_factor_row_order_invariant(rng):
    model = random_model(rng, (2, 2, 2), (6, 3, 3))
    y = rng.standard_normal((6, 3, 3))
    mask = rng.random(y.shape) > 0.3
    perm = rng.permutation(6)
    a = update_factor(y, mask, model, 0, SolverConfig())
    permuted = TuckerModel(model.core, [model.factors[0][perm], *model.factors[1:]])
    b = update_factor(y[perm], mask[perm], permuted, 0, SolverConfig())
    np.testing.assert_allclose(b, a[perm], rtol=1e-12, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_factor_rows_are_stationary(seed):
    # each returned row minimizes its ridge objective: random perturbations never help
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((5, 2))
    y = rng.standard_normal(5)
    obs = rng.random(5) > 0.3
    a = factor_row_update(y, obs, phi, 0.5, 1.0)

    def cost(v):
        r = (y - phi @ v)[obs]
        return 0.5 * r @ r + v @ v

    base = cost(a)
    for _ in range(5):
        assert cost(a + 1e-3 * rng.standard_normal(2)) >= base - 1e-12


# --- pruning --------------------------------------------------------------

def test_prune_keeps_healthy_model(rng):
    model = random_model(rng, (2, 3, 2), (4, 4, 4))
    pruned = prune(model)
    assert pruned.rank == model.rank
    assert np.array_equal(pruned.reconstruct(), model.reconstruct())


def test_prune_zero_slice_bit_identical(rng):
    model = random_model(rng, (3, 3, 3), (5, 5, 5))
    model.core[:, 1, :] = 0.0
    before = model.reconstruct()
    pruned = prune(model)
    assert pruned.rank == (3, 2, 3)
    assert np.array_equal(pruned.reconstruct(), before)


def test_prune_tiny_slice(rng):
    model = random_model(rng, (3, 3, 3), (5, 5, 5))
    model.core[2] *= 1e-12
    before = model.reconstruct()
    pruned = prune(model)
    assert pruned.rank == (2, 3, 3)
    after = pruned.reconstruct()
    assert np.linalg.norm(after - before) <= 1e-9 * np.linalg.norm(before)


def test_prune_keeps_one_index_per_mode():
    model = TuckerModel(np.zeros((2, 2)), [np.ones((3, 2)), np.ones((3, 2))])
    assert prune(model).rank == (1, 1)
    with pytest.raises(ValueError):
        prune(model, -1.0)


# --- surrogate ------------------------------------------------------------

def test_surrogate_majorizes_and_touches(rng):
    model = random_model(rng, (2, 3, 2), (4, 4, 3))
    y = rng.standard_normal((4, 4, 3))
    mask = rng.random(y.shape) > 0.4
    cfg = SolverConfig(logsum_epsilon=1e-2)
    anchor = model.core
    assert surrogate(y, mask, model, anchor, cfg) == pytest.approx(
        objective(y, mask, model, cfg), rel=1e-12)
    for _ in range(20):
        other = TuckerModel(anchor + rng.standard_normal(anchor.shape), model.factors)
        assert surrogate(y, mask, other, anchor, cfg) >= objective(y, mask, other, cfg) - 1e-10


# --- config ---------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    {"lambda1": 0.0}, {"lambda2": -1.0}, {"delta": 2.0}, {"t_max": 0},
    {"outer_tol": 0.0}, {"logsum_epsilon": 0.0}, {"prune_tol": -1.0},
    {"normalize_energy": 0.0}, {"max_outer_iters": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_epsilon_and_scale_resolution():
    y = np.full((2, 2), 3.0)
    mask = np.array([[True, False], [True, True]])
    cfg = SolverConfig()
    assert cfg.resolve_epsilon(y, mask) == pytest.approx(1e-8 * 10.0)
    assert cfg.data_scale(y, mask) == 1.0
    norm = np.sqrt(27.0)
    assert SolverConfig(normalize=True).data_scale(y, mask) == pytest.approx(np.sqrt(16 * 4) / norm)


# --- full solver ----------------------------------------------------------

def test_solve_recovers_rank_one():
    rng = np.random.default_rng(3)
    u = [rng.standard_normal(8) for _ in range(3)]
    truth = np.einsum("i,j,k->ijk", *u)
    mask = np.ones(truth.shape, bool)
    model, report = solve(truth, mask, SolverConfig(lambda1=20.0, normalize=True))
    assert model.rank == (1, 1, 1)
    assert nmse(truth, model.reconstruct()) <= 1e-3
    assert report.final_rank == (1, 1, 1)


def test_solve_trace_monotone(rng):
    truth = multi_mode_product(rng.standard_normal((2, 2, 2)),
                               [rng.standard_normal((6, 2)) for _ in range(3)])
    mask = rng.random(truth.shape) > 0.3
    _, report = solve(truth, mask, SolverConfig(max_outer_iters=200))
    trace = report.objective_trace
    assert len(trace) == report.iterations + 1 == len(report.rank_trace)
    assert all(b <= a + 1e-8 * (1 + abs(a)) for a, b in zip(trace, trace[1:]))


def test_solve_respects_init_and_core_dims(rng):
    y = rng.standard_normal((5, 5, 5))
    mask = np.ones(y.shape, bool)
    model, _ = solve(y, mask, SolverConfig(init_core_dims=(2, 2, 2), max_outer_iters=3))
    assert all(r <= 2 for r in model.rank)
    init = random_model(rng, (3, 3, 3), (5, 5, 5))
    model, report = solve(y, mask, SolverConfig(max_outer_iters=1), init=init)
    assert report.rank_trace[0] == (3, 3, 3)


def test_solve_input_errors(rng):
    y = rng.standard_normal((3, 3))
    with pytest.raises(ValueError):
        solve(y, np.zeros((3, 3), bool))
    bad = y.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        solve(bad, np.ones((3, 3), bool))
    with pytest.raises(TensorShapeError):
        solve(y, np.ones((3, 4), bool))
    # a NaN in an unobserved entry is fine
    mask = np.ones((3, 3), bool)
    mask[0, 0] = False
    solve(bad, mask, SolverConfig(max_outer_iters=2))


def test_solve_normalize_returns_original_units(rng):
    truth = multi_mode_product(rng.standard_normal((2, 2, 2)),
                               [rng.standard_normal((6, 2)) for _ in range(3)]) * 1e3
    mask = np.ones(truth.shape, bool)
    model, report = solve(truth, mask, SolverConfig(lambda1=20.0, normalize=True))
    assert report.data_scale != 1.0
    assert nmse(truth, model.reconstruct()) < 0.05
