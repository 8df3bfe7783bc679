import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nahmkit.ebe_solver import (EXACT, LITERAL, ComovingOperators, StrandMotion, assemble_K,
                                assemble_Lq, comoving_grid, model_field, nahm_pole_field,
                                partition_sum, pde_residual, series_eval, solve_dkw_order,
                                solve_ebe)
from nahmkit.errors import LengthMismatch, MotionNotPeriodic, NegativeOrder
from nahmkit.grids import axisym_grid, laplacian, line_grid, node_weights, sector_grid
from nahmkit.model_solutions import ModelParams
from oracles import brute_partition_sum, multinomial_partition_sum

PARAMS = ModelParams(1)


@pytest.fixture(scope="module")
def circular_orders():
    g = comoving_grid(6, 11, 11)
    motion = StrandMotion.circular(g.axes[0])
    orders = [solve_dkw_order(0, [g], motion, PARAMS)]
    ops = ComovingOperators(orders[0])
    for n in range(1, 4):
        orders.append(solve_dkw_order(n, orders, motion, PARAMS, operators=ops))
    return orders, motion, ops


def test_solve_ebe_closed_form_on_sector():
    g = sector_grid(33, 33)
    exact = model_field(g, PARAMS)
    psi = solve_ebe(PARAMS, exact)
    assert psi.meta["residual"] < 1e-9
    assert np.max(np.abs(psi.values - exact.values)[g.interior_mask()]) < 1e-4
    assert pde_residual(psi, PARAMS).sup() < 1e-6


def test_solve_ebe_recovers_nahm_pole():
    for g in (line_grid(41), axisym_grid(17, 33, r_min=0.1)):
        exact = nahm_pole_field(g)
        psi = solve_ebe(ModelParams(0), exact, initial=exact.with_values(np.zeros(g.shape)))
        assert np.max(np.abs(psi.values - exact.values)) < 1e-9


def test_solve_ebe_incompatible_boundary_meets_residual():
    g = axisym_grid(17, 17, r_min=0.1)
    psi = solve_ebe(PARAMS, g.with_values(np.zeros(g.shape)))
    assert psi.meta["residual"] < 1e-9
    merit = psi.meta["merit"]
    assert len(merit) >= 2 and all(y < x for x, y in zip(merit, merit[1:]))


@pytest.mark.parametrize("lam", [0.5, 1, 1.5])
def test_solve_ebe_second_order_in_h(lam):
    params = ModelParams(lam)
    errs = []
    for n in (17, 33, 65):
        g = axisym_grid(n, n, 1.0, 0.25, 1.0, r_min=0.25)
        exact = model_field(g, params)
        psi = solve_ebe(params, exact)
        errs.append(np.max(np.abs(psi.values - exact.values)[g.interior_mask()]))
    assert all(3.6 <= a / b <= 4.4 for a, b in zip(errs, errs[1:]))


def test_newton_residual_monotone():
    g = sector_grid(33, 33)
    psi = solve_ebe(ModelParams(1.5), model_field(g, ModelParams(1.5)))
    merit = psi.meta["merit"]
    assert all(y < x for x, y in zip(merit, merit[1:])) and psi.meta["iterations"] <= 12


def test_lq_zero_nonlinearity_is_laplacian():
    g = comoving_grid(4, 7, 7)
    psi0 = g.with_values(np.full(g.shape, -400.0))
    inner = np.flatnonzero(g.interior_mask().ravel())
    diff = assemble_Lq(psi0, PARAMS) - laplacian(g)[inner][:, inner]
    assert abs(diff).max() < 1e-300


def test_lq_commutes_with_time_shift():
    g = comoving_grid(6, 7, 7)
    psi0 = g.with_values(np.broadcast_to(model_field(g, PARAMS).values[:1], g.shape))
    lq = assemble_Lq(psi0, PARAMS).toarray()
    block = int(np.prod(g.shape[1:]))
    inner = g.interior_mask().ravel()
    per_slice = inner[:block].sum()
    shift = np.roll(np.eye(lq.shape[0]), per_slice, axis=0)
    assert np.allclose(shift @ lq, lq @ shift)


def test_lq_symmetric_in_node_weights():
    g = comoving_grid(4, 7, 7)
    psi0 = model_field(g, PARAMS)
    inner = np.flatnonzero(g.interior_mask().ravel())
    mu = node_weights(g).ravel()[inner]
    w = sp.diags(mu) @ assemble_Lq(psi0, PARAMS)
    assert abs(w - w.T).max() < 1e-10 * abs(w).max()


def test_lq_is_linearisation_of_nonlinear_residual():
    g = comoving_grid(4, 7, 7)
    psi0 = model_field(g, PARAMS)
    rng = np.random.default_rng(0)
    v = rng.normal(size=g.shape) * g.interior_mask()
    inner = g.interior_mask().ravel()
    eps = 1e-6
    plus = pde_residual(psi0.with_values(psi0.values + eps * v), PARAMS).values.ravel()
    minus = pde_residual(psi0.with_values(psi0.values - eps * v), PARAMS).values.ravel()
    fd = ((plus - minus) / (2 * eps))[inner]
    exact = assemble_Lq(psi0, PARAMS, EXACT) @ v.ravel()[inner]
    literal = assemble_Lq(psi0, PARAMS, LITERAL) @ v.ravel()[inner]
    assert np.max(np.abs(fd - exact)) < 1e-6 * np.max(np.abs(fd))
    assert np.max(np.abs(fd - literal)) > 1e-3 * np.max(np.abs(fd))


def test_source_vanishes_for_stationary_strand():
    g = comoving_grid(4, 7, 7)
    motion = StrandMotion.stationary(g.axes[0])
    psi0 = model_field(g, PARAMS)
    assert assemble_K(1, [psi0], motion, PARAMS).sup() == 0.0


def test_partition_sum_examples():
    rng = np.random.default_rng(1)
    psi = [None] + [rng.normal(size=(3, 3)) for _ in range(4)]
    assert np.array_equal(partition_sum(1, psi, 1.0), np.zeros((3, 3)))
    assert np.allclose(partition_sum(2, psi, 1.0), psi[1] ** 2 / 2)
    assert np.allclose(partition_sum(3, psi, 1.0), psi[2] * psi[1] + psi[1] ** 3 / 6)


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 2.0]))
def test_partition_sum_matches_symbolic_expansion(seed, scale):
    rng = np.random.default_rng(seed)
    psi = [None] + [rng.normal(size=(8, 8, 8)) for _ in range(4)]
    for n in range(1, 5):
        got = partition_sum(n, psi, scale)
        assert np.max(np.abs(got - brute_partition_sum(n, psi, scale))) < 1e-12 * max(1, np.abs(got).max())
        assert np.allclose(got, multinomial_partition_sum(n, psi, scale), rtol=1e-13, atol=1e-13)


def test_source_validation():
    g = comoving_grid(4, 5, 5)
    motion = StrandMotion.circular(g.axes[0])
    psi0 = model_field(g, PARAMS)
    with pytest.raises(NegativeOrder):
        assemble_K(0, [], motion, PARAMS)
    with pytest.raises(LengthMismatch):
        assemble_K(2, [psi0], motion, PARAMS)
    with pytest.raises(NegativeOrder):
        solve_dkw_order(-1, [psi0], motion, PARAMS)
    open_motion = StrandMotion(motion.t, motion.z0, motion.dz0, motion.ddz0, periodic=False)
    with pytest.raises(MotionNotPeriodic):
        assemble_K(1, [psi0], open_motion, PARAMS)


def test_uniform_motion_first_order_vanishes():
    g = comoving_grid(6, 9, 9)
    motion = StrandMotion.uniform(g.axes[0], 0.7 - 0.2j)
    psi0 = solve_dkw_order(0, [g], motion, PARAMS)
    assert assemble_K(1, [psi0], motion, PARAMS).sup() < 1e-10
    psi1 = solve_dkw_order(1, [psi0], motion, PARAMS)
    assert psi1.sup() < 1e-10
    r0 = series_eval(1.0, [psi0], motion, PARAMS).meta["residual"]
    r1 = series_eval(1.0, [psi0, psi1], motion, PARAMS).meta["residual"]
    assert r1 == pytest.approx(r0, rel=1e-9, abs=1e-12)


def test_stationary_strand_has_no_corrections():
    g = comoving_grid(4, 7, 7)
    motion = StrandMotion.stationary(g.axes[0], 0.3)
    orders = [solve_dkw_order(0, [g], motion, PARAMS)]
    for n in range(1, 4):
        orders.append(solve_dkw_order(n, orders, motion, PARAMS))
        assert orders[-1].sup() < 1e-12


def test_order_zero_is_static_solve():
    g = comoving_grid(4, 9, 9)
    psi0 = solve_dkw_order(0, [g], StrandMotion.circular(g.axes[0]), PARAMS)
    assert psi0.meta["residual"] < 1e-9
    assert np.array_equal(psi0.values[0], psi0.values[-1])


def test_circular_motion_corrections(circular_orders):
    orders, motion, ops = circular_orders
    assert orders[1].sup() > 1e-3
    for f in orders[1:]:
        assert f.meta["residual"] < 1e-9


def test_series_residual_scales_with_truncation_order(circular_orders):
    orders, motion, ops = circular_orders
    for n in range(4):
        big = series_eval(0.1, orders[:n + 1], motion, PARAMS, ops).meta["residual"]
        small = series_eval(0.05, orders[:n + 1], motion, PARAMS, ops).meta["residual"]
        assert 0.8 * 2 ** (n + 1) < big / small < 1.25 * 2 ** (n + 1)


def test_series_eval_trivial_cases(circular_orders):
    orders, motion, ops = circular_orders
    assert np.array_equal(series_eval(0.0, orders).values, orders[0].values)
    assert np.array_equal(series_eval(0.7, orders[:1]).values, orders[0].values)
    want = orders[0].values + 0.3 * orders[1].values + 0.09 * orders[2].values
    assert np.allclose(series_eval(0.3, orders[:3]).values, want)


def test_motion_consistency():
    t = np.arange(64) * 2 * np.pi / 64
    assert StrandMotion.circular(t).consistency_error() < 1e-2
    assert StrandMotion.uniform(t, 2.0).consistency_error() == 0.0
    bad = StrandMotion.circular(t)
    bad = StrandMotion(t, bad.z0, 2 * bad.dz0, bad.ddz0)
    assert bad.consistency_error() > 0.5
