import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nahmkit.adjoint_quotient import (FibreSystem, PointConfig, chi_tilde, d_config,
                                      fibre_solve, newton_to_fibre, slice_embed, slice_project)
from nahmkit.braids import (Arc, BraidWord, CrossinglessMatching, StrandPaths, braid_to_paths,
                            semicircle, standard_matching)
from nahmkit.errors import (ArcsNotDisjoint, ConfigError, Diverged, IndeterminateConvergence,
                            PreconditionViolation)
from nahmkit.transport import (FixedPointReport, Sampler, TransportOptions, VanishingOptions,
                               arc_stage, chi_tilde_jacobian, fibre_tangent, horizontal_velocity,
                               intersection_generators, lagrangian_sample, monodromy_fixed_points,
                               parallel_transport, strand_partition, strand_slice,
                               vanishing_cycle_membership)


def _paths(ev, samples=65):
    t = np.linspace(0.0, 1.0, samples)
    vals = [ev(ti) for ti in t]
    return StrandPaths(t, np.array([v[0] for v in vals]), np.array([v[1] for v in vals]), ev)


def upper_semicircle():
    """Single strand ``exp(i pi t)`` from 1 to -1."""
    return _paths(lambda t: (np.array([np.exp(1j * np.pi * t)]),
                             np.array([1j * np.pi * np.exp(1j * np.pi * t)])))


def constant_paths(points):
    pts = np.asarray(points, dtype=complex)
    return _paths(lambda t: (pts.copy(), np.zeros_like(pts)))


def fibre_point(slice_, points, n, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    guess = scale * (rng.normal(size=slice_.dim_slice) + 1j * rng.normal(size=slice_.dim_slice))
    guess += slice_project(slice_, d_config(points, n))
    _, c = fibre_solve(slice_, PointConfig(points), len(points), n, guess,
                       jacobian="analytic", return_coords=True)
    return c


@pytest.fixture(scope="module")
def sl_k1():
    return strand_slice(1, 2)


@pytest.fixture(scope="module")
def sl_k2():
    return strand_slice(2, 2)


@pytest.fixture(scope="module")
def full_twist_run(sl_k2):
    paths = braid_to_paths(BraidWord.parse("k=2; s1 s1"), [1, 2])
    c = fibre_point(sl_k2, [1, 2], 2, seed=0)
    return c, paths, parallel_transport(c, paths, sl_k2)


# partitions and slices -------------------------------------------------------

def test_strand_partition_concatenates_per_strand_types():
    assert strand_partition(2, 2).parts == (1, 1, 1, 1)
    assert strand_partition(2, 3).parts == (2, 2, 1, 1)
    assert strand_partition(1, 4, weight=[0, 0, 1]).n == 4


def test_strand_slice_rejects_partition_of_wrong_size():
    from nahmkit.lie_core import Partition
    with pytest.raises(ConfigError):
        strand_slice(2, 2, Partition([2, 1]))


# horizontal velocity -------------------------------------------------------

def test_zero_strand_velocity_gives_zero(sl_k2):
    c = fibre_point(sl_k2, [1, 2], 2, seed=1)
    v = horizontal_velocity(c, [0, 0], sl_k2, 2, 2)
    assert np.max(np.abs(v)) == 0.0


@given(st.complex_numbers(min_magnitude=0.1, max_magnitude=3, allow_nan=False, allow_infinity=False),
       st.complex_numbers(min_magnitude=0.1, max_magnitude=3, allow_nan=False, allow_infinity=False))
@settings(max_examples=15)
def test_velocity_is_linear_in_strand_velocity(sl_k2, a, b):
    c = fibre_point(sl_k2, [1, 2], 2, seed=2)
    base = np.array([a, b])
    v1 = horizontal_velocity(c, base, sl_k2, 2, 2)
    v2 = horizontal_velocity(c, 2 * base, sl_k2, 2, 2)
    assert np.max(np.abs(v2 - 2 * v1)) < 1e-12 * (1 + np.max(np.abs(v1)))


@pytest.mark.parametrize("z", [1.0, 0.7 + 0.4j, -1.3j])
@pytest.mark.parametrize("w", [1.0, 0.3 - 2j])
def test_companion_point_velocity_matches_square_root_chain_rule(sl_k1, z, w):
    x = np.array([[0, 1], [z**2, 0]], dtype=complex)
    c = slice_project(sl_k1, x)
    v = horizontal_velocity(c, [w], sl_k1, 1, 2, thick=[z])
    dx = slice_embed(sl_k1, v) - slice_embed(sl_k1, np.zeros_like(v))
    # x = [[a, b], [c, -a]], lam^2 = a^2 + b c, so d lam = (2 a da + c db + b dc) / (2 lam)
    a, b, cc = x[0, 0], x[0, 1], x[1, 0]
    dlam = (2 * a * dx[0, 0] + cc * dx[0, 1] + b * dx[1, 0]) / (2 * z)
    assert abs(dlam - w) < 1e-10


def test_velocity_agrees_with_spectral_projector_derivative(sl_k2):
    c = fibre_point(sl_k2, [1, 2], 2, seed=3)
    beta_dot = np.array([0.4 - 0.2j, -1.1 + 0.5j])
    v = horizontal_velocity(c, beta_dot, sl_k2, 2, 2, thick=[1, 2])
    x = slice_embed(sl_k2, c)
    jac = chi_tilde_jacobian(x, [1, 2], 2, sl_k2.kernel_basis)
    assert np.max(np.abs(jac @ v - beta_dot)) < 1e-10


def test_spectral_projector_derivative_matches_finite_differences_along_stratum(sl_k2):
    c = fibre_point(sl_k2, [1, 2], 2, seed=4)
    x = slice_embed(sl_k2, c)
    rng = np.random.default_rng(4)
    beta_dot = rng.normal(size=2) + 1j * rng.normal(size=2)
    horizontal = horizontal_velocity(c, beta_dot, sl_k2, 2, 2, thick=[1, 2])
    vertical = fibre_tangent(c, sl_k2, [1, 2], 2)[:, 0]
    h = 1e-6
    for v, expected in ((horizontal, beta_dot), (vertical, np.zeros(2))):
        dx = np.tensordot(v, sl_k2.kernel_basis, axes=1)
        jac = chi_tilde_jacobian(x, [1, 2], 2, dx[None])[:, 0]
        zp = chi_tilde(slice_embed(sl_k2, c + h * v), 2, 2, reference=[1, 2]).points
        zm = chi_tilde(slice_embed(sl_k2, c - h * v), 2, 2, reference=[1, 2]).points
        assert np.max(np.abs((zp - zm) / (2 * h) - expected)) < 1e-6
        assert np.max(np.abs(jac - expected)) < 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_velocity_is_orthogonal_to_fibre(sl_k2, seed):
    c = fibre_point(sl_k2, [1, 2], 2, seed=10 + seed)
    rng = np.random.default_rng(seed)
    beta_dot = rng.normal(size=2) + 1j * rng.normal(size=2)
    v = horizontal_velocity(c, beta_dot, sl_k2, 2, 2, thick=[1, 2])
    tangent = fibre_tangent(c, sl_k2, [1, 2], 2)
    # one equation per characteristic-polynomial coefficient c_2..c_4
    assert tangent.shape[1] == sl_k2.dim_slice - 3
    assert np.max(np.abs(tangent.conj().T @ v)) < 1e-8 * np.linalg.norm(v)


# transport contracts ---------------------------------------------------------

def test_constant_paths_leave_point_fixed(sl_k2):
    c = fibre_point(sl_k2, [1, 2], 2, seed=5)
    c = newton_to_fibre(FibreSystem(sl_k2, np.array([1, 2], dtype=complex), 2), c,
                        jacobian="analytic", tol=1e-10)[0]
    out = parallel_transport(c, constant_paths([1, 2]), sl_k2)
    assert np.max(np.abs(out.coords - c)) < 1e-12


def test_semicircle_endpoint_has_characteristic_polynomial_lambda_squared_minus_one(sl_k1):
    y0 = np.array([[0, 1], [1, 0]], dtype=complex)
    out = parallel_transport(y0, upper_semicircle(), sl_k1)
    coeffs = np.poly(out.endpoint)
    assert np.max(np.abs(coeffs - [1, 0, -1])) < 1e-8
    assert abs(chi_tilde(out.endpoint, 1, 2, reference=[-1]).points[0] + 1) < 1e-8


def test_forward_then_reverse_returns_to_start(sl_k2, full_twist_run):
    c, paths, out = full_twist_run
    back = parallel_transport(out.coords, paths.reversed(), sl_k2)
    assert np.max(np.abs(back.coords - c)) < 1e-6


def test_fibre_tracking_and_drift(sl_k2, full_twist_run):
    c, paths, out = full_twist_run
    opts = TransportOptions()
    assert out.max_tracking_error < 1e-8
    assert out.max_fibre_drift < 100 * opts.fibre_tol
    for t, coords in out.samples[::50]:
        z, _ = paths.at(t)
        got = chi_tilde(slice_embed(sl_k2, coords), 2, 2, reference=z).points
        assert np.max(np.abs(got - z)) < 1e-8
        res = FibreSystem(sl_k2, z, 2).residual(coords)
        assert np.max(np.abs(res)) < opts.fibre_tol
    end = chi_tilde(out.endpoint, 2, 2, reference=paths.end).points
    assert np.max(np.abs(end - paths.end)) < 1e-8


def test_full_twist_moves_the_point(full_twist_run):
    c, _, out = full_twist_run
    assert np.max(np.abs(out.coords - c)) > 1e-3


def test_halving_the_step_schedule_changes_endpoint_little(sl_k2, full_twist_run):
    c, paths, out = full_twist_run
    coarse = out.times
    fine = np.sort(np.concatenate([coarse, (coarse[1:] + coarse[:-1]) / 2]))
    a = parallel_transport(c, paths, sl_k2, schedule=coarse)
    b = parallel_transport(c, paths, sl_k2, schedule=fine)
    assert b.steps == 2 * a.steps
    assert np.max(np.abs(a.coords - out.coords)) < 1e-12
    assert np.max(np.abs(a.coords - b.coords)) < 1e-6


def test_halving_step_max_changes_endpoint_little(sl_k1):
    y0 = np.array([[0, 1], [1, 0]], dtype=complex)
    loose = dict(tol=1e-5, step_init=1e-3)
    a = parallel_transport(y0, upper_semicircle(), sl_k1, TransportOptions(step_max=2e-2, **loose))
    b = parallel_transport(y0, upper_semicircle(), sl_k1, TransportOptions(step_max=1e-2, **loose))
    assert b.steps > a.steps
    assert np.max(np.abs(a.coords - b.coords)) < 1e-6


def test_start_point_off_the_fibre_is_rejected(sl_k1):
    with pytest.raises(PreconditionViolation):
        parallel_transport(np.array([[0, 1], [4, 0]], dtype=complex), upper_semicircle(), sl_k1)


def test_hard_radius_raises_diverged(sl_k2):
    c = fibre_point(sl_k2, [1, 2], 2, seed=6)
    paths = braid_to_paths(BraidWord.parse("k=2; s1"), [1, 2])
    with pytest.raises(Diverged):
        parallel_transport(c, paths, sl_k2, TransportOptions(hard_radius=0.5 * np.linalg.norm(c)))


def test_clamping_is_recorded(sl_k1):
    y0 = np.array([[0, 1], [1, 0]], dtype=complex)
    c0 = slice_project(sl_k1, y0)
    wide = parallel_transport(y0, upper_semicircle(), sl_k1, TransportOptions(clamp_radius=1e3))
    tight = parallel_transport(y0, upper_semicircle(), sl_k1,
                               TransportOptions(clamp_radius=0.5 * np.linalg.norm(c0)))
    assert not wide.clamped
    assert tight.clamped


@pytest.mark.parametrize("kwargs", [dict(step_min=1e-2, step_init=1e-3),
                                    dict(step_init=1.0, step_max=0.1),
                                    dict(tol=0.0), dict(fibre_tol=-1.0)])
def test_options_validation(kwargs):
    with pytest.raises(ConfigError):
        TransportOptions(**kwargs)


# monodromy fixed points ------------------------------------------------------

def test_identity_braid_reports_continuum_with_all_samples_fixed():
    report = monodromy_fixed_points(BraidWord(2, ()), [1, 2], 2, sampler=Sampler(count=3))
    assert isinstance(report, FixedPointReport)
    assert report.continuum_flag
    assert len(report.samples) == 3
    assert all(r["status"] == "fixed" and r["residual"] < 1e-8 for r in report.samples)


def test_non_pure_braid_is_rejected():
    with pytest.raises(PreconditionViolation):
        monodromy_fixed_points(BraidWord.parse("k=2; s1"), [1, 2], 2)


def test_report_points_are_separated_by_dedupe_radius():
    report = monodromy_fixed_points(BraidWord(2, ()), [1, 2], 2, sampler=Sampler(count=4, seed=3))
    pts = report.points
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            assert np.linalg.norm(pts[i] - pts[j]) > report.dedupe_radius


# vanishing cycles ------------------------------------------------------------

@pytest.fixture(scope="module")
def arc_setup():
    m = standard_matching([1, 2])
    return m, arc_stage(m, 0), strand_slice(2, 2)


def far_point(slice_, scale, seed):
    rng = np.random.default_rng(seed)
    y = slice_project(slice_, d_config([1, 2], 2))
    y = y + scale * (rng.normal(size=slice_.dim_slice) + 1j * rng.normal(size=slice_.dim_slice))
    system = FibreSystem(slice_, np.array([1, 2], dtype=complex), 2)
    return newton_to_fibre(system, y, jacobian="analytic", tol=1e-11, max_iter=100)[0]


def test_diagonal_point_is_on_the_vanishing_cycle(arc_setup):
    _, stage, sl = arc_setup
    details = {}
    y = slice_project(sl, d_config([1, 2], 2))
    assert vanishing_cycle_membership(y, stage, sl, details=details)
    assert details["decreasing"]
    assert details["final_distance"] < VanishingOptions().tau_vanish / 10


@pytest.mark.parametrize("scale", [1.0, 4.0])
def test_far_point_is_not_on_the_vanishing_cycle(arc_setup, scale):
    _, stage, sl = arc_setup
    assert vanishing_cycle_membership(far_point(sl, scale, 1), stage, sl) is False


def test_indeterminate_band_raises(arc_setup):
    _, stage, sl = arc_setup
    y = slice_project(sl, d_config([1, 2], 2))
    # the diagonal point ends at distance ~1.6e-3; a tiny tau puts it in the band
    opts = VanishingOptions(tau_vanish=1e-3)
    with pytest.raises(IndeterminateConvergence):
        vanishing_cycle_membership(y, stage, sl, opts)


def test_verdicts_survive_refinement(arc_setup):
    m, stage, sl = arc_setup
    cloud = lagrangian_sample(m, 2, 3, seed=5)
    points = list(cloud) + [far_point(sl, s, 2) for s in (0.5, 2.0)]
    fine = VanishingOptions(samples=129, transport=TransportOptions(tol=1e-10, step_max=2.5e-2))
    verdicts = []
    for y in points:
        pair = []
        for opts in (VanishingOptions(), fine):
            try:
                pair.append(vanishing_cycle_membership(y, stage, sl, opts))
            except IndeterminateConvergence:
                pair.append(None)
        verdicts.append(pair)
    for coarse, refined in verdicts:
        if coarse is not None and refined is not None:
            assert coarse == refined
    assert {v[0] for v in verdicts} >= {True, False}


def test_lagrangian_sample_points_are_members_in_the_base_fibre(arc_setup):
    m, stage, sl = arc_setup
    details = []
    cloud = lagrangian_sample(m, 2, 4, seed=0, details=details)
    assert cloud.shape[1] == sl.dim_slice
    assert len(details) == 4
    system = FibreSystem(sl, np.array([1, 2], dtype=complex), 2)
    for y in cloud:
        assert np.max(np.abs(system.residual(y))) < 1e-8
        assert vanishing_cycle_membership(y, stage, sl)


def test_touching_arcs_are_rejected():
    pts = PointConfig([0, 1, 2, 3])
    straight = lambda p, q, pair: Arc(pair, lambda u: p + (q - p) * u, lambda u: q - p)
    with pytest.raises(ArcsNotDisjoint):
        CrossinglessMatching(pts, (straight(0, 2, (0, 2)), straight(1, 3, (1, 3))))


# intersection generators -----------------------------------------------------

def test_identical_clouds_are_a_continuum():
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(10, 4)) + 1j * rng.normal(size=(10, 4))
    report = intersection_generators(cloud, cloud.copy())
    assert report.continuum_flag
    assert report.count == 0


def test_disjoint_clouds_give_empty_report():
    rng = np.random.default_rng(1)
    cloud = rng.normal(size=(10, 4)) + 1j * rng.normal(size=(10, 4))
    report = intersection_generators(cloud, cloud + 10.0)
    assert not report.continuum_flag
    assert report.count == 0
    assert report.samples == []


def test_isolated_coincidence_is_refined_and_deduplicated():
    rng = np.random.default_rng(2)
    minus = rng.normal(size=(10, 3)) + 1j * rng.normal(size=(10, 3))
    plus = minus + 10.0
    plus[0] = minus[0] + 1e-3
    plus[1] = minus[0] + 2e-3
    exact = minus[0] + 5e-4
    report = intersection_generators(minus, plus, refine=lambda g: (exact, 0.0))
    assert report.count == 1
    assert np.allclose(report.points[0], exact)
