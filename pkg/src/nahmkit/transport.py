"""Parallel transport in fibres of the thick-eigenvalue map.

A fibre point is a vector of slice coordinates ``c`` with
``chi_tilde(e + sum c_i b_i) = beta(t)``.  Its horizontal velocity is the
minimum-norm solution of the linearised fibre condition, written on the
characteristic-polynomial coefficients, which are polynomial in ``c``:

    J(c) V = T(beta) beta_dot,

``J`` being the coefficient Jacobian and ``T`` the derivative of the target
coefficients with respect to the thick values.  The minimum-norm solution is
orthogonal (Frobenius metric) to ``ker J``, the tangent space of the fibre.
Integration uses the Bogacki-Shampine 3(2) pair, and every accepted step is
projected back onto the exact fibre by Newton's method.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .adjoint_quotient import (FibreSystem, PointConfig, chi_tilde, coefficient_scale,
                               d_config, fibre_solve, newton_to_fibre, slice_embed,
                               slice_project, stratum_roots, target_coefficient_derivatives,
                               target_coefficients)
from .braids import BraidWord, CrossinglessMatching, EntranceStage, StrandPaths, braid_to_paths
from .errors import (ConfigError, Diverged, IndeterminateConvergence, InsufficientSeeds,
                     NewtonFailure, NoSamplesConverged, NumericalFailure,
                     PreconditionViolation, SingularJacobian, StepUnderflow, StratumViolation)
from .lie_core import Partition, SlodowySlice, jordan_nilpotent, slodowy_slice, weight_to_partition

DEDUPE_RADIUS = 1e-4


@dataclass(frozen=True)
class TransportOptions:
    step_init: float = 1e-2
    step_min: float = 1e-9
    step_max: float = 5e-2
    tol: float = 1e-9
    fibre_tol: float = 1e-10
    clamp_radius: float | None = None
    hard_radius: float = 1e4
    max_steps: int = 20000
    record: bool = True

    def __post_init__(self):
        if not (0 < self.step_min <= self.step_init <= self.step_max):
            raise ConfigError("need 0 < step_min <= step_init <= step_max")
        if self.tol <= 0 or self.fibre_tol <= 0:
            raise ConfigError("tolerances must be positive")


@dataclass
class TransportResult:
    endpoint: np.ndarray
    coords: np.ndarray
    samples: list[tuple[float, np.ndarray]]
    max_fibre_drift: float
    clamped: bool
    steps: int
    rejected: int
    max_tracking_error: float = 0.0
    times: np.ndarray = field(default_factory=lambda: np.empty(0))


def strand_partition(k: int, n: int, weight: Sequence[int] | None = None) -> Partition:
    """Concatenated Jordan type for ``k`` strands of the given weight.

    The default weight ``(1, 0, ..., 0)`` gives ``[N-1, 1]`` per strand.
    """
    lam = list(weight) if weight is not None else [1] + [0] * (n - 2)
    parts: list[int] = []
    for _ in range(k):
        parts += list(weight_to_partition(lam).parts)
    return Partition(parts)


def strand_slice(k: int, n: int, pi: Partition | None = None) -> SlodowySlice:
    pi = pi if pi is not None else strand_partition(k, n)
    if pi.n != k * n:
        raise ConfigError(f"partition of {pi.n} does not fit sl({k * n})")
    return slodowy_slice(jordan_nilpotent(pi))


# derivatives of the thick values --------------------------------------------

def _riesz_projector(x: np.ndarray, centre: complex, radius: float, nodes: int = 64) -> np.ndarray:
    """Spectral projector for the eigenvalues inside a circle (trapezoid rule)."""
    n = x.shape[0]
    eye = np.eye(n)
    acc = np.zeros((n, n), dtype=complex)
    for theta in 2 * np.pi * (np.arange(nodes) + 0.5) / nodes:
        w = radius * np.exp(1j * theta)
        acc += w * np.linalg.solve((centre + w) * eye - x, eye)
    return acc / nodes


def chi_tilde_jacobian(x: np.ndarray, thick: Sequence[complex], n: int,
                       directions: np.ndarray, collision_tol: float = 1e-5) -> np.ndarray:
    """``d z_a / d c_i`` of shape ``(k, d)`` along the given matrix directions.

    Uses ``dz_a = tr(P_a dX) / (N - 1)`` with Riesz projectors; if two
    stratum eigenvalues are within ``collision_tol`` (relative) the
    derivative falls back to central differences of ``chi_tilde``.
    """
    thick = np.asarray(thick, dtype=complex)
    k = len(thick)
    spectrum = stratum_roots(thick, n)
    scale = max(1.0, float(np.max(np.abs(spectrum))))
    out = np.empty((k, len(directions)), dtype=complex)
    gaps = []
    for a, z in enumerate(thick):
        others = np.delete(spectrum, np.flatnonzero(np.isclose(spectrum, z, rtol=0, atol=1e-12 * scale)))
        gaps.append(np.min(np.abs(others - z)) if others.size else scale)
    if min(gaps) < collision_tol * scale:
        for i, b in enumerate(directions):
            h = 1e-6 * scale
            zp = chi_tilde(x + h * b, k, n, reference=thick).points
            zm = chi_tilde(x - h * b, k, n, reference=thick).points
            out[:, i] = (zp - zm) / (2 * h)
        return out
    for a, z in enumerate(thick):
        proj = _riesz_projector(x, z, gaps[a] / 2)
        out[a] = np.einsum("ab,iba->i", proj, directions) / (n - 1)
    return out


# horizontal lift ------------------------------------------------------------

def horizontal_velocity(coords: Sequence[complex], beta_dot: Sequence[complex],
                        slice_: SlodowySlice, k: int, n: int,
                        thick: Sequence[complex] | None = None) -> np.ndarray:
    """Minimum-norm slice velocity lifting the strand velocities ``beta_dot``."""
    coords = np.asarray(coords, dtype=complex)
    x = slice_embed(slice_, coords)
    if thick is None:
        thick = chi_tilde(x, k, n).points
    system = FibreSystem(slice_, thick, n)
    _, jac = system.residual_and_jacobian(coords)
    rhs = target_coefficient_derivatives(thick, n) @ np.asarray(beta_dot, dtype=complex)
    rhs = rhs * system.weights
    v, _, rank, s = np.linalg.lstsq(jac, rhs, rcond=None)
    if rank < jac.shape[0] or s[-1] <= 1e-12 * max(s[0], 1.0):
        raise SingularJacobian("coefficient Jacobian is rank deficient")
    return v


def fibre_tangent(coords: np.ndarray, slice_: SlodowySlice, thick: Sequence[complex],
                  n: int) -> np.ndarray:
    """Orthonormal basis (columns) of the complex tangent space of the fibre."""
    system = FibreSystem(slice_, thick, n)
    _, jac = system.residual_and_jacobian(np.asarray(coords, dtype=complex))
    return sla.null_space(jac, rcond=1e-10)


# transport ------------------------------------------------------------------

def _project(slice_: SlodowySlice, points: np.ndarray, n: int, coords: np.ndarray,
             tol: float) -> tuple[np.ndarray, float]:
    system = FibreSystem(slice_, points, n)
    drift = float(np.max(np.abs(system.residual(coords))))
    try:
        coords, _, _ = newton_to_fibre(system, coords, jacobian="analytic", tol=tol, max_iter=30)
    except NewtonFailure as exc:
        raise Diverged(f"fibre re-projection failed: {exc}") from exc
    return coords, drift


def parallel_transport(y0: Sequence[complex] | np.ndarray, paths: StrandPaths,
                       slice_: SlodowySlice, opts: TransportOptions = TransportOptions(),
                       t_span: tuple[float, float] = (0.0, 1.0),
                       schedule: Sequence[float] | None = None) -> TransportResult:
    """Transport slice coordinates ``y0`` along ``paths``.

    ``y0`` may also be a matrix, which is projected onto slice coordinates.
    The fibre condition at the start is enforced to ``fibre_tol`` first.

    With ``schedule`` (times running from ``t_span[0]`` to ``t_span[1]``)
    the same steps are replayed without error control, which makes the
    endpoint a smooth function of ``y0``; ``result.times`` of an adaptive run
    is a valid schedule.
    """
    k = paths.k
    if slice_.n % k:
        raise ConfigError("slice dimension is not a multiple of the strand count")
    n = slice_.n // k
    y0 = np.asarray(y0, dtype=complex)
    coords = slice_project(slice_, y0) if y0.ndim == 2 else y0.copy()
    t0, t1 = t_span
    z, dz = paths.at(t0)
    system = FibreSystem(slice_, z, n)
    start_res = float(np.max(np.abs(system.residual(coords))))
    if start_res > 1e-6:
        raise PreconditionViolation(f"start point is not in the fibre (residual {start_res:.3g})")
    coords, _ = _project(slice_, z, n, coords, opts.fibre_tol)

    samples = [(t0, coords.copy())] if opts.record else []
    clamped = False
    max_drift = 0.0
    max_track = 0.0

    def rhs(t, c):
        nonlocal clamped
        zt, dzt = paths.at(t)
        if not np.any(dzt):
            return np.zeros_like(c)
        v = horizontal_velocity(c, dzt, slice_, k, n, thick=zt)
        if opts.clamp_radius is not None:
            norm = np.linalg.norm(c)
            if norm > opts.clamp_radius:
                clamped = True
                v = v * (opts.clamp_radius / norm)
        return v

    direction = 1.0 if t1 >= t0 else -1.0
    t = t0
    h = opts.step_init
    steps = rejected = 0
    times = [t0]
    replay = None if schedule is None else list(np.asarray(schedule, dtype=float)[1:])
    k1 = rhs(t, coords)
    while direction * (t1 - t) > 1e-14:
        if steps + rejected > opts.max_steps:
            raise StepUnderflow("maximum number of steps exceeded")
        if replay is not None:
            if not replay:
                break
            dt = replay.pop(0) - t
            h = abs(dt)
        else:
            h = min(h, opts.step_max, abs(t1 - t))
            dt = direction * h
        k2 = rhs(t + dt / 2, coords + dt / 2 * k1)
        k3 = rhs(t + 3 * dt / 4, coords + 3 * dt / 4 * k2)
        new = coords + dt * (2 / 9 * k1 + 1 / 3 * k2 + 4 / 9 * k3)
        k4 = rhs(t + dt, new)
        err_vec = dt * (-5 / 72 * k1 + 1 / 12 * k2 + 1 / 9 * k3 - 1 / 8 * k4)
        scale = opts.tol * (1.0 + np.max(np.abs(coords)))
        err = float(np.max(np.abs(err_vec))) / scale
        if replay is not None or err <= 1.0 or h <= opts.step_min:
            if replay is None and h <= opts.step_min and err > 1.0:
                raise StepUnderflow(f"step size fell below {opts.step_min:g} at t={t:.6g}")
            t = t + dt
            zt, _ = paths.at(t)
            coords, drift = _project(slice_, zt, n, new, opts.fibre_tol)
            max_drift = max(max_drift, drift)
            norm = np.linalg.norm(coords)
            if not np.isfinite(norm) or (opts.clamp_radius is None and norm > opts.hard_radius):
                raise Diverged(f"transport left the radius {opts.hard_radius:g} at t={t:.6g}")
            got = chi_tilde(slice_embed(slice_, coords), k, n, reference=zt).points
            max_track = max(max_track, float(np.max(np.abs(got - zt))))
            steps += 1
            times.append(t)
            if opts.record:
                samples.append((t, coords.copy()))
            k1 = rhs(t, coords)
        else:
            rejected += 1
        factor = 0.9 * err ** (-1 / 3) if err > 0 else 5.0
        h = max(opts.step_min, h * min(5.0, max(0.2, factor)))
    return TransportResult(slice_embed(slice_, coords), coords, samples, max_drift, clamped,
                           steps, rejected, max_track, np.array(times))


# fixed points of the monodromy ----------------------------------------------

@dataclass(frozen=True)
class Sampler:
    count: int = 4
    radius: float = 0.5
    seed: int = 0


@dataclass
class FixedPointReport:
    points: list[np.ndarray]
    residuals: list[float]
    dedupe_radius: float
    continuum_flag: bool
    samples: list[dict] = field(default_factory=list)
    degenerate: int = 0

    @property
    def count(self) -> int:
        return len(self.points)


def _dedupe(points: list[np.ndarray], residuals: list[float], radius: float):
    order = sorted(range(len(points)), key=lambda i: tuple(np.round(
        np.concatenate([points[i].real, points[i].imag]), 10)))
    kept, res = [], []
    for i in order:
        if all(np.linalg.norm(points[i] - q) > radius for q in kept):
            kept.append(points[i])
            res.append(residuals[i])
    return kept, res


class FibreChart:
    """Local chart ``xi -> project(c0 + T xi)`` of a fibre, ``xi`` real."""

    def __init__(self, slice_: SlodowySlice, points: np.ndarray, n: int, c0: np.ndarray,
                 fibre_tol: float = 1e-12):
        self.slice, self.points, self.n = slice_, np.asarray(points), n
        self.c0 = np.asarray(c0, dtype=complex)
        self.basis = fibre_tangent(self.c0, slice_, self.points, n)
        self.system = FibreSystem(slice_, self.points, n)
        self.fibre_tol = fibre_tol

    @property
    def dim(self) -> int:
        return 2 * self.basis.shape[1]

    def project(self, guess: np.ndarray) -> np.ndarray:
        coords, _, _ = newton_to_fibre(self.system, guess, jacobian="analytic",
                                       tol=self.fibre_tol, max_iter=50)
        return coords

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        m = self.basis.shape[1]
        return self.project(self.c0 + self.basis @ (xi[:m] + 1j * xi[m:]))


def _realify(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v.real, v.imag])


def _fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, f0: np.ndarray,
                 h: float) -> np.ndarray:
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        jac[:, i] = (fun(x + step) - f0) / h
    return jac


class BatchedFlow:
    """Horizontal flow of many fibre points at once on a frozen step schedule.

    Each step is the third-order Bogacki-Shampine update followed by a
    minimum-norm Newton projection, vectorised over the batch.  Used for the
    finite-difference Jacobians of the monodromy map.
    """

    def __init__(self, slice_: SlodowySlice, paths: StrandPaths, times: Sequence[float],
                 fibre_tol: float = 1e-10):
        self.slice, self.paths = slice_, paths
        self.times = np.asarray(times, dtype=float)
        self.k = paths.k
        self.n = slice_.n // self.k
        self.fibre_tol = fibre_tol
        size = slice_.n
        self.signs = (-1.0) ** (np.arange(1, size + 1) + 1)

    def _system(self, coords, points):
        x = self.slice.basepoint + np.einsum("bi,ipq->bpq", coords, self.slice.kernel_basis)
        b, size, _ = x.shape
        a = np.zeros((b, size + 1), dtype=complex)
        a[:, size] = 1.0
        ms = np.empty((b, size, size, size), dtype=complex)
        m = np.zeros((b, size, size), dtype=complex)
        eye = np.eye(size)
        for j in range(1, size + 1):
            m = x @ m + a[:, size - j + 1, None, None] * eye
            ms[:, j - 1] = m
            a[:, size - j] = -np.trace(x @ m, axis1=1, axis2=2) / j
        c = ((-1.0) ** np.arange(size + 1)) * a[:, ::-1]
        jac = np.einsum("bjpq,iqp->bji", ms, self.slice.kernel_basis) * self.signs[:, None]
        scale = coefficient_scale(points, self.n)
        weights = scale ** -np.arange(2, size + 1, dtype=float)
        res = (c[:, 2:] - target_coefficients(points, self.n)) * weights
        return res, jac[:, 1:] * weights[:, None]

    @staticmethod
    def _min_norm(jac, rhs):
        jh = np.conj(np.swapaxes(jac, 1, 2))
        return (jh @ np.linalg.solve(jac @ jh, rhs[..., None]))[..., 0]

    def velocity(self, t, coords):
        z, dz = self.paths.at(t)
        _, jac = self._system(coords, z)
        rhs = target_coefficient_derivatives(z, self.n) @ dz
        scale = coefficient_scale(z, self.n)
        rhs = rhs * scale ** -np.arange(2, self.slice.n + 1, dtype=float)
        return self._min_norm(jac, np.broadcast_to(rhs, (len(coords), len(rhs))))

    def project(self, coords, points, max_iter: int = 30):
        for _ in range(max_iter):
            res, jac = self._system(coords, points)
            if np.max(np.abs(res)) < self.fibre_tol:
                return coords
            coords = coords - self._min_norm(jac, res)
        if not np.all(np.isfinite(coords)) or np.max(np.abs(self._system(coords, points)[0])) > 1e3 * self.fibre_tol:
            raise Diverged("batched fibre projection failed")
        return coords

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        y = np.array(coords, dtype=complex, ndmin=2)
        for t, t_next in zip(self.times[:-1], self.times[1:]):
            dt = t_next - t
            k1 = self.velocity(t, y)
            k2 = self.velocity(t + dt / 2, y + dt / 2 * k1)
            k3 = self.velocity(t + 3 * dt / 4, y + 3 * dt / 4 * k2)
            y = y + dt * (2 / 9 * k1 + 1 / 3 * k2 + 4 / 9 * k3)
            y = self.project(y, self.paths.at(t_next)[0])
            if not np.all(np.isfinite(y)):
                raise Diverged("batched transport produced non-finite values")
        return y


def _monodromy_defect(flow: BatchedFlow, chart: FibreChart, fd_step: float,
                      with_jacobian: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """``G = h(Y) - Y`` at the chart centre, and its real Jacobian in the chart."""
    centre = chart.c0
    pts = [centre]
    if with_jacobian:
        m = chart.basis.shape[1]
        for i in range(chart.dim):
            pts.append(chart.project(centre + chart.basis[:, i % m] * (fd_step if i < m else 1j * fd_step)))
    out = flow(np.array(pts))
    g = np.array([_realify(o - p) for o, p in zip(out, pts)])
    jac = ((g[1:] - g[0]) / fd_step).T if with_jacobian else None
    return g[0], jac


def solve_fixed_point(flow: BatchedFlow, chart: FibreChart, tol: float = 1e-9,
                      max_iter: int = 40, fd_step: float = 1e-6,
                      degeneracy_rtol: float = 1e-3) -> dict:
    """Levenberg-Marquardt on ``G(Y) = h(Y) - Y`` over the fibre.

    Each accepted step re-centres the chart, and the Jacobian is rebuilt by
    forward differences, all perturbed points going through one batched
    transport.  Returns the root, its residual, the singular values of the
    last Jacobian and whether the root is degenerate (not isolated).
    """
    g, jac = _monodromy_defect(flow, chart, fd_step, True)
    res = float(np.linalg.norm(g))
    mu = 1e-3 * float(np.max(np.sum(jac ** 2, axis=0)))
    it = rejected = 0
    while float(np.max(np.abs(g))) > tol and it < max_iter and rejected < 12:
        normal = jac.T @ jac
        step = np.linalg.solve(normal + mu * np.eye(len(normal)), -jac.T @ g)
        try:
            trial = FibreChart(chart.slice, chart.points, chart.n, chart(step), chart.fibre_tol)
            g1, _ = _monodromy_defect(flow, trial, fd_step, False)
            r1 = float(np.linalg.norm(g1))
        except (NumericalFailure, StratumViolation):
            r1 = np.inf
        if r1 < res:
            chart, res = trial, r1
            g, jac = _monodromy_defect(flow, chart, fd_step, True)
            mu /= 3.0
            it += 1
            rejected = 0
        else:
            mu *= 4.0
            rejected += 1
    sv = np.linalg.svd(jac, compute_uv=False)
    residual = float(np.max(np.abs(g)))
    degenerate = bool(sv[-1] < degeneracy_rtol * max(sv[0], 1e-300))
    return {"coords": chart.c0, "residual": residual, "converged": residual <= tol,
            "iterations": it, "singular_values": sv, "degenerate": degenerate}


def monodromy_fixed_points(word: BraidWord, base: PointConfig | Sequence[complex], n: int,
                           pi: Partition | None = None, sampler: Sampler = Sampler(),
                           opts: TransportOptions = TransportOptions(),
                           dedupe_radius: float = DEDUPE_RADIUS,
                           steps_per_letter: int = 16,
                           search_tol: float = 1e-6) -> FixedPointReport:
    """Fixed points of the monodromy of ``word`` on the fibre over ``base``.

    Random seeds in a ball around the diagonal point are projected onto the
    fibre and refined by Gauss-Newton on ``h(Y) - Y``.  Only isolated
    (non-degenerate) roots are counted; degenerate roots mark a continuum
    of fixed points and set ``continuum_flag``, as does the empty word, for
    which every sample is fixed.
    """
    if not word.is_pure:
        raise PreconditionViolation("monodromy fixed points need a pure braid")
    base = base if isinstance(base, PointConfig) else PointConfig(base)
    k = word.strands
    slice_ = strand_slice(k, n, pi)
    paths = braid_to_paths(word, base, steps_per_letter)
    rng = np.random.default_rng(sampler.seed)
    centre = slice_project(slice_, d_config(base.points, n))
    d = slice_.dim_slice
    records, points, residuals = [], [], []
    identity = not word.letters
    continuum = identity
    degenerate = 0
    for i in range(sampler.count):
        direction = rng.normal(size=d) + 1j * rng.normal(size=d)
        radius = sampler.radius * rng.uniform() ** (1 / (2 * d))
        seed = centre + radius * direction / np.linalg.norm(direction)
        rec = {"sample": i}
        try:
            y, c = fibre_solve(slice_, base, k, n, seed, jacobian="analytic", return_coords=True)
            if identity:
                out = parallel_transport(c, paths, slice_, replace(opts, record=False))
                res = float(np.max(np.abs(out.coords - c)))
                rec.update(status="fixed", residual=res)
                points.append(c)
                residuals.append(res)
                records.append(rec)
                continue
            chart = FibreChart(slice_, base.points, n, c)
            quick = replace(opts, record=False, tol=search_tol, step_max=max(opts.step_max, 0.1))
            times = parallel_transport(c, paths, slice_, quick).times
            sol = solve_fixed_point(BatchedFlow(slice_, paths, times, opts.fibre_tol), chart)
            rec.update(status="converged" if sol["converged"] else "unconverged",
                       residual=sol["residual"], degenerate=sol["degenerate"],
                       iterations=sol["iterations"])
            if sol["converged"]:
                if sol["degenerate"]:
                    degenerate += 1
                    continuum = True
                else:
                    points.append(sol["coords"])
                    residuals.append(sol["residual"])
        except (NumericalFailure, StratumViolation) as exc:
            rec.update(status="failed", error=type(exc).__name__)
        records.append(rec)
    if not any(r["status"] in ("fixed", "converged", "unconverged") for r in records):
        raise NoSamplesConverged("no sample could be transported")
    kept, res = _dedupe(points, residuals, dedupe_radius)
    return FixedPointReport(kept, res, dedupe_radius, continuum, records, degenerate)


# vanishing cycles ------------------------------------------------------------

@dataclass(frozen=True)
class VanishingOptions:
    eps_sing: float = 1e-3
    tau_vanish: float = 0.05
    samples: int = 65
    transport: TransportOptions = TransportOptions(tol=1e-8)


def merge_target(size: int, n: int, pairs: Sequence[tuple[int, int]],
                 merge_points: Sequence[complex]) -> tuple[np.ndarray, np.ndarray]:
    """Limit matrix ``D(r) + D(r)`` on each merging pair and the entry mask.

    Strand ``a`` occupies the diagonal block ``[aN, (a+1)N)``.  The mask
    selects every row and column touching a merging block; entries outside
    it are not constrained by the limit.
    """
    target = np.zeros((size, size), dtype=complex)
    touched = np.zeros(size, dtype=bool)
    for (i, j), r in zip(pairs, merge_points):
        for a in (i, j):
            block = slice(a * n, (a + 1) * n)
            target[block, block] = np.diag(np.diag(d_config([r], n)))
            touched[block] = True
    mask = touched[:, None] | touched[None, :]
    return target, mask


def limit_distance(x: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    return float(np.linalg.norm((x - target)[mask]))


def arc_stage(m: CrossinglessMatching, index: int) -> EntranceStage:
    """Closing arc ``index`` alone, starting from the full base configuration."""
    arc = m.arcs[index]
    return EntranceStage(arc, m.points.points.copy(), tuple(arc.pair))


def simultaneous_paths(m: CrossinglessMatching, s_end: float, samples: int = 65) -> StrandPaths:
    """All arcs closing together, ``s in [0, s_end]`` reparametrised to ``[0, 1]``."""
    stages = [arc_stage(m, i) for i in range(len(m.arcs))]

    def ev(t):
        z = m.points.points.astype(complex).copy()
        dz = np.zeros_like(z)
        for st in stages:
            zs, dzs = st.position(t * s_end)
            for slot in st.slots:
                z[slot], dz[slot] = zs[slot], dzs[slot] * s_end
        return z, dz

    t = np.linspace(0.0, 1.0, samples)
    vals = [ev(ti) for ti in t]
    return StrandPaths(t, np.array([v[0] for v in vals]), np.array([v[1] for v in vals]), ev)


def vanishing_cycle_membership(y: Sequence[complex], stage: EntranceStage, slice_: SlodowySlice,
                               opts: VanishingOptions = VanishingOptions(),
                               details: dict | None = None) -> bool:
    """Does naive transport along the closing arc take ``y`` to ``D(r) + D(r)``?

    The point is transported up to ``s = 1 - eps_sing`` while the distance to
    the merged limit is monitored.  The verdict is true when the final
    distance is below ``tau_vanish / 10`` and the distance is decreasing over
    the second half of the path, false when it is above ``10 tau_vanish`` or
    transport diverges, and otherwise :class:`IndeterminateConvergence`.
    """
    k = len(stage.config)
    n = slice_.n // k
    s_end = 1.0 - opts.eps_sing
    paths = stage.paths(s_end=s_end, samples=opts.samples)
    target, mask = merge_target(slice_.n, n, [stage.slots], [stage.merge_point])
    info = details if details is not None else {}
    try:
        out = parallel_transport(y, paths, slice_, opts.transport)
    except (Diverged, StepUnderflow, SingularJacobian, NewtonFailure) as exc:
        info.update(verdict=False, reason=type(exc).__name__)
        return False
    dist = np.array([limit_distance(slice_embed(slice_, c), target, mask) for _, c in out.samples])
    times = np.array([t for t, _ in out.samples])
    final = float(dist[-1])
    tail = dist[times >= 0.5]
    decreasing = bool(np.all(np.diff(tail) <= 1e-9 * (1.0 + tail[:-1])))
    info.update(final_distance=final, decreasing=decreasing, drift=out.max_fibre_drift)
    lo, hi = opts.tau_vanish / 10, opts.tau_vanish * 10
    if final < lo and decreasing:
        info["verdict"] = True
        return True
    if final > hi:
        info["verdict"] = False
        return False
    info["verdict"] = None
    raise IndeterminateConvergence(
        f"distance {final:.3g} at s = {s_end:g} is not clearly on either side of {opts.tau_vanish:g}")


def closest_fibre_point(slice_: SlodowySlice, points: Sequence[complex], n: int,
                        target: np.ndarray, mask: np.ndarray, start: np.ndarray,
                        tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Minimise ``|(X - target)[mask]|`` over the fibre.

    Feasible Gauss-Newton: the objective is affine in the coordinates, so
    each step is its least-squares minimiser along the fibre tangent space,
    followed by projection back onto the fibre and backtracking.
    """
    system = FibreSystem(slice_, points, n)
    lin = slice_.kernel_basis[:, mask].T
    offset = (slice_.basepoint - target)[mask]
    project = lambda c: newton_to_fibre(system, c, jacobian="analytic", tol=1e-12, max_iter=50)[0]
    c = project(np.array(start, dtype=complex))
    value = np.linalg.norm(lin @ c + offset)
    for _ in range(max_iter):
        null = fibre_tangent(c, slice_, points, n)
        move = null @ np.linalg.lstsq(lin @ null, -(lin @ c + offset), rcond=None)[0]
        t = 1.0
        while t > 1e-6:
            trial = project(c + t * move)
            trial_value = np.linalg.norm(lin @ trial + offset)
            if trial_value < value:
                break
            t /= 2
        else:
            break
        gain = value - trial_value
        c, value = trial, trial_value
        if gain < tol * (1.0 + value):
            break
    return c


def lagrangian_sample(m: CrossinglessMatching, n: int, count: int, seed: int = 0,
                      pi: Partition | None = None, opts: VanishingOptions = VanishingOptions(),
                      s_seed: float | None = None, spread: float = 1.0,
                      details: list | None = None) -> np.ndarray:
    """Point cloud on the vanishing cycle of the matching, in the base fibre.

    Seeds are random fibre points at ``s_seed`` (all arcs closing together,
    default ``1 - eps_sing``)
    pulled to the nearest point of the fibre to the merged limit; they are
    transported back to ``s = 0`` and kept if every arc's membership test
    says true.  Returns an array of shape ``(kept, dim_slice)``.
    """
    k = m.points.k
    slice_ = strand_slice(k, n, pi)
    s_seed = 1.0 - opts.eps_sing if s_seed is None else s_seed
    forward = simultaneous_paths(m, s_seed, opts.samples)
    z_seed, _ = forward.at(1.0)
    target, mask = merge_target(slice_.n, n, [a.pair for a in m.arcs], [a.midpoint for a in m.arcs])
    rng = np.random.default_rng(seed)
    centre = slice_project(slice_, d_config(z_seed, n))
    d = slice_.dim_slice
    backward = forward.reversed()
    stages = [arc_stage(m, i) for i in range(len(m.arcs))]
    cloud = []
    for i in range(count):
        rec = {"sample": i}
        try:
            start = centre + spread * (rng.normal(size=d) + 1j * rng.normal(size=d)) / np.sqrt(2 * d)
            start = newton_to_fibre(FibreSystem(slice_, z_seed, n), start, jacobian="analytic",
                                    tol=1e-11, max_iter=100)[0]
            c = closest_fibre_point(slice_, z_seed, n, target, mask, start)
            y = parallel_transport(c, backward, slice_, opts.transport).coords
            ok = all(vanishing_cycle_membership(y, st, slice_, opts) for st in stages)
            rec["member"] = ok
            if ok:
                cloud.append(y)
        except (NumericalFailure, StratumViolation) as exc:
            rec["error"] = type(exc).__name__
        if details is not None:
            details.append(rec)
    if len(cloud) < max(1, count / 10):
        raise InsufficientSeeds(f"only {len(cloud)} of {count} seeds lie on the vanishing cycle")
    return np.array(cloud)


def intersection_generators(cloud_minus: np.ndarray, cloud_plus: np.ndarray,
                            refine: Callable[[np.ndarray], tuple[np.ndarray, float]] | None = None,
                            capture_radius: float = 1e-2,
                            dedupe_radius: float = DEDUPE_RADIUS,
                            continuum_fraction: float = 0.5) -> FixedPointReport:
    """Near-coincidences of two clouds in one fibre, refined and deduplicated.

    When more than ``continuum_fraction`` of either cloud is captured the
    intersection is not transverse; the flag is set and no count is claimed.
    """
    from scipy.spatial import cKDTree

    minus = np.atleast_2d(np.asarray(cloud_minus, dtype=complex))
    plus = np.atleast_2d(np.asarray(cloud_plus, dtype=complex))
    if minus.size == 0 or plus.size == 0:
        return FixedPointReport([], [], dedupe_radius, False)
    real = lambda a: np.concatenate([a.real, a.imag], axis=1)
    tree = cKDTree(real(plus))
    dist, idx = tree.query(real(minus))
    hits = np.flatnonzero(dist < capture_radius)
    records = [{"minus": int(i), "plus": int(idx[i]), "distance": float(dist[i])} for i in hits]
    captured_plus = len(set(idx[hits].tolist()))
    if len(hits) > continuum_fraction * len(minus) or captured_plus > continuum_fraction * len(plus):
        return FixedPointReport([], [], dedupe_radius, True, records)
    points, residuals = [], []
    for rec in records:
        guess = (minus[rec["minus"]] + plus[rec["plus"]]) / 2
        if refine is None:
            points.append(guess)
            residuals.append(rec["distance"])
            continue
        try:
            point, res = refine(guess)
        except (NumericalFailure, StratumViolation) as exc:
            rec["error"] = type(exc).__name__
            continue
        points.append(np.asarray(point))
        residuals.append(float(res))
    kept, res = _dedupe(points, residuals, dedupe_radius)
    return FixedPointReport(kept, res, dedupe_radius, False, records)
