"""Adjoint quotient, the thick/thin stratum and fibres inside a Slodowy slice.

An element of ``sl(kN)`` lies in the thick/thin stratum when its spectrum is
``k`` values ``z_a`` of multiplicity ``N - 1`` together with the ``k`` values
``-(N - 1) z_a`` that cancel them in the trace.  The map ``chi_tilde`` reads
off the thick values; its fibres in a slice are found by Newton iteration on
characteristic-polynomial coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatch, NewtonFailure, StratumViolation
from .lie_core import SlodowySlice

SEP_TOL = 1e-9
CLUSTER_RTOL = 1e-6
FIBRE_TOL = 1e-10


@dataclass(frozen=True)
class PointConfig:
    """Ordered configuration of distinct points in the complex plane."""

    points: np.ndarray

    def __init__(self, points: Sequence[complex], sep_tol: float = SEP_TOL):
        pts = np.atleast_1d(np.asarray(points, dtype=complex)).copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.separation <= sep_tol:
            raise StratumViolation(f"points are not distinct (separation {self.separation:.3g})")

    @property
    def k(self) -> int:
        return len(self.points)

    @property
    def separation(self) -> float:
        if self.k < 2:
            return np.inf
        d = np.abs(self.points[:, None] - self.points[None, :])
        return float(d[~np.eye(self.k, dtype=bool)].min())

    def __len__(self) -> int:
        return self.k


def d_block(z: complex, n: int) -> np.ndarray:
    """``diag(z, ..., z, -(n - 1) z)``."""
    if n < 2:
        raise ValueError("block size must be at least 2")
    d = np.full(n, complex(z))
    d[-1] = -(n - 1) * complex(z)
    return np.diag(d)


def d_config(points: Sequence[complex], n: int) -> np.ndarray:
    """Block sum ``D(z_1) + ... + D(z_k)``."""
    pts = list(np.atleast_1d(points))
    size = n * len(pts)
    out = np.zeros((size, size), dtype=complex)
    for a, z in enumerate(pts):
        out[a * n:(a + 1) * n, a * n:(a + 1) * n] = d_block(z, n)
    return out


def charpoly_with_adjugates(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Faddeev-LeVerrier recursion.

    Returns ``(c, m)`` where ``c[j]`` are the elementary symmetric functions of
    the eigenvalues (``det(t - x) = sum_j (-1)^j c_j t^(n-j)``) and ``m[j-1]``
    the matrices with ``dc_j = (-1)^(j+1) tr(m[j-1] dx)``.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    a = np.zeros(n + 1, dtype=complex)  # det(t - x) = sum a[i] t^i
    a[n] = 1.0
    ms = np.empty((n, n, n), dtype=complex)
    m = np.zeros((n, n), dtype=complex)
    eye = np.eye(n)
    for k in range(1, n + 1):
        m = x @ m + a[n - k + 1] * eye
        ms[k - 1] = m
        a[n - k] = -np.trace(x @ m) / k
    signs = (-1.0) ** np.arange(n + 1)
    c = signs * a[::-1]
    return c, ms


def chi_invariants(x: np.ndarray) -> np.ndarray:
    """``(c_2, ..., c_n)`` of a traceless matrix."""
    c, _ = charpoly_with_adjugates(x)
    return c[2:]


def charpoly_gradient(x: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients ``c_2..c_n`` and their derivatives along ``directions``.

    ``directions`` has shape ``(d, n, n)``; the Jacobian has shape
    ``(n - 1, d)`` and is complex-linear (coefficients are polynomial).
    """
    c, ms = charpoly_with_adjugates(x)
    n = x.shape[0]
    signs = (-1.0) ** (np.arange(1, n + 1) + 1)
    jac = np.einsum("jab,iba->ji", ms, directions) * signs[:, None]
    return c[2:], jac[1:]


def stratum_roots(points: Sequence[complex], n: int) -> np.ndarray:
    """Full spectrum: each ``z`` repeated ``n - 1`` times and ``-(n - 1) z``."""
    pts = np.asarray(points, dtype=complex)
    return np.concatenate([np.repeat(pts, n - 1), -(n - 1) * pts])


def target_coefficients(points: Sequence[complex], n: int) -> np.ndarray:
    """``c_2..c_{kn}`` of ``prod_a (t - z_a)^(n-1) (t + (n-1) z_a)``."""
    poly = np.poly(stratum_roots(points, n))
    size = len(poly) - 1
    return ((-1.0) ** np.arange(size + 1) * poly)[2:]


def target_coefficient_derivatives(points: Sequence[complex], n: int) -> np.ndarray:
    """Matrix ``d c_j / d z_a`` of shape ``(kn - 1, k)``.

    Uses ``d/dr prod (t - r_i) = -prod_{i != r} (t - r_i)`` with the reduced
    polynomial obtained by synthetic division.
    """
    pts = np.asarray(points, dtype=complex)
    roots = stratum_roots(pts, n)
    poly = np.poly(roots)
    size = len(roots)
    signs = (-1.0) ** np.arange(size + 1)
    out = np.zeros((size - 1, len(pts)), dtype=complex)
    for a, z in enumerate(pts):
        grad = np.zeros(size + 1, dtype=complex)
        for r, weight in ((z, n - 1), (-(n - 1) * z, -(n - 1))):
            reduced = _deflate(poly, r)
            grad[1:] -= weight * reduced
        out[:, a] = (signs * grad)[2:]
    return out


def _deflate(poly: np.ndarray, root: complex) -> np.ndarray:
    """Quotient of ``poly`` by ``(t - root)`` (remainder discarded)."""
    q = np.empty(len(poly) - 1, dtype=complex)
    acc = 0.0
    for i in range(len(poly) - 1):
        acc = acc * root + poly[i]
        q[i] = acc
    return q


def coefficient_scale(points: Sequence[complex], n: int) -> float:
    pts = np.asarray(points, dtype=complex)
    return 1.0 + (n - 1) * float(np.max(np.abs(pts), initial=0.0))


def _cluster(values: np.ndarray, threshold: float) -> list[np.ndarray]:
    """Single-linkage clusters of complex values, as index arrays."""
    if len(values) == 1:
        return [np.array([0])]
    pts = np.column_stack([values.real, values.imag])
    labels = fcluster(linkage(pts, method="single"), t=threshold, criterion="distance")
    return [np.flatnonzero(labels == lab) for lab in np.unique(labels)]


def _match(reference: np.ndarray, values: np.ndarray) -> np.ndarray:
    cost = np.abs(reference[:, None] - values[None, :])
    _, cols = linear_sum_assignment(cost)
    return values[cols]


def thick_values(eigs: np.ndarray, k: int, n: int, reference: Sequence[complex] | None = None,
                 cluster_rtol: float = CLUSTER_RTOL) -> np.ndarray:
    """Recover the thick eigenvalues from a spectrum of size ``k n``.

    Eigenvalues of multiplicity ``m`` split at order ``eps^(1/m)`` under
    rounding, so clusters are grown with single linkage from the
    ``cluster_rtol`` threshold until exactly ``2k`` groups remain (``k`` for
    ``n = 2``, where each pair ``z, -z`` is reported as two groups), and the
    resulting multiplicity pattern is validated.
    """
    eigs = np.asarray(eigs, dtype=complex)
    radius = max(float(np.max(np.abs(eigs))), 1e-300)
    if eigs.size != k * n:
        raise DimensionMismatch(f"spectrum of size {eigs.size} is not k*N = {k * n}")
    if n == 2:
        groups = [eigs[g] for g in _cluster(eigs, cluster_rtol * radius)]
        if len(groups) != 2 * k or any(len(g) != 1 for g in groups):
            raise StratumViolation("spectrum is not simple")
        thick = _pair_up(np.array([g[0] for g in groups]), reference)
    else:
        clusters = _merge_to(eigs, 2 * k, cluster_rtol * radius)
        big = [c for c in clusters if len(c) == n - 1]
        small = [c for c in clusters if len(c) == 1]
        if len(big) != k or len(small) != k:
            raise StratumViolation("eigenvalue multiplicities do not match [(N-1)^k 1^k]")
        thick = np.array([eigs[c].mean() for c in big])
        thin = np.array([eigs[c][0] for c in small])
        paired = _match(-(n - 1) * thick, thin)
        tol = max(1e-6 * radius, 1e3 * cluster_rtol * radius)
        if np.max(np.abs(paired + (n - 1) * thick)) > tol:
            raise StratumViolation("thin eigenvalues do not cancel the thick ones")
        if reference is not None:
            thick = _match(np.asarray(reference, dtype=complex), thick)
        else:
            thick = thick[np.lexsort((thick.imag, thick.real))]
    if k > 1:
        d = np.abs(thick[:, None] - thick[None, :])[~np.eye(k, dtype=bool)].min()
        if d <= max(SEP_TOL, 10 * cluster_rtol * radius):
            raise StratumViolation("thick eigenvalues collide")
    return thick


def _merge_to(eigs: np.ndarray, count: int, threshold: float) -> list[np.ndarray]:
    """Agglomerate until at most ``count`` clusters, never below ``threshold``."""
    if len(eigs) <= count:
        return [np.array([i]) for i in range(len(eigs))]
    pts = np.column_stack([eigs.real, eigs.imag])
    tree = linkage(pts, method="single")
    base = fcluster(tree, t=threshold, criterion="distance")
    if len(np.unique(base)) <= count:
        labels = base
    else:
        labels = fcluster(tree, t=count, criterion="maxclust")
    return [np.flatnonzero(labels == lab) for lab in np.unique(labels)]


def _pair_up(values: np.ndarray, reference: Sequence[complex] | None) -> np.ndarray:
    """For ``N = 2`` split simple eigenvalues into pairs ``+-z`` and pick ``z``."""
    k = len(values) // 2
    cost = np.abs(values[:, None] + values[None, :])
    np.fill_diagonal(cost, np.inf)
    rows, cols = linear_sum_assignment(cost)
    scale = max(float(np.max(np.abs(values))), 1.0)
    if np.max(cost[rows, cols]) > 1e-6 * scale:
        raise StratumViolation("spectrum does not split into pairs z, -z")
    reps = []
    seen = set()
    for i, j in zip(rows, cols):
        if i in seen or j in seen:
            continue
        seen.update((i, j))
        z = values[i]
        if (z.real, z.imag) < (-z.real, -z.imag):
            z = -z
        reps.append(z)
    reps = np.array(reps)
    if len(reps) != k:
        raise StratumViolation("spectrum does not split into pairs z, -z")
    if reference is None:
        return reps[np.lexsort((reps.imag, reps.real))]
    ref = np.asarray(reference, dtype=complex)
    cost = np.minimum(np.abs(ref[:, None] - reps[None, :]), np.abs(ref[:, None] + reps[None, :]))
    _, cols = linear_sum_assignment(cost)
    out = reps[cols]
    flip = np.abs(out - ref) > np.abs(-out - ref)
    return np.where(flip, -out, out)


@dataclass(frozen=True)
class ThickThinElement:
    matrix: np.ndarray
    k: int
    n: int
    thick: PointConfig

    def __post_init__(self):
        if self.matrix.shape != (self.k * self.n, self.k * self.n):
            raise DimensionMismatch("matrix size is not k*N")
        got = chi_invariants(self.matrix)
        want = target_coefficients(self.thick.points, self.n)
        scale = coefficient_scale(self.thick.points, self.n)
        powers = scale ** np.arange(2, self.k * self.n + 1)
        if np.max(np.abs(got - want) / powers) > 1e-8:
            raise StratumViolation("characteristic polynomial does not match the thick values")


def chi_tilde(x: np.ndarray | ThickThinElement, k: int | None = None, n: int | None = None,
              reference: Sequence[complex] | None = None) -> PointConfig:
    """Thick eigenvalues of a stratum element.

    Without a reference the values are sorted by real then imaginary part;
    with one they are matched to it by minimal total displacement.
    """
    if isinstance(x, ThickThinElement):
        k, n, matrix = x.k, x.n, x.matrix
        if reference is None:
            reference = x.thick.points
    else:
        matrix = np.asarray(x, dtype=complex)
    if k is None or n is None:
        raise DimensionMismatch("k and N are required")
    eigs = np.linalg.eigvals(matrix)
    return PointConfig(thick_values(eigs, k, n, reference))


def in_stratum(x: np.ndarray, k: int, n: int) -> bool:
    try:
        chi_tilde(x, k, n)
    except StratumViolation:
        return False
    return True


def slice_embed(slice_: SlodowySlice, coords: Sequence[complex]) -> np.ndarray:
    coords = np.asarray(coords, dtype=complex)
    if coords.shape != (slice_.dim_slice,):
        raise DimensionMismatch(f"expected {slice_.dim_slice} slice coordinates, got {coords.shape}")
    return slice_.basepoint + np.tensordot(coords, slice_.kernel_basis, axes=1)


def slice_project(slice_: SlodowySlice, x: np.ndarray) -> np.ndarray:
    """Frobenius-orthogonal projection onto slice coordinates."""
    diff = np.asarray(x, dtype=complex) - slice_.basepoint
    return np.einsum("iab,ab->i", slice_.kernel_basis.conj(), diff)


@dataclass
class FibreSystem:
    """Normalised coefficient mismatch ``F(c)`` for a target configuration."""

    slice: SlodowySlice
    points: np.ndarray
    n: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=complex)
        self.scale = coefficient_scale(self.points, self.n)
        size = self.slice.n
        self.weights = self.scale ** -np.arange(2, size + 1, dtype=float)
        self.target = target_coefficients(self.points, self.n)

    def residual(self, coords: np.ndarray) -> np.ndarray:
        return (chi_invariants(slice_embed(self.slice, coords)) - self.target) * self.weights

    def residual_and_jacobian(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Analytic complex Jacobian from the adjugate recursion."""
        c, jac = charpoly_gradient(slice_embed(self.slice, coords), self.slice.kernel_basis)
        return (c - self.target) * self.weights, jac * self.weights[:, None]

    def fd_jacobian(self, coords: np.ndarray) -> np.ndarray:
        """Real Jacobian with respect to (Re c, Im c) by central differences."""
        d = len(coords)
        m = len(self.target)
        jac = np.empty((2 * m, 2 * d))
        for i in range(2 * d):
            unit = 1.0 if i < d else 1.0j
            h = 1e-6 * (1.0 + abs(coords[i % d]))
            step = np.zeros(d, dtype=complex)
            step[i % d] = unit * h
            diff = (self.residual(coords + step) - self.residual(coords - step)) / (2 * h)
            jac[:, i] = np.concatenate([diff.real, diff.imag])
        return jac


def newton_to_fibre(system: FibreSystem, coords: np.ndarray, jacobian: str = "fd",
                    tol: float = FIBRE_TOL, max_iter: int = 100) -> tuple[np.ndarray, int, float]:
    """Minimum-norm Newton iteration onto the fibre.

    Returns ``(coords, iterations, residual)``.  The system is
    underdetermined, so each step is the least-norm solution of the
    linearisation, which keeps the iterate close to the seed.
    """
    coords = np.array(coords, dtype=complex)
    d = len(coords)
    res = system.residual(coords)
    norm = float(np.max(np.abs(res)))
    history = [norm]
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise NewtonFailure(f"fibre Newton stalled at residual {norm:.3g} after {it} steps")
        if jacobian == "analytic":
            res, jac = system.residual_and_jacobian(coords)
            step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        else:
            jac = system.fd_jacobian(coords)
            rhs = -np.concatenate([res.real, res.imag])
            sol = np.linalg.lstsq(jac, rhs, rcond=None)[0]
            step = sol[:d] + 1j * sol[d:]
        t = 1.0
        while True:
            trial = coords + t * step
            trial_res = system.residual(trial)
            trial_norm = float(np.max(np.abs(trial_res)))
            if trial_norm < norm or t < 1e-4:
                break
            t *= 0.5
        coords, res, norm = trial, trial_res, trial_norm
        it += 1
        history.append(norm)
        if not np.isfinite(norm):
            raise NewtonFailure("fibre Newton diverged")
    return coords, it, norm


def fibre_solve(slice_: SlodowySlice, target: PointConfig, k: int, n: int,
                seed_coords: Sequence[complex] | None = None, jacobian: str = "fd",
                tol: float = FIBRE_TOL, max_iter: int = 100, return_coords: bool = False):
    """Point of the slice whose spectrum is the stratum spectrum of ``target``.

    Returns the matrix, or ``(matrix, coords)`` with ``return_coords``.
    """
    if not isinstance(target, PointConfig):
        target = PointConfig(target)
    if target.k != k or slice_.n != k * n:
        raise DimensionMismatch("slice dimension must be k*N with k target points")
    if seed_coords is None:
        seed_coords = slice_project(slice_, d_config(target.points, n))
    seed = np.asarray(seed_coords, dtype=complex)
    if seed.shape != (slice_.dim_slice,):
        raise DimensionMismatch("seed has the wrong number of slice coordinates")
    system = FibreSystem(slice_, target.points, n)
    coords, _, _ = newton_to_fibre(system, seed, jacobian=jacobian, tol=tol, max_iter=max_iter)
    y = slice_embed(slice_, coords)
    chi_tilde(y, k, n, reference=target.points)
    return (y, coords) if return_coords else y
