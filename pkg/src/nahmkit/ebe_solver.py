"""Newton solver for the reduced moment-map equation and the adiabatic expansion.

``solve_ebe`` finds ``psi`` with ``Lap psi = kappa r^(2 lam) exp(2 psi)`` on a
truncated grid with Dirichlet data.  For a knot moving along ``z0(t)`` the
comoving field ``psi(t, zeta, y)`` with ``zeta = z - q z0(t)`` is expanded as
``sum q^n psi_n``; each correction solves a linear problem ``L psi_n = -K_n``
with a source built from lower orders.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import factorial
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ConfigError, LengthMismatch, MotionNotPeriodic, NegativeOrder,
                     NonConvergence, SingularOperator)
from .grids import (GridField, first_derivative, laplacian, node_weights,
                    second_derivative)
from .lie_core import partitions
from .model_solutions import ModelParams, psi_from_cylindrical

PDE_TOL = 1e-9


class NonmonotoneResidual(UserWarning):
    pass


def knot_weight(grid: GridField, params: ModelParams) -> np.ndarray:
    """``kappa r^(2 lam)`` on the grid (``r = |zeta|`` in comoving frames)."""
    phys = grid.physical()
    if "r" not in phys:
        if params.lam != 0:
            raise ConfigError("a charged knot needs a lateral coordinate")
        return np.full(grid.shape, params.kappa)
    return params.kappa * phys["r"] ** (2 * params.lam)


def model_field(grid: GridField, params: ModelParams) -> GridField:
    """Closed-form profile sampled on every node of ``grid``."""
    phys = grid.physical()
    r = phys.get("r", np.zeros(grid.shape))
    return grid.with_values(psi_from_cylindrical(r, phys["y"], params.lam))


def nahm_pole_field(grid: GridField) -> GridField:
    return grid.with_values(-np.log(grid.physical()["y"]))


@dataclass
class _System:
    grid: GridField
    params: ModelParams

    def __post_init__(self):
        self.mask = self.grid.interior_mask().ravel()
        self.inner = np.flatnonzero(self.mask)
        lap = laplacian(self.grid)
        self.a_ii = lap[self.inner][:, self.inner].tocsc()
        self.a_ib = lap[self.inner][:, ~self.mask]
        self.weight = knot_weight(self.grid, self.params).ravel()[self.inner]
        self.scale = np.abs(self.a_ii.diagonal())

    def residual(self, u: np.ndarray, boundary: np.ndarray) -> np.ndarray:
        return self.a_ii @ u + self.a_ib @ boundary - self.weight * np.exp(2 * u)

    def jacobian(self, u: np.ndarray) -> sp.csc_matrix:
        return (self.a_ii - sp.diags(2 * self.weight * np.exp(2 * u))).tocsc()


def solve_ebe(params: ModelParams, boundary: GridField, initial: GridField | None = None,
              tol: float = PDE_TOL, max_iter: int = 50, norm: str = "scaled") -> GridField:
    """Newton iteration with exact sparse Jacobian and backtracking.

    ``boundary`` supplies Dirichlet values on the boundary nodes (its
    interior values are ignored).  Convergence is tested on the residual
    divided by the diagonal of the discrete Laplacian (``norm='scaled'``),
    which is meaningful on grids whose stencil coefficients span many
    orders of magnitude, or on the raw residual (``norm='absolute'``).
    The result carries ``iterations``, ``history`` (convergence measure),
    ``merit`` (scaled 2-norm, decreasing by the line search) and
    ``residual`` in ``meta``.
    """
    system = _System(boundary, params)
    full = boundary.values.ravel().copy()
    bvals = full[~system.mask]
    start = (initial if initial is not None else nahm_pole_field(boundary)).values.ravel()
    u = start[system.inner].copy()

    measure = (lambda f: np.max(np.abs(f / system.scale))) if norm == "scaled" \
        else (lambda f: np.max(np.abs(f)))
    if norm not in ("scaled", "absolute"):
        raise ConfigError(f"unknown residual norm {norm!r}")
    res = system.residual(u, bvals)
    history = [measure(res)]
    merits = [float(np.linalg.norm(res / system.scale))]
    backtracks = 0
    it = 0
    while history[-1] >= tol:
        if it >= max_iter:
            raise NonConvergence(f"Newton stopped at residual {history[-1]:.3g} after {it} steps")
        try:
            step = spla.spsolve(system.jacobian(u), -res)
        except RuntimeError as exc:
            raise SingularOperator(str(exc)) from exc
        if not np.all(np.isfinite(step)):
            raise SingularOperator("Newton step is not finite")
        merit = np.linalg.norm(res / system.scale)
        t = 1.0
        while True:
            trial = u + t * step
            trial_res = system.residual(trial, bvals)
            if np.all(np.isfinite(trial_res)) and \
                    np.linalg.norm(trial_res / system.scale) <= (1 - 1e-4 * t) * merit:
                break
            t *= 0.5
            backtracks += 1
            if t < 1e-10:
                raise NonConvergence("line search failed to reduce the residual")
        u, res = trial, trial_res
        it += 1
        history.append(measure(res))
        merits.append(float(np.linalg.norm(res / system.scale)))
    if backtracks > 20:
        warnings.warn(f"line search backtracked {backtracks} times", NonmonotoneResidual)
    full[system.inner] = u
    out = boundary.with_values(full.reshape(boundary.shape))
    out.meta.update(iterations=it, history=history, merit=merits, residual=history[-1],
                    absolute_residual=float(np.max(np.abs(res))) if res.size else 0.0)
    return out


def pde_residual(psi: GridField, params: ModelParams) -> GridField:
    """``Lap psi - kappa r^(2 lam) exp(2 psi)`` at interior nodes, zero elsewhere."""
    lap = laplacian(psi)
    vals = lap @ psi.values.ravel() - knot_weight(psi, params).ravel() * np.exp(2 * psi.values.ravel())
    vals[~psi.interior_mask().ravel()] = 0.0
    return psi.with_values(vals.reshape(psi.shape))


# moving strands ------------------------------------------------------------

@dataclass(frozen=True)
class StrandMotion:
    """Samples of ``z0``, its velocity and acceleration at the grid times."""

    t: np.ndarray
    z0: np.ndarray
    dz0: np.ndarray
    ddz0: np.ndarray
    periodic: bool = True
    period: float = 2 * np.pi

    @classmethod
    def from_function(cls, t, z, dz, ddz, periodic=True, period=2 * np.pi) -> "StrandMotion":
        t = np.asarray(t, dtype=float)
        return cls(t, np.asarray(z(t), complex), np.asarray(dz(t), complex),
                   np.asarray(ddz(t), complex), periodic, period)

    @classmethod
    def circular(cls, t, radius: float = 1.0) -> "StrandMotion":
        return cls.from_function(t, lambda s: radius * np.exp(1j * s),
                                 lambda s: 1j * radius * np.exp(1j * s),
                                 lambda s: -radius * np.exp(1j * s))

    @classmethod
    def uniform(cls, t, velocity: complex = 1.0) -> "StrandMotion":
        """Constant velocity; periodic in the comoving frame."""
        t = np.asarray(t, dtype=float)
        return cls(t, velocity * t + 0j, np.full(t.shape, complex(velocity)),
                   np.zeros(t.shape, complex))

    @classmethod
    def stationary(cls, t, z: complex = 0.0) -> "StrandMotion":
        t = np.asarray(t, dtype=float)
        return cls(t, np.full(t.shape, complex(z)), np.zeros(t.shape, complex),
                   np.zeros(t.shape, complex))

    def consistency_error(self) -> float:
        """Largest mismatch between central differences and derivative samples."""
        dt = self.t[1] - self.t[0]
        if self.periodic:
            dz = (np.roll(self.dz0, -1) - np.roll(self.dz0, 1)) / (2 * dt)
            # positions may wind (uniform motion), so difference velocities only
            if np.allclose(self.ddz0, 0) and np.allclose(self.dz0, self.dz0[0]):
                return float(np.max(np.abs(dz - self.ddz0)))
            z = (np.roll(self.z0, -1) - np.roll(self.z0, 1)) / (2 * dt)
            return float(max(np.max(np.abs(z - self.dz0)), np.max(np.abs(dz - self.ddz0))))
        z = np.gradient(self.z0, dt)[1:-1]
        dz = np.gradient(self.dz0, dt)[1:-1]
        return float(max(np.max(np.abs(z - self.dz0[1:-1])), np.max(np.abs(dz - self.ddz0[1:-1]))))


@dataclass(frozen=True)
class HomotopyConvention:
    """Numerical factors of the order-by-order equations.

    ``exp_scale`` is the factor ``c`` in the expansion of
    ``exp(c sum q^n psi_n)`` that feeds the source, ``linear_factor``
    multiplies ``r^(2 lam) exp(2 psi_0)`` in the linear operator and
    ``cross_factor`` multiplies the mixed term ``(zdot d_zeta + c.c.) d_t``.
    The exact linearisation of the comoving equation has all three equal
    to 2.  ``LITERAL`` takes all three equal to 1.
    """

    exp_scale: float = 2.0
    linear_factor: float = 2.0
    cross_factor: float = 2.0


EXACT = HomotopyConvention()
LITERAL = HomotopyConvention(1.0, 1.0, 1.0)


def partition_sum(n: int, lower: Sequence[np.ndarray], exp_scale: float = 2.0) -> np.ndarray:
    """``sum over partitions pi of n, pi != [n]`` of ``prod (c psi_{pi_i})^nu_i / nu_i!``.

    ``lower[m]`` is ``psi_m`` (``lower[0]`` is unused).
    """
    total = np.zeros_like(np.asarray(lower[1], dtype=float))
    for pi in partitions(n):
        if pi.parts == (n,):
            continue
        term = np.ones_like(total)
        for part, nu in pi.multiplicities():
            term = term * (exp_scale * lower[part]) ** nu / factorial(nu)
        total = total + term
    return total


@dataclass
class ComovingOperators:
    """Sparse difference operators on a ``(t, x2, x3, y)`` grid."""

    grid: GridField
    lap: sp.csr_matrix = field(init=False)
    dt: sp.csr_matrix = field(init=False)
    dxi: sp.csr_matrix = field(init=False)
    deta: sp.csr_matrix = field(init=False)
    dxixi: sp.csr_matrix = field(init=False)
    detaeta: sp.csr_matrix = field(init=False)
    dxieta: sp.csr_matrix = field(init=False)

    def __post_init__(self):
        g = self.grid
        if g.names != ("t", "x2", "x3", "y"):
            raise ConfigError("comoving problems live on (t, x2, x3, y) grids")
        self.lap = laplacian(g)
        self.dt = first_derivative(g, "t")
        self.dxi = first_derivative(g, "x2")
        self.deta = first_derivative(g, "x3")
        self.dxixi = second_derivative(g, "x2")
        self.detaeta = second_derivative(g, "x3")
        self.dxieta = (self.dxi @ self.deta).tocsr()
        mask = g.interior_mask().ravel()
        keep = sp.diags(mask.astype(float))
        self.dxieta = (keep @ self.dxieta).tocsr()
        self.mask = mask
        self._factors = {}

    def factorised_Lq(self, psi0: GridField, params: ModelParams,
                      convention: HomotopyConvention):
        """LU factors of ``L_q``, reused across orders for the same ``psi_0``."""
        key = (id(psi0), params, convention)
        if key not in self._factors:
            lq = assemble_Lq(psi0, params, convention).tocsc()
            try:
                self._factors[key] = (psi0, lq, spla.splu(lq))
            except RuntimeError as exc:
                raise SingularOperator(str(exc)) from exc
        return self._factors[key][1:]

    def _time_coeffs(self, samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        shape = self.grid.shape
        a = np.broadcast_to(samples.real[:, None, None, None], shape).ravel()
        b = np.broadcast_to(samples.imag[:, None, None, None], shape).ravel()
        return a, b

    def drift(self, samples: np.ndarray, f: np.ndarray) -> np.ndarray:
        """``(w d_zeta + conj) f = Re(w) f_xi + Im(w) f_eta`` for samples ``w(t)``."""
        a, b = self._time_coeffs(samples)
        return a * (self.dxi @ f) + b * (self.deta @ f)

    def drift_squared(self, samples: np.ndarray, f: np.ndarray) -> np.ndarray:
        a, b = self._time_coeffs(samples)
        return a * a * (self.dxixi @ f) + 2 * a * b * (self.dxieta @ f) + b * b * (self.detaeta @ f)


def _check_motion(grid: GridField, motion: StrandMotion):
    t = grid.axes[0]
    if motion.t.shape != t.shape or not np.allclose(motion.t, t):
        raise ConfigError("motion must be sampled on the grid times")
    if not motion.periodic:
        raise MotionNotPeriodic("comoving expansion requires a periodic time axis")


def assemble_Lq(psi0: GridField, params: ModelParams,
                convention: HomotopyConvention = EXACT) -> sp.csr_matrix:
    """Linear operator on interior nodes (rows and columns restricted)."""
    mask = psi0.interior_mask().ravel()
    inner = np.flatnonzero(mask)
    lap = laplacian(psi0)[inner][:, inner]
    pot = convention.linear_factor * knot_weight(psi0, params).ravel() * np.exp(2 * psi0.values.ravel())
    return (lap - sp.diags(pot[inner])).tocsr()


def assemble_K(n: int, lower: Sequence[GridField], motion: StrandMotion, params: ModelParams,
               convention: HomotopyConvention = EXACT,
               operators: ComovingOperators | None = None) -> GridField:
    """Source of order ``n`` from ``psi_0 .. psi_{n-1}``.

    Nonlinear terms use ``r = |zeta|``: in comoving coordinates the knot sits
    at the origin for every ``q``, so the source carries no explicit ``q``.
    """
    if n < 1:
        raise NegativeOrder("sources exist for orders n >= 1")
    if len(lower) != n:
        raise LengthMismatch(f"order {n} needs exactly {n} lower orders, got {len(lower)}")
    grid = lower[0]
    _check_motion(grid, motion)
    ops = operators or ComovingOperators(grid)
    flat = [f.values.ravel() for f in lower]
    prev = flat[n - 1]
    k = -ops.drift(motion.ddz0, prev) - convention.cross_factor * ops.drift(motion.dz0, ops.dt @ prev)
    if n >= 2:
        k = k + ops.drift_squared(motion.dz0, flat[n - 2])
    if n >= 2:
        weight = knot_weight(grid, params).ravel() * np.exp(2 * flat[0])
        k = k - weight * partition_sum(n, flat, convention.exp_scale)
    k[~ops.mask] = 0.0
    return grid.with_values(k.reshape(grid.shape))


def comoving_grid(n_t: int = 8, n_x: int = 13, n_y: int = 13, half_width: float = 2.0,
                  y_min: float = 0.05, y_max: float = 2.0) -> GridField:
    from .grids import halfspace_grid
    return halfspace_grid(n_x, n_y, half_width, y_min, y_max, n_t=n_t)


def solve_static_slice(grid: GridField, params: ModelParams, tol: float = PDE_TOL) -> GridField:
    """Comoving order zero: one 3D solve broadcast over the periodic time axis."""
    from .grids import GridField as _G
    space = _G(grid.axes[1:], np.zeros(grid.shape[1:]), grid.names[1:], grid.kinds[1:])
    psi = solve_ebe(params, model_field(space, params), initial=model_field(space, params), tol=tol)
    vals = np.broadcast_to(psi.values, grid.shape).copy()
    out = grid.with_values(vals)
    out.meta.update(psi.meta)
    return out


def solve_dkw_order(n: int, lower: Sequence[GridField], motion: StrandMotion,
                    params: ModelParams, boundary: GridField | None = None,
                    convention: HomotopyConvention = EXACT,
                    operators: ComovingOperators | None = None) -> GridField:
    """Order-``n`` correction; ``n = 0`` is the static solve on each slice.

    Corrections take the given boundary values (zero by default).
    """
    if n < 0:
        raise NegativeOrder("orders are non-negative")
    if n == 0:
        grid = boundary if boundary is not None else lower[0]
        return solve_static_slice(grid, params)
    psi0 = lower[0]
    ops = operators or ComovingOperators(psi0)
    src = assemble_K(n, lower, motion, params, convention, ops).values.ravel()
    mask = ops.mask
    inner = np.flatnonzero(mask)
    lq, lu = ops.factorised_Lq(psi0, params, convention)
    bvals = np.zeros(psi0.values.size) if boundary is None else boundary.values.ravel()
    lap = ops.lap
    rhs = -src[inner] - (lap[inner][:, ~mask] @ bvals[~mask])
    sol = lu.solve(rhs)
    full = bvals.copy()
    full[inner] = sol
    out = psi0.with_values(full.reshape(psi0.shape))
    out.meta["residual"] = float(np.max(np.abs(lq @ sol - rhs))) if sol.size else 0.0
    return out


def series_eval(q: float, orders: Sequence[GridField], motion: StrandMotion | None = None,
                params: ModelParams | None = None,
                operators: ComovingOperators | None = None) -> GridField:
    """Partial sum ``sum q^n psi_n``.

    When the motion and parameters are given, ``meta['residual']`` holds the
    sup-norm of the comoving nonlinear equation

        (d_t - q D)^2 psi + Lap_zeta psi + d_y^2 psi - kappa r^(2 lam) e^(2 psi),

    ``D = Re(zdot) d_xi + Im(zdot) d_eta``, at interior nodes.
    """
    if not orders:
        raise ConfigError("need at least one order")
    total = sum(q**n * f.values for n, f in enumerate(orders))
    out = orders[0].with_values(total)
    if motion is not None and params is not None:
        ops = operators or ComovingOperators(out)
        psi = total.ravel()
        res = (ops.lap @ psi
               - q * ops.drift(motion.ddz0, psi)
               - 2 * q * ops.drift(motion.dz0, ops.dt @ psi)
               + q * q * ops.drift_squared(motion.dz0, psi)
               - knot_weight(out, params).ravel() * np.exp(2 * psi))
        out.meta["residual"] = float(np.max(np.abs(res[ops.mask])))
    return out
