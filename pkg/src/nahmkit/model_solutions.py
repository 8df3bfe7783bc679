"""Closed-form SU(2) model solutions near the boundary of the half-space.

The Nahm pole ``psi = -log y`` and its charge-``lambda`` knot generalisation
solve the reduced moment-map equation

    (d_r^2 + r^-1 d_r + d_y^2) psi = kappa r^(2 lambda) exp(2 psi)

with ``kappa = 1``; the left side is the full Laplacian of the axially
symmetric profile.  Points are given in hemispherical coordinates
``(R, alpha, theta)`` with ``y = R cos(alpha)`` and ``r = R sin(alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from fractions import Fraction

import numpy as np

from .errors import InvalidWeight, OutsideDomain
from .grids import GridField, _flux_factor


class DomainTouchesSingularity(OutsideDomain):
    """The sampled domain reaches ``y = 0`` or the knot point."""


@dataclass(frozen=True)
class SphericalPoint:
    R: float
    alpha: float
    theta: float = 0.0

    def __post_init__(self):
        if self.R < 0 or not 0.0 <= self.alpha <= np.pi / 2 + 1e-15:
            raise OutsideDomain("need R >= 0 and 0 <= alpha <= pi/2")

    @classmethod
    def from_cylindrical(cls, r: float, y: float, theta: float = 0.0) -> "SphericalPoint":
        return cls(float(np.hypot(r, y)), float(np.arctan2(r, y)), theta)

    @property
    def r(self) -> float:
        return self.R * np.sin(self.alpha)

    @property
    def y(self) -> float:
        return self.R * np.cos(self.alpha)

    @property
    def s(self) -> float:
        return np.cos(self.alpha)


@dataclass(frozen=True)
class ModelParams:
    """SU(2) weight ``lam`` (a non-negative half-integer) and coupling ``kappa``."""

    lam: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        twice = Fraction(self.lam).limit_denominator(1000) * 2
        if self.lam < 0 or twice.denominator != 1 or abs(float(twice) - 2 * self.lam) > 1e-12:
            raise InvalidWeight(f"weight must be a non-negative half-integer, got {self.lam}")


def s_lambda(s, lam: float):
    """``((1+s)^(lam+1) - (1-s)^(lam+1)) / (2s)`` with value ``lam+1`` at 0."""
    s = np.asarray(s, dtype=float)
    a = lam + 1.0
    small = np.abs(s) < 1e-4
    safe = np.where(small, 1.0, s)
    direct = ((1 + safe) ** a - (1 - safe) ** a) / (2 * safe)
    # odd Taylor terms: a + a(a-1)(a-2)/6 s^2 + ...
    series = a + a * (a - 1) * (a - 2) / 6 * s**2 + a * (a - 1) * (a - 2) * (a - 3) * (a - 4) / 120 * s**4
    out = np.where(small, series, direct)
    return out if out.ndim else float(out)


def psi_from_cylindrical(r, y, lam: float):
    """Closed form ``log((lam+1) / (R^(lam+1) s s_lam(s)))`` with ``s = y / R``."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise OutsideDomain("closed form is singular on y = 0")
    big_r = np.hypot(r, y)
    s = y / big_r
    return np.log((lam + 1) / (big_r ** (lam + 1) * s * s_lambda(s, lam)))


def psi_knot_model(p: SphericalPoint, params: ModelParams) -> float:
    if p.R == 0 or p.s <= 1e-15:
        raise OutsideDomain("closed form is singular at the knot and on y = 0")
    lam = params.lam
    return float(np.log((lam + 1) / (p.R ** (lam + 1) * p.s * s_lambda(p.s, lam))))


def monopole_fields(p: SphericalPoint, params: ModelParams) -> tuple[float, float, complex]:
    """Coefficients of ``H`` in ``A_theta``, ``phi_1`` and of ``E`` in ``phi``.

    These are the displayed model formulas.  Note that the ``E`` coefficient
    equals one half of ``exp(psi) r^lam e^{i lam theta}``, the value obtained
    by acting with ``exp(psi H)`` (``[H, E] = E``) on ``z^lam E``; see
    :func:`gauge_higgs_magnitude`.
    """
    if p.R == 0:
        raise OutsideDomain("fields are singular at the knot")
    lam = params.lam
    c, sn = np.cos(p.alpha), np.sin(p.alpha)
    plus, minus = (1 + c) ** (lam + 1), (1 - c) ** (lam + 1)
    denom = plus - minus
    a_theta = -(lam + 1) * c**2 * ((1 + c) ** lam - (1 - c) ** lam) / denom
    phi1 = -(lam + 1) / p.R * (plus + minus) / denom
    varphi = (lam + 1) / p.R * sn**lam * np.exp(1j * lam * p.theta) / denom
    return float(a_theta), float(phi1), complex(varphi)


def gauge_higgs_magnitude(p: SphericalPoint, params: ModelParams) -> float:
    """``|exp(psi) r^lam|``: modulus of the gauge-transformed Higgs field."""
    return float(np.exp(psi_knot_model(p, params)) * p.r ** params.lam)


def calibrate_kappa() -> float:
    """Coupling for which ``-log y`` solves ``psi'' = kappa exp(2 psi)``."""
    import sympy as sy

    y, kappa = sy.symbols("y kappa", positive=True)
    psi = -sy.log(y)
    sol = sy.solve(sy.Eq(sy.diff(psi, y, 2), kappa * sy.exp(2 * psi)), kappa)
    return float(sol[0])


def calibrate_laplacian_prefactor(lam: int = 1) -> float:
    """Prefactor ``c`` such that ``c (d_r^2 + d_r / r) psi + d_y^2 psi = r^(2 lam) exp(2 psi)``.

    Solved exactly for the charge-``lam`` closed form at a rational point
    with ``kappa`` from :func:`calibrate_kappa`.
    """
    import sympy as sy

    r, y, c = sy.symbols("r y c", positive=True)
    big_r = sy.sqrt(r**2 + y**2)
    s = y / big_r
    s_lam = ((1 + s) ** (lam + 1) - (1 - s) ** (lam + 1)) / (2 * s)
    psi = sy.log((lam + 1) / (big_r ** (lam + 1) * s * s_lam))
    kappa = calibrate_kappa()
    radial = sy.diff(psi, r, 2) + sy.diff(psi, r) / r
    eq = c * radial + sy.diff(psi, y, 2) - sy.nsimplify(kappa) * r ** (2 * lam) * sy.exp(2 * psi)
    point = {r: sy.Rational(3, 5), y: sy.Rational(2, 7)}
    sol = sy.solve(sy.simplify(eq.subs(point)), c)
    return float(sol[0])


def ebe_residual(params: ModelParams, grid: GridField) -> GridField:
    """Stencil residual of the closed form on an ``(r, y)`` grid.

    The profile is differenced as a function on ``(x2, x3, y)``: the
    ``x2, x3`` neighbours at spacing ``h`` (the ``r`` spacing) are evaluated
    off-grid through the axial symmetry, avoiding the ``1/r`` term.  The
    ``y`` direction uses the grid's own ``y`` stencil.  Boundary nodes of
    the ``y`` axis carry zero residual.
    """
    if grid.names != ("r", "y"):
        raise OutsideDomain("residual grid must have axes (r, y)")
    r, y = np.meshgrid(*grid.axes, indexing="ij")
    if np.any(y <= 0):
        raise DomainTouchesSingularity("grid touches y = 0")
    lam = params.lam
    psi = lambda rr, yy: psi_from_cylindrical(rr, yy, lam)
    h = grid.spacing(0)
    centre = psi(r, y)
    lateral = (psi(r + h, y) + psi(np.abs(r - h), y) + 2 * psi(np.hypot(r, h), y) - 4 * centre) / h**2

    res = np.zeros(grid.shape)
    inner = (slice(None), slice(1, -1))
    if grid.kinds[1] == "log":
        u = np.log(grid.axes[1])
        du = u[1] - u[0]
        c = _flux_factor(grid, 1)
        up = c * np.exp(-(u[1:-1] + du / 2)) * (centre[:, 2:] - centre[:, 1:-1])
        down = c * np.exp(-(u[1:-1] - du / 2)) * (centre[:, 1:-1] - centre[:, :-2])
        vertical = (up - down) / (du**2 * np.exp(u[1:-1]))
    else:
        dy = grid.spacing(1)
        vertical = (centre[:, 2:] - 2 * centre[:, 1:-1] + centre[:, :-2]) / dy**2
    nonlin = params.kappa * r[inner] ** (2 * lam) * np.exp(2 * centre[inner])
    res[inner] = lateral[inner] + vertical - nonlin
    return grid.with_values(res)


def window_grid(n: int, lo: float = 0.25, hi: float = 1.0) -> GridField:
    """``n x n`` grid on ``[lo, hi]^2``, uniform in ``r`` and geometric in ``y``."""
    return GridField((np.linspace(lo, hi, n), np.geomspace(lo, hi, n)), np.zeros((n, n)),
                     ("r", "y"), ("uniform", "log"))


def residual_convergence(params: ModelParams, sizes: Sequence[int],
                         window: tuple[float, float] = (0.25, 1.0)) -> tuple[list[float], list[float]]:
    """Sup-norm stencil residuals on refined window grids and successive ratios."""
    sups = [ebe_residual(params, window_grid(n, *window)).sup() for n in sizes]
    ratios = [a / b for a, b in zip(sups[:-1], sups[1:])]
    return sups, ratios
