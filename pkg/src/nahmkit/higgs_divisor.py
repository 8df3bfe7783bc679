"""Effective divisors of polynomial Higgs fields on the complex line.

For a line spanned by ``v`` the sections ``f_i = v ^ phi v ^ ... ^ phi^i v``
vanish at finitely many points.  Their vanishing orders are computed exactly
from polynomial coefficients, and the weight at each point is recovered from
the second differences of the order sequence.

The Higgs field acts on ``v`` through its transpose, ``phi v := phi^T v``,
so that the raising operator ``E_i^+`` (unit at ``(i, i+1)``) sends ``e_i`` to
``e_{i+1}`` and ``v = e_1`` is cyclic for ``sum_i E_i^+``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, permutations
from math import comb
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ConfigError, DegreeMismatch, FactorisationUnstable
from .lie_core import chevalley_basis

INFINITE_ORDER = 10**9
COEFF_RTOL = 1e-10
ROOT_TOL = 1e-8


class IdenticallyZeroWedge(FactorisationUnstable):
    """The top wedge vanishes identically, so the line is not cyclic."""


def _trim(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    nz = np.flatnonzero(c != 0)
    return c[: nz[-1] + 1] if nz.size else np.zeros(1, dtype=complex)


@dataclass(frozen=True)
class PolyMatrix:
    """``N x N`` matrix of polynomials, ``coeffs[i, j, d]`` multiplies ``z^d``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 3 or c.shape[0] != c.shape[1]:
            raise DegreeMismatch("coefficients must have shape (N, N, degree + 1)")
        nz = np.flatnonzero(np.any(c != 0, axis=(0, 1)))
        deg = int(nz[-1]) if nz.size else 0
        object.__setattr__(self, "coeffs", c[:, :, : deg + 1])

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def max_degree(self) -> int:
        return self.coeffs.shape[2] - 1

    @classmethod
    def from_terms(cls, terms: Sequence[tuple[int, np.ndarray]]) -> "PolyMatrix":
        """Build ``sum_d z^d A_d`` from pairs ``(d, A_d)``."""
        n = np.asarray(terms[0][1]).shape[0]
        deg = max(d for d, _ in terms)
        c = np.zeros((n, n, deg + 1), dtype=complex)
        for d, a in terms:
            c[:, :, d] += np.asarray(a)
        return cls(c)

    def __call__(self, z: complex) -> np.ndarray:
        return np.einsum("ijd,d->ij", self.coeffs, complex(z) ** np.arange(self.max_degree + 1))

    def shifted(self, c: complex) -> "PolyMatrix":
        """Field ``z -> phi(z - c)``."""
        return PolyMatrix(np.apply_along_axis(lambda p: taylor_shift(p, -c), 2, self.coeffs))


def monopole_higgs(lam: Sequence[int]) -> PolyMatrix:
    """``sum_i z^(lam_i) E_i^+``, the model field of weight ``lam``."""
    basis = chevalley_basis(len(lam) + 1)
    return PolyMatrix.from_terms([(int(l), e) for l, e in zip(lam, basis.raising)])


def taylor_shift(c: Sequence[complex], p: complex) -> np.ndarray:
    """Coefficients of ``q(z + p)`` given those of ``q(z)``."""
    c = np.asarray(c, dtype=complex)
    deg = len(c) - 1
    out = np.zeros_like(c)
    powers = complex(p) ** np.arange(deg + 1)
    for k in range(deg + 1):
        out[k] = sum(comb(j, k) * powers[j - k] * c[j] for j in range(k, deg + 1))
    return out


def _poly_det(entries: list[list[np.ndarray]]) -> np.ndarray:
    """Leibniz expansion of a small polynomial determinant."""
    m = len(entries)
    total = np.zeros(1, dtype=complex)
    for perm in permutations(range(m)):
        sign = _perm_sign(perm)
        term = np.ones(1, dtype=complex)
        for row, col in enumerate(perm):
            term = P.polymul(term, entries[row][col])
        total = P.polyadd(total, sign * term)
    return _trim(total)


def _perm_sign(perm: Sequence[int]) -> int:
    sign, seen = 1, list(perm)
    for i in range(len(seen)):
        while seen[i] != i:
            j = seen[i]
            seen[i], seen[j] = seen[j], seen[i]
            sign = -sign
    return sign


def krylov_columns(phi: PolyMatrix, line: Sequence[complex], count: int) -> list[np.ndarray]:
    """Polynomial vectors ``v, phi v, ..., phi^(count-1) v``; shape ``(N, deg+1)``."""
    v = np.asarray(line, dtype=complex)
    cols = [v[:, None].copy()]
    act = phi.coeffs.transpose(1, 0, 2)  # transpose action
    for _ in range(count - 1):
        prev = cols[-1]
        nxt = np.zeros((phi.n, prev.shape[1] + phi.max_degree), dtype=complex)
        for i in range(phi.n):
            for j in range(phi.n):
                prod = P.polymul(act[i, j], prev[j])
                nxt[i, : len(prod)] += prod
        cols.append(nxt)
    return cols


def wedge_minors(phi: PolyMatrix, line: Sequence[complex], i: int) -> list[np.ndarray]:
    """All maximal minors of ``[v | phi v | ... | phi^i v]``."""
    cols = krylov_columns(phi, line, i + 1)
    out = []
    for rows in combinations(range(phi.n), i + 1):
        entries = [[cols[c][r] for c in range(i + 1)] for r in rows]
        out.append(_poly_det(entries))
    return out


def _order(poly: np.ndarray, p: complex, scale: float) -> int:
    """Vanishing order at ``p``, treating tiny coefficients as zero."""
    shifted = taylor_shift(poly, p)
    mag = np.abs(shifted)
    if mag.max(initial=0.0) <= COEFF_RTOL * scale:
        return INFINITE_ORDER
    return int(np.argmax(mag > COEFF_RTOL * scale))


def wedge_order(phi: PolyMatrix, line: Sequence[complex], i: int, p: complex) -> int:
    """Order of vanishing of ``f_i`` at ``p``; :data:`INFINITE_ORDER` if ``f_i = 0``."""
    if not 1 <= i <= phi.n - 1:
        raise DegreeMismatch(f"wedge index must lie in 1..{phi.n - 1}")
    minors = wedge_minors(phi, line, i)
    scale = max(_poly_scale(m, p) for m in minors)
    return min(_order(m, p, scale) for m in minors)


def _poly_scale(poly: np.ndarray, p: complex) -> float:
    r = max(1.0, abs(p))
    return float(max(np.abs(poly) * r ** np.arange(len(poly)))) or 1.0


@dataclass(frozen=True)
class DivisorData:
    points: list[tuple[complex, tuple[int, ...]]]

    @property
    def effective(self) -> bool:
        return all(v >= 0 for _, lam in self.points for v in lam)


def _cluster_roots(roots: np.ndarray, tol: float) -> list[np.ndarray]:
    groups: list[list[complex]] = []
    for r in roots:
        for g in groups:
            if min(abs(r - q) for q in g) < tol:
                g.append(r)
                break
        else:
            groups.append([r])
    merged = True
    while merged:
        merged = False
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                if min(abs(x - y) for x in groups[a] for y in groups[b]) < tol:
                    groups[a] += groups.pop(b)
                    merged = True
                    break
            if merged:
                break
    return [np.array(g) for g in groups]


def divisor_points(poly: np.ndarray) -> list[tuple[complex, int]]:
    """Distinct roots with multiplicity.

    Roots of multiplicity ``m`` split by about ``eps^(1/m)``.  Clustering
    radii are tried from coarse to fine and the first clustering in which
    every centroid vanishes to at least its cluster size is accepted;
    merging genuinely distinct roots fails that test at the centroid.
    """
    poly = _trim(poly)
    if len(poly) == 1:
        return []
    roots = np.roots(poly[::-1])
    scale = max(1.0, float(np.max(np.abs(roots))))
    for tol in scale * np.logspace(-1, np.log10(ROOT_TOL), 15):
        clusters = _cluster_roots(roots, tol)
        centres = [(complex(c.mean()), len(c)) for c in clusters]
        cscale = max(_poly_scale(poly, p) for p, _ in centres)
        if all(_order(poly, p, cscale) >= m for p, m in centres):
            return centres
    raise FactorisationUnstable("could not resolve root multiplicities of the top wedge")


def reconstruct_weight(orders: Sequence[int], rule: str = "second_difference") -> tuple[int, ...]:
    """Weight at a point from the orders ``(ord f_1, ..., ord f_{N-1})``.

    ``second_difference`` (default) gives ``o_i - 2 o_{i-1} + o_{i-2}`` with
    ``o_0 = o_{-1} = 0``; it inverts the orders of the model field
    ``sum z^(lam_i) E_i``, whose wedges vanish to order
    ``o_i = sum_{j <= i} (i + 1 - j) lam_j``.  The alternatives are kept for
    comparison: ``leading_difference`` gives ``(o_1, o_1 - o_2, ...)`` and
    ``first_difference`` gives ``(o_1, o_2 - o_1, ...)``.
    """
    o = [0, 0] + list(orders)
    m = len(orders)
    if rule == "second_difference":
        return tuple(o[i + 2] - 2 * o[i + 1] + o[i] for i in range(m))
    if rule == "first_difference":
        return tuple(o[i + 2] - o[i + 1] for i in range(m))
    if rule == "leading_difference":
        return (o[2],) + tuple(o[i + 1] - o[i + 2] for i in range(1, m))
    raise ConfigError(f"unknown weight rule {rule!r}")


def divisor_of(phi: PolyMatrix, line: Sequence[complex],
               rule: str = "second_difference") -> DivisorData:
    """Divisor of ``phi`` with respect to ``line``; see :func:`reconstruct_weight`."""
    n = phi.n
    top = wedge_minors(phi, line, n - 1)[0]
    if np.max(np.abs(top)) == 0.0 or _order(top, 0.0, _poly_scale(top, 0.0)) == INFINITE_ORDER:
        raise IdenticallyZeroWedge("top wedge vanishes identically; line is not cyclic")
    points = []
    for p, _ in divisor_points(top):
        if abs(p) < 1e-12:
            p = 0j
        orders = [wedge_order(phi, line, i, p) for i in range(1, n)]
        points.append((p, reconstruct_weight(orders, rule)))
    points.sort(key=lambda item: (item[0].real, item[0].imag))
    return DivisorData(points)
