"""Reference computations that share no code with the package.

Each oracle takes a different route to the quantity under test: exact
rational arithmetic, symbolic series, or a textbook formula evaluated
directly.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np
import sympy as sy


def exact_jordan_type(m: np.ndarray) -> list[int]:
    """Jordan type of an integer nilpotent matrix from exact ranks of powers."""
    a = sy.Matrix(np.asarray(m).real.round().astype(int).tolist())
    n = a.shape[0]
    ranks = [n]
    power = sy.eye(n)
    while ranks[-1] > 0:
        power = power * a
        ranks.append(power.rank())
        if len(ranks) > n + 2:
            raise ValueError("matrix is not nilpotent")
    # blocks of size >= j: r_{j-1} - r_j
    at_least = [ranks[j - 1] - ranks[j] for j in range(1, len(ranks))]
    parts = []
    for j, count in enumerate(at_least, 1):
        nxt = at_least[j] if j < len(at_least) else 0
        parts += [j] * (count - nxt)
    return sorted(parts, reverse=True)


def exact_charpoly_invariants(m: list[list[int]]) -> list[sy.Rational]:
    """``c_2..c_n`` with ``det(t - x) = sum (-1)^j c_j t^(n-j)`` in exact arithmetic."""
    t = sy.symbols("t")
    a = sy.Matrix(m)
    coeffs = sy.Poly((t * sy.eye(a.shape[0]) - a).det(), t).all_coeffs()
    return [(-1) ** j * coeffs[j] for j in range(2, len(coeffs))]


def block_sl2_triple(parts: list[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-block integral triple: ``h = diag(m-1, m-3, ...)``, ``f_{i+1,i} = i(m-i)``."""
    n = sum(parts)
    e, h, f = (np.zeros((n, n)) for _ in range(3))
    start = 0
    for m in parts:
        for i in range(m):
            h[start + i, start + i] = m - 1 - 2 * i
        for i in range(1, m):
            e[start + i - 1, start + i] = 1
            f[start + i, start + i - 1] = i * (m - i)
        start += m
    return e, h, f


@lru_cache(maxsize=None)
def _series_coefficient(n: int, scale: float):
    q = sy.symbols("q")
    a = sy.symbols(f"a1:{n + 1}")
    expr = sy.exp(sy.nsimplify(scale) * sum(q**m * a[m - 1] for m in range(1, n + 1)))
    coeff = sy.series(expr, q, 0, n + 1).removeO().coeff(q, n)
    coeff = sy.expand(coeff - sy.nsimplify(scale) * a[n - 1])
    return sy.lambdify(a, coeff, "numpy")


def brute_partition_sum(n: int, fields: list[np.ndarray], scale: float) -> np.ndarray:
    """Coefficient of ``q^n`` in ``exp(scale sum_m q^m psi_m)`` minus its linear term."""
    return np.asarray(_series_coefficient(n, scale)(*fields[1:n + 1]), dtype=float) * np.ones_like(fields[1])


def exact_wedge_orders(lam: list[int]) -> list[int]:
    """Vanishing orders at 0 of ``v ^ phi v ^ ... ^ phi^i v`` for ``phi = sum z^lam_i E_i``.

    Builds the Krylov matrix symbolically for the transpose action used by
    the package and expands every maximal minor.
    """
    z = sy.symbols("z")
    n = len(lam) + 1
    phi = sy.zeros(n, n)
    for i, l in enumerate(lam):
        phi[i, i + 1] = z**l
    act = phi.T
    v = sy.Matrix([1] + [0] * (n - 1))
    cols = [v]
    for _ in range(n - 1):
        cols.append(sy.expand(act * cols[-1]))
    orders = []
    from itertools import combinations
    for i in range(1, n):
        krylov = sy.Matrix.hstack(*cols[:i + 1])
        best = None
        for rows in combinations(range(n), i + 1):
            minor = sy.expand(krylov.extract(list(rows), list(range(i + 1))).det())
            if minor == 0:
                continue
            order = min(sy.Poly(minor, z).monoms())[0]
            best = order if best is None else min(best, order)
        orders.append(best)
    return orders


def winding(z1: np.ndarray, z2: np.ndarray) -> float:
    """Turns of ``z1 - z2`` from unwrapped arguments of samples."""
    ang = np.unwrap(np.angle(np.asarray(z1) - np.asarray(z2)))
    return float((ang[-1] - ang[0]) / (2 * np.pi))


def partitions_brute(n: int) -> set[tuple[int, ...]]:
    """All partitions of ``n`` by filtering weakly decreasing tuples."""
    out = set()

    def rec(prefix, rest):
        if rest == 0:
            out.add(tuple(prefix))
            return
        for p in range(1, rest + 1):
            if not prefix or p <= prefix[-1]:
                rec(prefix + [p], rest - p)

    rec([], n)
    return out


def multinomial_partition_sum(n: int, fields: list[np.ndarray], scale: float) -> np.ndarray:
    """Same coefficient by explicit Faa di Bruno sum over all compositions."""
    total = np.zeros_like(fields[1], dtype=float)
    for parts in partitions_brute(n):
        if parts == (n,):
            continue
        term = np.ones_like(total)
        for p in set(parts):
            nu = parts.count(p)
            term = term * (scale * fields[p]) ** nu / factorial(nu)
        total += term
    return total
