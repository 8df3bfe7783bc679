"""Finite-dimensional Lie theory of sl(N, C).

Partitions label nilpotent orbits through the Jordan type.  This module builds
the Jordan normal forms, completes a nilpotent element to an sl2-triple,
constructs the Slodowy slice ``e + ker ad_f`` with a Frobenius-orthonormal
basis and recovers the Jordan type of an arbitrary nilpotent matrix from its
kernel filtration.

Matrices are plain complex ``numpy`` arrays.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from itertools import accumulate, zip_longest
from typing import Iterator, Sequence

import numpy as np

from .errors import MismatchedN, NotNilpotent, ZeroNilpotent

RANK_RTOL = 1e-10
NILP_TOL = 1e-8


@dataclass(frozen=True)
class Partition:
    """Integer partition stored with weakly decreasing parts."""

    parts: tuple[int, ...]

    def __init__(self, parts: Sequence[int]):
        parts = tuple(sorted((int(p) for p in parts), reverse=True))
        if not parts or parts[-1] < 1:
            raise ValueError(f"partition parts must be positive integers: {parts}")
        object.__setattr__(self, "parts", parts)

    @property
    def n(self) -> int:
        return sum(self.parts)

    def __len__(self) -> int:
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)

    def __add__(self, other: "Partition") -> "Partition":
        """Concatenation followed by re-sorting."""
        return Partition(self.parts + tuple(other.parts))

    def multiplicities(self) -> list[tuple[int, int]]:
        """Pairs ``(part, multiplicity)`` in decreasing order of part."""
        counts = Counter(self.parts)
        return sorted(counts.items(), reverse=True)

    def conjugate(self) -> "Partition":
        return Partition([sum(1 for p in self.parts if p > i) for i in range(self.parts[0])])

    def __str__(self) -> str:
        return "[" + ",".join(map(str, self.parts)) + "]"


def partitions(n: int, max_part: int | None = None) -> Iterator[Partition]:
    """All partitions of ``n`` in reverse lexicographic order."""
    if max_part is None:
        max_part = n

    def rec(rest: int, cap: int) -> Iterator[tuple[int, ...]]:
        if rest == 0:
            yield ()
            return
        for first in range(min(rest, cap), 0, -1):
            for tail in rec(rest - first, first):
                yield (first,) + tail

    for parts in rec(n, max_part):
        yield Partition(parts)


def dominance_leq(pi: Partition, rho: Partition) -> bool:
    """True iff every partial sum of ``pi`` is bounded by that of ``rho``."""
    if pi.n != rho.n:
        raise MismatchedN(f"partitions of {pi.n} and {rho.n} are not comparable")
    pairs = zip_longest(accumulate(pi.parts), accumulate(rho.parts), fillvalue=pi.n)
    return all(a <= b for a, b in pairs)


def weight_to_partition(lam: Sequence[int]) -> Partition:
    """Jordan type attached to a dominant weight of length ``N - 1``.

    Maximal runs of zeros are counted, including the empty runs at either
    end and between consecutive nonzero entries; each run length plus one is
    a part.
    """
    lam = [int(v) for v in lam]
    if any(v < 0 for v in lam):
        raise ValueError(f"weight entries must be non-negative: {lam}")
    runs = [0]
    for v in lam:
        if v == 0:
            runs[-1] += 1
        else:
            runs.append(0)
    return Partition([r + 1 for r in runs])


def jordan_nilpotent(pi: Partition) -> np.ndarray:
    """Block-diagonal nilpotent with one Jordan block per part."""
    n = pi.n
    e = np.zeros((n, n), dtype=complex)
    start = 0
    for m in pi.parts:
        for i in range(m - 1):
            e[start + i, start + i + 1] = 1.0
        start += m
    return e


@dataclass(frozen=True)
class ChevalleyBasis:
    rank: int
    cartan: list[np.ndarray]
    raising: list[np.ndarray]
    lowering: list[np.ndarray]
    cartan_matrix: np.ndarray


def chevalley_basis(n: int) -> ChevalleyBasis:
    """Standard matrix realisation: ``E_i^+`` is the unit at ``(i, i+1)``."""
    def unit(i, j):
        m = np.zeros((n, n), dtype=complex)
        m[i, j] = 1.0
        return m

    raising = [unit(i, i + 1) for i in range(n - 1)]
    lowering = [unit(i + 1, i) for i in range(n - 1)]
    cartan = [unit(i, i) - unit(i + 1, i + 1) for i in range(n - 1)]
    a = 2 * np.eye(n - 1, dtype=int) - np.eye(n - 1, k=1, dtype=int) - np.eye(n - 1, k=-1, dtype=int)
    return ChevalleyBasis(n - 1, cartan, raising, lowering, a)


def bracket(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x @ y - y @ x


def ad_matrix(x: np.ndarray) -> np.ndarray:
    """Matrix of ``ad_x`` acting on row-major vectorised ``n x n`` matrices."""
    n = x.shape[0]
    eye = np.eye(n)
    return np.kron(x, eye) - np.kron(eye, x.T)


@dataclass(frozen=True)
class Sl2Triple:
    e: np.ndarray
    h: np.ndarray
    f: np.ndarray

    def defects(self) -> tuple[float, float, float]:
        """Frobenius norms of the three bracket defects."""
        e, h, f = self.e, self.h, self.f
        return (
            float(np.linalg.norm(bracket(h, e) - 2 * e)),
            float(np.linalg.norm(bracket(e, f) - h)),
            float(np.linalg.norm(bracket(h, f) + 2 * f)),
        )


@dataclass(frozen=True)
class SlodowySlice:
    """Affine space ``e + span(kernel_basis)`` transverse to the orbit of ``e``."""

    triple: Sl2Triple
    kernel_basis: np.ndarray  # shape (d, n, n), Frobenius orthonormal
    partition: Partition | None = field(default=None, compare=False)

    @property
    def dim_slice(self) -> int:
        return self.kernel_basis.shape[0]

    @property
    def n(self) -> int:
        return self.triple.e.shape[0]

    @property
    def basepoint(self) -> np.ndarray:
        return self.triple.e


def is_nilpotent(x: np.ndarray, tol: float = NILP_TOL) -> bool:
    x = np.asarray(x, dtype=complex)
    scale = np.linalg.norm(x)
    if scale == 0.0:
        return True
    return bool(np.max(np.abs(np.linalg.eigvals(x))) < tol * scale)


def _null_space(a: np.ndarray, atol: float) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical null space of ``a``."""
    _, s, vh = np.linalg.svd(a)
    rank = int(np.sum(s > atol))
    return vh[rank:].conj().T


def kernel_dimensions(x: np.ndarray, rtol: float = RANK_RTOL) -> list[int]:
    """Dimensions of ``ker x, ker x^2, ...`` until the whole space is reached.

    The iterated kernels are computed as ``ker(P_j x)`` with ``P_j`` the
    projector onto the orthogonal complement of the previous kernel, so only
    ``x`` itself is ever decomposed and no matrix powers are formed.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    atol = rtol * max(np.linalg.norm(x, 2), np.finfo(float).tiny)
    basis = np.zeros((n, 0), dtype=complex)
    dims = []
    while basis.shape[1] < n:
        proj = np.eye(n) - basis @ basis.conj().T
        basis = _null_space(proj @ x, atol)
        if dims and basis.shape[1] <= dims[-1]:
            raise NotNilpotent("kernel filtration stalls before exhausting the space")
        dims.append(basis.shape[1])
        if len(dims) > n:
            raise NotNilpotent("kernel filtration did not terminate")
    return dims


def orbit_partition(x: np.ndarray) -> Partition:
    """Jordan type of a nilpotent matrix from its rank sequence."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    if np.linalg.norm(x) == 0.0:
        return Partition([1] * n)
    dims = [0] + kernel_dimensions(x)
    # blocks of size >= k
    at_least = [dims[k] - dims[k - 1] for k in range(1, len(dims))]
    return Partition(at_least).conjugate()


def _jordan_triple(pi: Partition) -> Sl2Triple:
    n = pi.n
    e = jordan_nilpotent(pi)
    h = np.zeros((n, n), dtype=complex)
    f = np.zeros((n, n), dtype=complex)
    start = 0
    for m in pi.parts:
        for i in range(m):
            h[start + i, start + i] = m - 1 - 2 * i
        for i in range(1, m):
            f[start + i, start + i - 1] = i * (m - i)
        start += m
    return Sl2Triple(e, h, f)


def sl2_complete(e: np.ndarray) -> Sl2Triple:
    """Complete a nonzero nilpotent ``e`` to an sl2-triple ``(e, h, f)``.

    Jordan normal forms use the integral per-block formula.  Any other
    nilpotent is completed by linear algebra in the adjoint representation:
    ``h = [e, z]`` with ``ad_e^2 z = -2e``, then ``f`` is the unique solution
    of ``[e, f] = h`` inside the ``-2`` eigenspace of ``ad_h``.
    """
    e = np.asarray(e, dtype=complex)
    scale = np.linalg.norm(e)
    if scale < 1e-14:
        raise ZeroNilpotent("the zero matrix has no sl2-completion")
    # kernel filtration rather than eigenvalues: a conjugated Jordan block of
    # size m has eigenvalues of order eps**(1/m), far above any fixed threshold
    pi = orbit_partition(e)
    normal = _jordan_triple(pi)
    if np.allclose(e, normal.e, rtol=0, atol=1e-14):
        return Sl2Triple(e.copy(), normal.h, normal.f)

    n = e.shape[0]
    ad_e = ad_matrix(e)
    z = np.linalg.lstsq(ad_e @ ad_e, -2 * e.reshape(-1), rcond=None)[0]
    h = (ad_e @ z).reshape(n, n)
    ad_h = ad_matrix(h)
    system = np.vstack([ad_e, ad_h + 2 * np.eye(n * n)])
    rhs = np.concatenate([h.reshape(-1), np.zeros(n * n)])
    f = np.linalg.lstsq(system, rhs, rcond=None)[0].reshape(n, n)
    triple = Sl2Triple(e.copy(), h, f)
    if max(triple.defects()) > 1e-8 * max(1.0, scale) ** 2:
        raise NotNilpotent("sl2-completion failed; input is not numerically nilpotent")
    return triple


def traceless_basis(n: int) -> np.ndarray:
    """Frobenius-orthonormal basis of sl(n): off-diagonal units then Cartan."""
    out = []
    for i in range(n):
        for j in range(n):
            if i != j:
                m = np.zeros((n, n), dtype=complex)
                m[i, j] = 1.0
                out.append(m)
    for k in range(1, n):
        # Gram-Schmidt of e_11 - e_kk etc. in closed form
        d = np.zeros(n)
        d[:k] = 1.0
        d[k] = -k
        out.append(np.diag(d / np.linalg.norm(d)).astype(complex))
    return np.array(out).reshape(-1, n, n)


def slodowy_slice(e: np.ndarray) -> SlodowySlice:
    """Slice ``e + ker ad_f`` with an orthonormal traceless kernel basis."""
    e = np.asarray(e, dtype=complex)
    n = e.shape[0]
    if np.linalg.norm(e) < 1e-14:
        zero = np.zeros((n, n), dtype=complex)
        return SlodowySlice(Sl2Triple(zero, zero, zero), traceless_basis(n), Partition([1] * n))
    triple = sl2_complete(e)
    tb = traceless_basis(n)
    flat = tb.reshape(len(tb), -1)
    # ad_f restricted to traceless matrices, in the orthonormal basis tb
    image = np.array([bracket(triple.f, b).reshape(-1) for b in tb]).T
    scale = max(np.linalg.norm(image, 2), 1.0)
    null = _null_space(image, RANK_RTOL * scale)
    if np.allclose(triple.f.imag, 0) and np.allclose(e.imag, 0):
        null = _real_span(null)
    basis = (flat.T @ null).T.reshape(-1, n, n)
    return SlodowySlice(triple, basis, orbit_partition(e))


def _real_span(v: np.ndarray) -> np.ndarray:
    """Orthonormal real basis of a subspace known to be defined over R."""
    stacked = np.hstack([v.real, v.imag])
    u, s, _ = np.linalg.svd(stacked, full_matrices=False)
    return u[:, : v.shape[1]].astype(complex)


def centraliser_dimension(e: np.ndarray) -> int:
    """Nullity of ``ad_e`` on traceless matrices."""
    e = np.asarray(e, dtype=complex)
    n = e.shape[0]
    tb = traceless_basis(n)
    image = np.array([bracket(e, b).reshape(-1) for b in tb]).T
    s = np.linalg.svd(image, compute_uv=False)
    scale = max(s.max(initial=0.0), 1.0)
    return int(len(tb) - np.sum(s > RANK_RTOL * scale))
