"""Braid words, strand trajectories and crossingless matchings.

A braid word on ``k`` strands is realised as a piecewise-analytic loop in
the configuration space of ``k`` points: each letter ``s_i^(+-1)`` rotates
the points in slots ``i`` and ``i+1`` by ``+-pi`` about their midpoint,
with a smoothstep time profile so that velocities vanish at letter
boundaries.  Matchings pair ``2k`` points by disjoint arcs; moving the two
ends of an arc towards its midpoint enters the lower strata of the
configuration space.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .adjoint_quotient import SEP_TOL, PointConfig
from .errors import (ArcsNotDisjoint, CollisionDetected, InvalidGenerator,
                     OddStrandCount, ParseError)

MERGE_TOL = 1e-6

Evaluator = Callable[[float], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class BraidWord:
    strands: int
    letters: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "letters", tuple((int(i), int(s)) for i, s in self.letters))
        if self.strands < 1:
            raise InvalidGenerator("a braid needs at least one strand")
        for i, s in self.letters:
            if not 1 <= i <= self.strands - 1 or s not in (1, -1):
                raise InvalidGenerator(f"letter s{i}^{s} is invalid on {self.strands} strands")

    @classmethod
    def parse(cls, text: str) -> "BraidWord":
        """Parse ``"k=3; s1 s2^-1 s1"``."""
        head, sep, body = text.partition(";")
        m = re.fullmatch(r"\s*k\s*=\s*(\d+)\s*", head)
        if not sep or not m:
            raise ParseError(f"expected 'k=<strands>; <letters>', got {text!r}")
        letters = []
        for tok in body.split():
            lm = re.fullmatch(r"s(\d+)(\^(-?1))?", tok)
            if not lm:
                raise ParseError(f"cannot parse braid letter {tok!r}")
            letters.append((int(lm.group(1)), int(lm.group(3) or 1)))
        return cls(int(m.group(1)), tuple(letters))

    def __str__(self) -> str:
        body = " ".join(f"s{i}" if s == 1 else f"s{i}^-1" for i, s in self.letters)
        return f"k={self.strands}; {body}".rstrip()

    def __mul__(self, other: "BraidWord") -> "BraidWord":
        if other.strands != self.strands:
            raise InvalidGenerator("cannot compose braids on different strand counts")
        return BraidWord(self.strands, self.letters + other.letters)

    def inverse(self) -> "BraidWord":
        return BraidWord(self.strands, tuple((i, -s) for i, s in reversed(self.letters)))

    def permutation(self) -> tuple[int, ...]:
        """``perm[slot]`` is the strand occupying ``slot`` at the end."""
        slots = list(range(self.strands))
        for i, _ in self.letters:
            slots[i - 1], slots[i] = slots[i], slots[i - 1]
        return tuple(slots)

    @property
    def is_pure(self) -> bool:
        return self.permutation() == tuple(range(self.strands))


def bipartite_extend(word: BraidWord) -> BraidWord:
    """``beta x id``: the same letters on ``2k`` strands."""
    return BraidWord(2 * word.strands, word.letters)


def _smoothstep(tau):
    return tau * tau * (3 - 2 * tau), 6 * tau * (1 - tau)


@dataclass(frozen=True)
class StrandPaths:
    """Sampled trajectories ``t in [0, 1] -> C^k`` with derivatives.

    ``evaluator`` (when present) returns exact positions and velocities; the
    samples are otherwise interpolated by cubic Hermite splines.
    """

    t: np.ndarray
    z: np.ndarray
    dz: np.ndarray
    evaluator: Evaluator | None = field(default=None, compare=False)
    sep_tol: float = SEP_TOL

    def __post_init__(self):
        z = np.asarray(self.z, dtype=complex)
        object.__setattr__(self, "z", z.reshape(len(self.t), -1))
        object.__setattr__(self, "dz", np.asarray(self.dz, dtype=complex).reshape(self.z.shape))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        if self.min_separation <= self.sep_tol:
            raise CollisionDetected(f"strands collide (separation {self.min_separation:.3g})")

    @property
    def k(self) -> int:
        return self.z.shape[1]

    @property
    def min_separation(self) -> float:
        if self.z.shape[1] < 2:
            return np.inf
        d = np.abs(self.z[:, :, None] - self.z[:, None, :])
        iu = np.triu_indices(self.z.shape[1], 1)
        return float(d[:, iu[0], iu[1]].min())

    @property
    def start(self) -> np.ndarray:
        return self.z[0]

    @property
    def end(self) -> np.ndarray:
        return self.z[-1]

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        if self.evaluator is not None:
            return self.evaluator(float(t))
        spline = self._spline()
        return spline(t), spline.derivative()(t)

    def _spline(self):
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = CubicHermiteSpline(self.t, self.z, self.dz, axis=0)
            object.__setattr__(self, "_cache", cache)
        return cache

    def reversed(self) -> "StrandPaths":
        ev = None
        if self.evaluator is not None:
            inner = self.evaluator

            def ev(t):
                z, dz = inner(1.0 - t)
                return z, -dz
        return StrandPaths(1.0 - self.t[::-1], self.z[::-1], -self.dz[::-1], ev, self.sep_tol)

    def then(self, other: "StrandPaths") -> "StrandPaths":
        """Concatenation, each half traversed at double speed."""
        if not np.allclose(self.end, other.start, atol=1e-12):
            raise CollisionDetected("paths do not connect")
        t = np.concatenate([self.t / 2, 0.5 + other.t[1:] / 2])
        z = np.concatenate([self.z, other.z[1:]])
        dz = np.concatenate([2 * self.dz, 2 * other.dz[1:]])
        ev = None
        if self.evaluator is not None and other.evaluator is not None:
            a, b = self.at, other.at

            def ev(s):
                if s <= 0.5:
                    z, dz = a(2 * s)
                else:
                    z, dz = b(2 * s - 1)
                return z, 2 * dz
        return StrandPaths(t, z, dz, ev, self.sep_tol)


def braid_to_paths(word: BraidWord, base: PointConfig | Sequence[complex],
                   steps_per_letter: int = 32) -> StrandPaths:
    """Half-twist realisation of ``word`` starting at ``base``.

    Slot ``j`` always refers to the base position ``base[j]``; the column
    ``a`` of the result follows strand ``a``.
    """
    pts = base.points if isinstance(base, PointConfig) else np.asarray(base, dtype=complex)
    k = len(pts)
    if k != word.strands:
        raise InvalidGenerator(f"base has {k} points but the braid has {word.strands} strands")
    letters = word.letters
    count = len(letters)
    # strand occupying each slot before each letter
    occupancy = [list(range(k))]
    for i, _ in letters:
        nxt = list(occupancy[-1])
        nxt[i - 1], nxt[i] = nxt[i], nxt[i - 1]
        occupancy.append(nxt)

    def positions(j: int) -> np.ndarray:
        z = np.empty(k, dtype=complex)
        for slot, strand in enumerate(occupancy[j]):
            z[strand] = pts[slot]
        return z

    def evaluate(t: float):
        if count == 0:
            return pts.copy(), np.zeros(k, dtype=complex)
        x = min(max(t, 0.0), 1.0) * count
        j = min(int(x), count - 1)
        tau = x - j
        i, sign = letters[j]
        z = positions(j)
        dz = np.zeros(k, dtype=complex)
        a, b = pts[i - 1], pts[i]
        mid = (a + b) / 2
        s, ds = _smoothstep(tau)
        rot = np.exp(1j * sign * np.pi * s)
        for slot, start in ((i - 1, a), (i, b)):
            strand = occupancy[j][slot]
            z[strand] = mid + (start - mid) * rot
            dz[strand] = (start - mid) * rot * 1j * sign * np.pi * ds * count
        return z, dz

    n = max(count, 1) * steps_per_letter + 1
    t = np.linspace(0.0, 1.0, n)
    samples = [evaluate(ti) for ti in t]
    z = np.array([s[0] for s in samples])
    dz = np.array([s[1] for s in samples])
    # letters end exactly on base slots
    z[-1] = positions(count)
    return StrandPaths(t, z, dz, evaluate)


def winding_number(paths: StrandPaths, a: int, b: int) -> float:
    """Total turning of ``z_a - z_b`` over the samples, in units of ``2 pi``."""
    d = paths.z[:, a] - paths.z[:, b]
    return float(np.sum(np.angle(d[1:] / d[:-1])) / (2 * np.pi))


# matchings -----------------------------------------------------------------

@dataclass(frozen=True)
class Arc:
    """Embedded arc ``delta: [0, 1] -> C`` joining configuration slots ``pair``."""

    pair: tuple[int, int]
    evaluate: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]

    def samples(self, n: int = 401) -> np.ndarray:
        return self.evaluate(np.linspace(0.0, 1.0, n))

    @property
    def endpoints(self) -> tuple[complex, complex]:
        ends = self.evaluate(np.array([0.0, 1.0]))
        return complex(ends[0]), complex(ends[1])

    @property
    def midpoint(self) -> complex:
        return complex(self.evaluate(np.array([0.5]))[0])


def semicircle(p: complex, q: complex, pair: tuple[int, int]) -> Arc:
    """Half circle from ``p`` to ``q`` on the left of the direction ``q - p``."""
    c = (p + q) / 2
    half = (q - p) / 2

    def ev(u):
        return c - half * np.exp(-1j * np.pi * np.asarray(u, dtype=float))

    def dev(u):
        return 1j * np.pi * half * np.exp(-1j * np.pi * np.asarray(u, dtype=float))

    return Arc(pair, ev, dev)


def _polylines_cross(a: np.ndarray, b: np.ndarray) -> bool:
    """Whether two sampled polylines have a properly crossing segment pair."""
    p, r = a[:-1, None], (a[1:] - a[:-1])[:, None]
    q, s = b[None, :-1], (b[1:] - b[:-1])[None, :]
    cross = lambda u, v: u.real * v.imag - u.imag * v.real
    denom = cross(r, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = cross(q - p, s) / denom
        u = cross(q - p, r) / denom
    hit = (denom != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    return bool(hit.any())


@dataclass(frozen=True)
class CrossinglessMatching:
    points: PointConfig
    arcs: tuple[Arc, ...]

    def __post_init__(self):
        n = self.points.k
        if n % 2:
            raise OddStrandCount("a matching needs an even number of points")
        used = sorted(i for arc in self.arcs for i in arc.pair)
        if used != list(range(n)):
            raise ArcsNotDisjoint("arcs must pair every point exactly once")
        for arc in self.arcs:
            p, q = arc.endpoints
            i, j = arc.pair
            if abs(p - self.points.points[i]) > 1e-12 or abs(q - self.points.points[j]) > 1e-12:
                raise ArcsNotDisjoint("arc endpoints do not coincide with the declared points")
        dense = [arc.samples() for arc in self.arcs]
        for a in range(len(dense)):
            for b in range(a + 1, len(dense)):
                d = np.abs(dense[a][:, None] - dense[b][None, :]).min()
                if d <= max(SEP_TOL, 1e-3 * self._scale()) or _polylines_cross(dense[a], dense[b]):
                    raise ArcsNotDisjoint(f"arcs {a} and {b} meet")

    def _scale(self) -> float:
        pts = self.points.points
        return float(np.max(np.abs(pts[:, None] - pts[None, :])))

    @property
    def k(self) -> int:
        return len(self.arcs)


def standard_matching(points: PointConfig | Sequence[complex]) -> CrossinglessMatching:
    """Rainbow matching of collinear points by nested semicircles, innermost first."""
    pc = points if isinstance(points, PointConfig) else PointConfig(points)
    pts = pc.points
    n = len(pts)
    if n % 2:
        raise OddStrandCount("a matching needs an even number of points")
    direction = pts[np.argmax(np.abs(pts - pts[0]))] - pts[0]
    direction = direction / abs(direction) if abs(direction) else 1.0
    order = np.argsort((pts / direction).real, kind="stable")
    arcs = []
    for i in range(n // 2 - 1, -1, -1):
        a, b = int(order[i]), int(order[n - 1 - i])
        arcs.append(semicircle(pts[a], pts[b], (a, b)))
    return CrossinglessMatching(pc, tuple(arcs))


@dataclass(frozen=True)
class EntranceStage:
    """Closing one arc: its endpoints travel to the arc midpoint.

    ``slots`` are the positions of the arc's endpoints in the current
    (shrinking) configuration ``config``.
    """

    arc: Arc
    config: np.ndarray
    slots: tuple[int, int]

    @property
    def merge_point(self) -> complex:
        return self.arc.midpoint

    def position(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        z = self.config.copy()
        dz = np.zeros_like(z)
        i, j = self.slots
        u = np.array([s / 2, 1 - s / 2])
        pos = self.arc.evaluate(u)
        vel = self.arc.derivative(u) * np.array([0.5, -0.5])
        z[i], z[j] = pos
        dz[i], dz[j] = vel
        return z, dz

    def paths(self, s_end: float = 1.0, samples: int = 65) -> StrandPaths:
        """Stage restricted to ``s in [0, s_end]``, reparametrised to ``[0, 1]``."""
        if s_end >= 1.0:
            gap = lambda s: abs(self.position(s)[0][self.slots[0]] - self.position(s)[0][self.slots[1]])
            lo, hi = 0.0, 1.0
            for _ in range(80):
                mid = (lo + hi) / 2
                lo, hi = (mid, hi) if gap(mid) > MERGE_TOL else (lo, mid)
            s_end = lo

        def ev(t):
            z, dz = self.position(t * s_end)
            return z, dz * s_end

        t = np.linspace(0.0, 1.0, samples)
        vals = [ev(ti) for ti in t]
        return StrandPaths(t, np.array([v[0] for v in vals]), np.array([v[1] for v in vals]), ev)

    def after(self) -> np.ndarray:
        return np.delete(self.config, list(self.slots))


def matching_entrance_path(m: CrossinglessMatching) -> list[EntranceStage]:
    """Close the arcs one after another in the matching's order."""
    config = m.points.points.copy()
    labels = list(range(len(config)))
    stages = []
    for arc in m.arcs:
        slots = (labels.index(arc.pair[0]), labels.index(arc.pair[1]))
        stage = EntranceStage(arc, config.copy(), slots)
        stage.paths()  # validates non-collision up to the merger
        stages.append(stage)
        config = stage.after()
        labels = [lab for lab in labels if lab not in arc.pair]
    return stages


@dataclass(frozen=True)
class KnotClosure:
    braid: BraidWord
    match_bottom: CrossinglessMatching
    match_top: CrossinglessMatching

    def __post_init__(self):
        for m in (self.match_bottom, self.match_top):
            if m.points.k != self.braid.strands:
                raise ArcsNotDisjoint("matching size differs from the bipartite braid")
        if not np.allclose(self.match_bottom.points.points, self.match_top.points.points):
            raise ArcsNotDisjoint("top and bottom matchings must share the endpoint configuration")

    @classmethod
    def plat(cls, word: BraidWord, points: Sequence[complex] | None = None) -> "KnotClosure":
        """Closure of ``word x id`` by rainbow matchings on collinear points."""
        ext = bipartite_extend(word)
        if points is None:
            # positive points keep z_a + z_b away from zero, which matters for N = 2
            points = np.arange(1, ext.strands + 1, dtype=float)
        m = standard_matching(PointConfig(points))
        return cls(ext, m, m)
