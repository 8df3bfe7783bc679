"""Sampled fields on product grids and the discrete Laplacian.

Axes are named.  The names select the coordinate system used by the
Laplacian:

``('y',)``                     half-line
``('r', 'y')``                 axisymmetric meridian plane
``('x2', 'x3', 'y')``          half-space
``('t', 'x2', 'x3', 'y')``     half-space times a periodic time axis
``('rho', 'v')``               axisymmetric sector, ``rho = log R``,
                               ``v = -log cos(alpha)``

A ``y`` axis may be uniform or geometric (``kind='log'``); geometric axes
are differenced in ``log y``.  The Laplacian is assembled in conservative
form ``mu^-1 sum_a d_a(mu g^aa d_a)`` on the computational coordinates.
Flux coefficients on exponential axes carry the factor
``(h/2) / sinh(h/2)``, which makes the stencil exact on functions linear in
the computational coordinate (``-log y`` in particular) while keeping
second-order consistency.  The operator is symmetric with respect to the
node weights ``mu``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, GridTooCoarse

SYSTEMS = {
    ("y",): "line",
    ("r", "y"): "axisym",
    ("x2", "x3", "y"): "halfspace",
    ("t", "x2", "x3", "y"): "halfspace",
    ("rho", "v"): "sector",
}


@dataclass(frozen=True, eq=False)
class GridField:
    """Real samples on a product grid.

    ``kinds`` holds ``'uniform'``, ``'log'`` or ``'periodic'`` per axis.  A
    periodic axis omits its right endpoint and carries its period.
    """

    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    names: tuple[str, ...]
    kinds: tuple[str, ...] = ()
    periods: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "names", tuple(self.names))
        if not self.kinds:
            object.__setattr__(self, "kinds", ("uniform",) * len(axes))
        if not self.periods:
            object.__setattr__(self, "periods", (0.0,) * len(axes))
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if not (len(axes) == len(self.names) == len(self.kinds) == len(self.periods)):
            raise ConfigError("axes, names, kinds and periods must have equal length")
        for name, a in zip(self.names, axes):
            if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
                raise ConfigError(f"axis {name!r} must be strictly increasing with at least 2 nodes")
        if values.shape != self.shape:
            raise ConfigError(f"value shape {values.shape} does not match axes {self.shape}")
        for name, a, kind in zip(self.names, axes, self.kinds):
            if kind == "log" and a[0] <= 0:
                raise ConfigError(f"log axis {name!r} must be positive")
            w = np.log(a) if kind == "log" else a
            dw = np.diff(w)
            if not np.allclose(dw, dw[0], rtol=1e-9, atol=0):
                raise ConfigError(f"axis {name!r} is not equispaced in its computational coordinate")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def system(self) -> str:
        try:
            return SYSTEMS[self.names]
        except KeyError:
            raise ConfigError(f"unsupported axis layout {self.names}") from None

    def with_values(self, values) -> "GridField":
        """Same grid, new samples and empty ``meta``."""
        return replace(self, values=np.asarray(values, dtype=float).reshape(self.shape), meta={})

    def zeros(self) -> "GridField":
        return self.with_values(np.zeros(self.shape))

    def computational(self, i: int) -> np.ndarray:
        a = self.axes[i]
        return np.log(a) if self.kinds[i] == "log" else a

    def spacing(self, i: int) -> float:
        w = self.computational(i)
        return float(w[1] - w[0])

    def mesh(self) -> dict[str, np.ndarray]:
        """Broadcastable coordinate arrays by axis name."""
        grids = np.meshgrid(*self.axes, indexing="ij", sparse=True)
        return dict(zip(self.names, grids))

    def physical(self) -> dict[str, np.ndarray]:
        """Full-shape arrays of the physical ``r`` and ``y`` (where defined)."""
        m = self.mesh()
        full = lambda a: np.broadcast_to(a, self.shape)
        sysname = self.system
        if sysname == "sector":
            big_r, s = np.exp(m["rho"]), np.exp(-m["v"])
            return {"r": full(big_r * np.sqrt(1.0 - s * s)), "y": full(big_r * s)}
        out = {"y": full(m["y"])}
        if sysname == "axisym":
            out["r"] = full(m["r"])
        elif sysname == "halfspace":
            out["r"] = full(np.hypot(m["x2"], m["x3"]))
        return out

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        for i, kind in enumerate(self.kinds):
            if kind == "periodic":
                continue
            idx = [slice(None)] * len(self.shape)
            idx[i] = 0
            mask[tuple(idx)] = False
            idx[i] = -1
            mask[tuple(idx)] = False
        return mask

    def same_grid(self, other: "GridField") -> bool:
        return (self.names == other.names and self.kinds == other.kinds
                and self.periods == other.periods
                and all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes)))

    def sup(self, mask: np.ndarray | None = None) -> float:
        v = self.values if mask is None else self.values[mask]
        return float(np.max(np.abs(v))) if v.size else 0.0

    # serialisation -----------------------------------------------------
    def to_csv(self, path: str | Path) -> None:
        """Coordinates and value, one node per row, 17 significant digits."""
        m = np.meshgrid(*self.axes, indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(self.names) + ["value"])
            cols = [c.ravel() for c in m] + [self.values.ravel()]
            for row in zip(*cols):
                w.writerow([f"{v:.17g}" for v in row])

    def to_bytes(self) -> bytes:
        return encode_grid(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridField":
        return decode_grid(data)


MAGIC = b"NKGRID01"


def encode_grid(g: GridField) -> bytes:
    """Binary layout, all little-endian.

    ``MAGIC`` (8 bytes), ``uint32`` dimension count, then per axis:
    ``uint32`` length, ``uint8`` kind code, ``float64`` period, ``uint16``
    name length and UTF-8 name; then every axis as ``float64`` samples and
    finally the values as ``float64`` in C order.
    """
    kinds = {"uniform": 0, "log": 1, "periodic": 2}
    out = [MAGIC, struct.pack("<I", len(g.axes))]
    for name, a, kind, period in zip(g.names, g.axes, g.kinds, g.periods):
        raw = name.encode()
        out.append(struct.pack("<IBdH", a.size, kinds[kind], period, len(raw)) + raw)
    for a in g.axes:
        out.append(a.astype("<f8").tobytes())
    out.append(np.ascontiguousarray(g.values).astype("<f8").tobytes())
    return b"".join(out)


def decode_grid(data: bytes) -> GridField:
    kinds = ["uniform", "log", "periodic"]
    if data[:8] != MAGIC:
        raise ConfigError("not a grid file")
    (ndim,) = struct.unpack_from("<I", data, 8)
    pos = 12
    names, lengths, kk, periods = [], [], [], []
    for _ in range(ndim):
        n, kind, period, ln = struct.unpack_from("<IBdH", data, pos)
        pos += struct.calcsize("<IBdH")
        names.append(data[pos:pos + ln].decode())
        pos += ln
        lengths.append(n)
        kk.append(kinds[kind])
        periods.append(period)
    axes = []
    for n in lengths:
        axes.append(np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(float))
        pos += 8 * n
    values = np.frombuffer(data, dtype="<f8", count=int(np.prod(lengths)), offset=pos)
    return GridField(tuple(axes), values.reshape(lengths).astype(float), tuple(names),
                     tuple(kk), tuple(periods))


# grid constructors ---------------------------------------------------------

def log_axis(lo: float, hi: float, n: int) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def _check_n(n: int, name: str, least: int = 3):
    if n < least:
        raise GridTooCoarse(f"axis {name!r} needs at least {least} nodes")


def line_grid(n: int, y_min: float = 0.05, y_max: float = 2.0) -> GridField:
    _check_n(n, "y")
    y = log_axis(y_min, y_max, n)
    return GridField((y,), np.zeros(n), ("y",), ("log",))


def axisym_grid(n_r: int, n_y: int, r_max: float = 2.0, y_min: float = 0.05,
                y_max: float = 2.0, r_min: float = 0.0) -> GridField:
    """Meridian rectangle with uniform ``r`` and geometric ``y``."""
    _check_n(n_r, "r")
    _check_n(n_y, "y")
    r = np.linspace(r_min, r_max, n_r)
    y = log_axis(y_min, y_max, n_y)
    return GridField((r, y), np.zeros((n_r, n_y)), ("r", "y"), ("uniform", "log"))


def sector_grid(n_rho: int, n_v: int, r_min: float = 0.05, r_max: float = 2.0,
                cos_min: float = 0.025) -> GridField:
    """Spherical shell sector ``r_min <= R <= r_max``, ``cos(alpha) >= cos_min``.

    In ``(log R, -log cos alpha)`` both the Nahm pole and the charge-one
    monopole profiles are affine, and resolution concentrates at the knot.
    """
    _check_n(n_rho, "rho")
    _check_n(n_v, "v")
    rho = np.linspace(np.log(r_min), np.log(r_max), n_rho)
    v = np.linspace(0.0, -np.log(cos_min), n_v)
    return GridField((rho, v), np.zeros((n_rho, n_v)), ("rho", "v"))


def halfspace_grid(n_x: int, n_y: int, half_width: float = 2.0, y_min: float = 0.05,
                   y_max: float = 2.0, n_t: int | None = None) -> GridField:
    """Box ``[-w, w]^2 x [y_min, y_max]``, optionally times a periodic circle."""
    _check_n(n_x, "x")
    _check_n(n_y, "y")
    x = np.linspace(-half_width, half_width, n_x)
    y = log_axis(y_min, y_max, n_y)
    if n_t is None:
        return GridField((x, x, y), np.zeros((n_x, n_x, n_y)), ("x2", "x3", "y"),
                         ("uniform", "uniform", "log"))
    _check_n(n_t, "t")
    period = 2 * np.pi
    t = np.arange(n_t) * period / n_t
    return GridField((t, x, x, y), np.zeros((n_t, n_x, n_x, n_y)), ("t", "x2", "x3", "y"),
                     ("periodic", "uniform", "uniform", "log"), (period, 0.0, 0.0, 0.0))


# operators -----------------------------------------------------------------

def _flux_factor(g: GridField, axis: int) -> float:
    h = g.spacing(axis)
    exponential = g.kinds[axis] == "log" or g.system == "sector"
    return (h / 2) / np.sinh(h / 2) if exponential else 1.0


def node_weights(g: GridField, coords: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Measure density ``mu`` in computational coordinates."""
    w = coords if coords is not None else _comp_mesh(g)
    if g.system == "sector":
        return np.broadcast_to(np.exp(3 * w["rho"] - w["v"]), g.shape) if coords is None \
            else np.exp(3 * w["rho"] - w["v"])
    mu = 1.0
    for name, kind in zip(g.names, g.kinds):
        if kind == "log":
            mu = mu * np.exp(w[name])
        if name == "r":
            mu = mu * w["r"]
    return np.broadcast_to(mu, g.shape) if coords is None else mu


def _flux(g: GridField, axis: int, w: dict[str, np.ndarray]) -> np.ndarray:
    """``mu g^aa`` at the supplied computational coordinates."""
    name = g.names[axis]
    if g.system == "sector":
        if name == "rho":
            return np.exp(w["rho"] - w["v"])
        return np.exp(w["rho"]) * (np.exp(w["v"]) - np.exp(-w["v"]))
    mu = node_weights(g, w)
    if g.kinds[axis] == "log":
        return mu * np.exp(-2 * w[name])
    return mu


def _comp_mesh(g: GridField) -> dict[str, np.ndarray]:
    comps = [g.computational(i) for i in range(len(g.axes))]
    return dict(zip(g.names, np.meshgrid(*comps, indexing="ij", sparse=True)))


def _neighbours(g: GridField, axis: int, nodes: np.ndarray, offset: int):
    """Flat indices of neighbours along ``axis``; periodic axes wrap."""
    multi = list(np.unravel_index(nodes, g.shape))
    n = g.shape[axis]
    shifted = multi[axis] + offset
    if g.kinds[axis] == "periodic":
        shifted = shifted % n
    multi[axis] = shifted
    return np.ravel_multi_index(multi, g.shape)


def laplacian(g: GridField) -> sp.csr_matrix:
    """Discrete Laplacian on all nodes; boundary rows are empty."""
    size = int(np.prod(g.shape))
    mask = g.interior_mask().ravel()
    nodes = np.flatnonzero(mask)
    comps = [g.computational(i) for i in range(len(g.axes))]
    mu = node_weights(g).ravel()[nodes]
    rows, cols, vals = [], [], []
    diag = np.zeros(nodes.size)
    for axis in range(len(g.axes)):
        h = g.spacing(axis)
        c = _flux_factor(g, axis)
        multi = np.unravel_index(nodes, g.shape)
        for offset in (1, -1):
            mids = []
            for i, comp in enumerate(comps):
                if i == axis:
                    mids.append(comp[multi[i]] + offset * h / 2)
                else:
                    mids.append(comp[multi[i]])
            flux = c * _flux(g, axis, dict(zip(g.names, mids))) / (h * h * mu)
            nb = _neighbours(g, axis, nodes, offset)
            rows.append(nodes)
            cols.append(nb)
            vals.append(flux)
            diag -= flux
    rows.append(nodes)
    cols.append(nodes)
    vals.append(diag)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(size, size))


def first_derivative(g: GridField, name: str) -> sp.csr_matrix:
    """Central first difference along a uniform or periodic axis."""
    axis = g.names.index(name)
    if g.kinds[axis] == "log":
        raise ConfigError("first derivatives are only provided on uniform axes")
    h = g.spacing(axis)
    size = int(np.prod(g.shape))
    nodes = np.flatnonzero(g.interior_mask().ravel())
    plus = _neighbours(g, axis, nodes, 1)
    minus = _neighbours(g, axis, nodes, -1)
    rows = np.concatenate([nodes, nodes])
    cols = np.concatenate([plus, minus])
    vals = np.concatenate([np.full(nodes.size, 0.5 / h), np.full(nodes.size, -0.5 / h)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))


def second_derivative(g: GridField, name: str) -> sp.csr_matrix:
    """Standard three-point second difference along a uniform axis."""
    axis = g.names.index(name)
    h = g.spacing(axis)
    size = int(np.prod(g.shape))
    nodes = np.flatnonzero(g.interior_mask().ravel())
    plus = _neighbours(g, axis, nodes, 1)
    minus = _neighbours(g, axis, nodes, -1)
    rows = np.concatenate([nodes, nodes, nodes])
    cols = np.concatenate([plus, minus, nodes])
    vals = np.concatenate([np.full(nodes.size, 1 / h**2)] * 2 + [np.full(nodes.size, -2 / h**2)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
