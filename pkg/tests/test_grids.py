import numpy as np
import pytest
from hypothesis import given, strategies as st

from nahmkit.errors import ConfigError, GridTooCoarse
from nahmkit.grids import (GridField, axisym_grid, decode_grid, encode_grid, first_derivative,
                           halfspace_grid, laplacian, line_grid, node_weights, second_derivative,
                           sector_grid)


def interior_error(g, f, lap_f):
    vals = f(g)
    got = laplacian(g) @ vals.ravel()
    mask = g.interior_mask().ravel()
    return np.max(np.abs(got[mask] - lap_f(g).ravel()[mask]))


def line_f(g):
    return g.physical()["y"] ** 3


def axisym_f(g):
    p = g.physical()
    return p["r"] ** 2 * p["y"] + np.sin(p["y"])


def axisym_lap(g):
    p = g.physical()
    return 4 * p["y"] - np.sin(p["y"])


def sector_f(g):
    p = g.physical()
    return p["r"] ** 2 + p["y"] ** 3


def sector_lap(g):
    p = g.physical()
    return 4 + 6 * p["y"]


CASES = {
    "line": (lambda n: line_grid(n, 0.2, 2.0), line_f, lambda g: 6 * g.physical()["y"]),
    "axisym": (lambda n: axisym_grid(n, n, 1.0, 0.2, 1.5, r_min=0.2), axisym_f, axisym_lap),
    "sector": (lambda n: sector_grid(n, n, 0.3, 2.0, 0.2), sector_f, sector_lap),
    "halfspace": (lambda n: halfspace_grid(n, n, 1.0, 0.2, 1.5),
                  lambda g: g.mesh()["x2"] ** 2 * g.mesh()["y"] + g.mesh()["x3"] * 0 + np.cos(g.mesh()["y"]),
                  lambda g: np.broadcast_to(2 * g.mesh()["y"] - np.cos(g.mesh()["y"]), g.shape)),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_laplacian_second_order(name):
    make, f, lap = CASES[name]
    errs = []
    for n in (17, 33, 65):
        g = make(n)
        errs.append(interior_error(g, lambda gg: np.broadcast_to(f(gg), gg.shape), lap))
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.7 < errs[1] / errs[2] < 4.3


@pytest.mark.parametrize("grid", [line_grid(11), axisym_grid(9, 11, r_min=0.1), sector_grid(9, 9),
                                  halfspace_grid(7, 9)])
def test_nahm_pole_exact_on_exponential_axes(grid):
    y = grid.physical()["y"]
    got = (laplacian(grid) @ (-np.log(y)).ravel())[grid.interior_mask().ravel()]
    want = (1 / y**2).ravel()[grid.interior_mask().ravel()]
    assert np.max(np.abs(got - want) / want) < 1e-11


@pytest.mark.parametrize("grid", [line_grid(9), axisym_grid(7, 9, r_min=0.1), sector_grid(7, 8),
                                  halfspace_grid(5, 7, n_t=4)])
def test_laplacian_symmetric_in_node_weights(grid):
    lap = laplacian(grid).toarray()
    inner = np.flatnonzero(grid.interior_mask().ravel())
    mu = node_weights(grid).ravel()
    weighted = (mu[:, None] * lap)[np.ix_(inner, inner)]
    assert np.allclose(weighted, weighted.T, rtol=1e-12, atol=1e-12 * np.abs(weighted).max())


def test_periodic_axis_wraps():
    g = halfspace_grid(5, 5, n_t=8)
    assert g.interior_mask()[0].any()
    t = g.mesh()["t"]
    vals = np.broadcast_to(np.sin(t), g.shape)
    d = (first_derivative(g, "t") @ vals.ravel()).reshape(g.shape)
    mask = g.interior_mask()
    h = g.spacing(0)
    assert np.allclose(d[mask], np.broadcast_to(np.cos(t) * np.sin(h) / h, g.shape)[mask])
    d2 = (second_derivative(g, "t") @ vals.ravel()).reshape(g.shape)
    factor = 2 * (np.cos(h) - 1) / h**2
    assert np.allclose(d2[mask], (factor * vals)[mask])


def test_first_derivative_rejects_log_axis():
    with pytest.raises(ConfigError):
        first_derivative(line_grid(5), "y")


def test_grid_validation():
    with pytest.raises(ConfigError):
        GridField((np.array([0, 1, 1.0]),), np.zeros(3), ("y",))
    with pytest.raises(ConfigError):
        GridField((np.array([0, 1, 2.0]),), np.zeros(4), ("y",))
    with pytest.raises(ConfigError):
        GridField((np.array([0, 1, 3.0]),), np.zeros(3), ("y",))
    with pytest.raises(ConfigError):
        GridField((np.array([0, 1, 2.0]),), np.zeros(3), ("y",), ("log",))
    with pytest.raises(ConfigError):
        GridField((np.array([0, 1, 2.0]),), np.zeros(3), ("q",)).system
    with pytest.raises(GridTooCoarse):
        line_grid(2)


@given(st.integers(0, 2**32 - 1))
def test_binary_round_trip(seed):
    rng = np.random.default_rng(seed)
    g = halfspace_grid(3, 4, n_t=3)
    g = g.with_values(rng.normal(size=g.shape))
    back = decode_grid(encode_grid(g))
    assert back.same_grid(g) and np.array_equal(back.values, g.values)
    assert GridField.from_bytes(g.to_bytes()).same_grid(g)


def test_decode_rejects_garbage():
    with pytest.raises(ConfigError):
        decode_grid(b"not a grid at all")


def test_csv_round_trip(tmp_path):
    g = axisym_grid(3, 4, r_min=0.1)
    g = g.with_values(np.arange(12.0).reshape(3, 4) / 7)
    g.to_csv(tmp_path / "g.csv")
    rows = np.loadtxt(tmp_path / "g.csv", delimiter=",", skiprows=1)
    assert rows.shape == (12, 3)
    assert np.array_equal(rows[:, 2], g.values.ravel())
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "r,y,value"


def test_sector_physical_coordinates():
    g = sector_grid(5, 5, 0.5, 2.0, 0.1)
    p = g.physical()
    big_r = np.hypot(p["r"], p["y"])
    assert np.allclose(big_r, np.broadcast_to(np.exp(g.mesh()["rho"]), g.shape))
    assert np.allclose(p["y"] / big_r, np.broadcast_to(np.exp(-g.mesh()["v"]), g.shape))
