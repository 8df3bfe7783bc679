"""Command-line front end.

Every subcommand writes ``summary.json`` (sorted keys, full resolved
configuration and seed) and CSV data files into ``--output``.  A flat
``key = value`` file given with ``--config`` supplies defaults for any flag;
explicit flags win.  Exit codes: 0 success, 2 configuration error, 3
numerical failure, 4 precondition violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, NahmkitError, ParseError


# configuration ---------------------------------------------------------------

def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    entries: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError(f"{path}:{lineno}: empty key")
        key = key.replace("-", "_")
        if key in entries:
            raise ParseError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParseError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParseError(f"expected comma-separated integers, got {text!r}") from exc


def _complexes(text: str) -> list[complex]:
    try:
        return [complex(v.strip().replace(" ", "")) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParseError(f"expected comma-separated complex numbers, got {text!r}") from exc


def _positive(value: float, name: str) -> float:
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


# output ------------------------------------------------------------------------

def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else str(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_summary(out: Path, config: dict, result: dict) -> str:
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable({"config": config, "result": result}), sort_keys=True, indent=2) + "\n"
    (out / "summary.json").write_text(text)
    return text


def write_csv(out: Path, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in row])


def _coord_rows(points: Sequence[np.ndarray]) -> tuple[list[str], list[list]]:
    if not len(points):
        return ["index"], []
    d = len(points[0])
    header = ["index"] + [f"re_c{i}" for i in range(d)] + [f"im_c{i}" for i in range(d)]
    rows = [[i] + list(np.real(p)) + list(np.imag(p)) for i, p in enumerate(points)]
    return header, rows


# subcommands -------------------------------------------------------------------

def cmd_orbit(args, out: Path) -> dict:
    from .lie_core import (Partition, centraliser_dimension, dominance_leq, jordan_nilpotent,
                           partitions, weight_to_partition)
    if args.weight:
        lam = _ints(args.weight)
        if args.N is not None and len(lam) != args.N - 1:
            raise ConfigError(f"weight has {len(lam)} entries, expected N-1 = {args.N - 1}")
        pi = weight_to_partition(lam)
    elif args.partition:
        pi = Partition(_ints(args.partition))
    else:
        raise ConfigError("orbit needs --weight or --partition")
    n = pi.n
    e = jordan_nilpotent(pi)
    cdim = centraliser_dimension(e)
    rows = [[str(rho), int(dominance_leq(rho, pi)), int(dominance_leq(pi, rho))] for rho in partitions(n)]
    write_csv(out, "dominance.csv", ["partition", "below", "above"], rows)
    return {"partition": str(pi), "n": n, "conjugate": str(pi.conjugate()),
            "centraliser_dim": cdim, "orbit_dim": n * n - 1 - cdim, "slice_dim": cdim}


def _strand_setup(args, k: int):
    from .adjoint_quotient import PointConfig
    from .lie_core import Partition
    from .transport import strand_slice
    pts = _complexes(args.points) if args.points else [float(i) for i in range(1, k + 1)]
    if len(pts) != k:
        raise ConfigError(f"{len(pts)} points given for {k} strands")
    pi = Partition(_ints(args.partition)) if getattr(args, "partition", None) else None
    return PointConfig(pts), strand_slice(k, args.N, pi)


def _random_fibre_point(slice_, base, n, radius, rng):
    from .adjoint_quotient import d_config, fibre_solve, slice_project
    d = slice_.dim_slice
    centre = slice_project(slice_, d_config(base.points, n))
    seed = centre + radius * (rng.normal(size=d) + 1j * rng.normal(size=d)) / np.sqrt(2 * d)
    return fibre_solve(slice_, base, base.k, n, seed, jacobian="analytic", return_coords=True)


def cmd_slice(args, out: Path) -> dict:
    from .adjoint_quotient import chi_tilde
    k = len(_complexes(args.points)) if args.points else 1
    base, slice_ = _strand_setup(args, k)
    rng = np.random.default_rng(args.seed)
    x, c = _random_fibre_point(slice_, base, args.N, args.radius, rng)
    z = chi_tilde(x, k, args.N, reference=base.points).points
    write_csv(out, "fibre_point.csv", *_coord_rows([c]))
    return {"partition": str(slice_.partition), "ambient_n": slice_.n,
            "slice_dim": slice_.dim_slice, "fibre_dim": slice_.dim_slice - (slice_.n - 1),
            "chi_tilde_error": float(np.max(np.abs(z - base.points))), "coords": c}


def cmd_divisor(args, out: Path) -> dict:
    from .higgs_divisor import divisor_of, monopole_higgs
    from .lie_core import jordan_nilpotent, orbit_partition, weight_to_partition
    lam = _ints(args.weight)
    phi = monopole_higgs(lam)
    line = _complexes(args.line) if args.line else [1.0] + [0.0] * (len(lam))
    div = divisor_of(phi, line)
    write_csv(out, "divisor.csv", ["re_point", "im_point", "weight"],
              [[p.real, p.imag, ",".join(map(str, w))] for p, w in div.points])
    return {"weight": lam, "points": [{"point": p, "weight": list(w)} for p, w in div.points],
            "effective": div.effective, "orbit_at_zero": str(orbit_partition(phi(0.0))),
            "weight_partition": str(weight_to_partition(lam))}


def cmd_model_check(args, out: Path) -> dict:
    from .model_solutions import ModelParams, residual_convergence
    sizes = _ints(args.grids)
    window = tuple(_floats(args.window))
    if len(window) != 2:
        raise ConfigError("window takes two numbers")
    sups, ratios = residual_convergence(ModelParams(args.lam), sizes, window)
    write_csv(out, "convergence.csv", ["n", "sup_residual", "ratio"],
              [[n, s, r] for n, s, r in zip(sizes, sups, [float("nan")] + ratios)])
    return {"lambda": args.lam, "grids": sizes, "sup_residuals": sups, "ratios": ratios}


def cmd_ebe_solve(args, out: Path) -> dict:
    from .ebe_solver import model_field, solve_ebe
    from .grids import sector_grid
    from .model_solutions import ModelParams
    params = ModelParams(args.lam)
    grid = sector_grid(args.n, args.n)
    exact = model_field(grid, params)
    psi = solve_ebe(params, exact, tol=_positive(args.tol, "tol"))
    mask = grid.interior_mask()
    err = float(np.max(np.abs(psi.values - exact.values)[mask]))
    out.mkdir(parents=True, exist_ok=True)
    psi.to_csv(out / "psi.csv")
    (out / "psi.nkgrid").write_bytes(psi.to_bytes())
    return {"lambda": args.lam, "n": args.n, "iterations": psi.meta["iterations"],
            "residual": psi.meta["residual"], "history": psi.meta["history"],
            "interior_error": err}


def cmd_dkw(args, out: Path) -> dict:
    from .ebe_solver import (ComovingOperators, StrandMotion, comoving_grid, series_eval,
                             solve_dkw_order)
    from .model_solutions import ModelParams
    params = ModelParams(args.lam)
    grid = comoving_grid(args.nt, args.nx, args.ny)
    t = grid.axes[0]
    if args.motion == "circular":
        motion = StrandMotion.circular(t, args.radius)
    elif args.motion == "uniform":
        motion = StrandMotion.uniform(t, args.radius)
    else:
        raise ConfigError(f"unknown motion {args.motion!r}")
    orders = [solve_dkw_order(0, [grid], motion, params)]
    ops = ComovingOperators(orders[0])
    for n in range(1, args.order + 1):
        orders.append(solve_dkw_order(n, orders, motion, params, operators=ops))
    total = series_eval(args.q, orders, motion, params, ops)
    out.mkdir(parents=True, exist_ok=True)
    for n, f in enumerate(orders):
        f.to_csv(out / f"psi_{n}.csv")
    return {"lambda": args.lam, "motion": args.motion, "order": args.order, "q": args.q,
            "order_sup": [float(np.max(np.abs(f.values))) for f in orders],
            "series_residual": total.meta["residual"]}


def _transport_opts(args):
    from .transport import TransportOptions
    return TransportOptions(tol=_positive(args.tol, "tol"))


def cmd_transport(args, out: Path) -> dict:
    from .braids import BraidWord, braid_to_paths
    from .transport import parallel_transport
    word = BraidWord.parse(args.braid)
    base, slice_ = _strand_setup(args, word.strands)
    rng = np.random.default_rng(args.seed)
    _, c = _random_fibre_point(slice_, base, args.N, args.radius, rng)
    res = parallel_transport(c, braid_to_paths(word, base), slice_, _transport_opts(args))
    header, _ = _coord_rows([c])
    write_csv(out, "samples.csv", ["t"] + header[1:],
              [[t] + list(v.real) + list(v.imag) for t, v in res.samples])
    return {"braid": str(word), "start": c, "end": res.coords, "steps": res.steps,
            "rejected": res.rejected, "max_fibre_drift": res.max_fibre_drift,
            "max_tracking_error": res.max_tracking_error, "clamped": res.clamped}


def cmd_fixpoints(args, out: Path) -> dict:
    from .braids import BraidWord
    from .lie_core import Partition
    from .transport import Sampler, monodromy_fixed_points
    word = BraidWord.parse(args.braid)
    base, _ = _strand_setup(args, word.strands)
    pi = Partition(_ints(args.partition)) if args.partition else None
    rep = monodromy_fixed_points(word, base, args.N, pi,
                                 Sampler(args.samples, _positive(args.radius, "radius"), args.seed),
                                 _transport_opts(args), dedupe_radius=args.dedupe)
    write_csv(out, "fixed_points.csv", *_coord_rows(rep.points))
    samples = [{k: v for k, v in s.items()} for s in rep.samples]
    return {"braid": str(word), "count": rep.count, "continuum_flag": rep.continuum_flag,
            "degenerate_roots": rep.degenerate, "residuals": rep.residuals,
            "points": rep.points, "samples": samples}


def _cloud_summary(cloud: np.ndarray) -> dict:
    real = np.concatenate([cloud.real, cloud.imag], axis=1)
    sv = np.linalg.svd(real - real.mean(axis=0), compute_uv=False) if len(real) > 1 else np.zeros(1)
    return {"size": len(cloud), "pca_singular_values": sv}


def cmd_vanishing(args, out: Path) -> dict:
    from .adjoint_quotient import PointConfig
    from .braids import standard_matching
    from .transport import lagrangian_sample
    pts = _complexes(args.points)
    m = standard_matching(PointConfig(pts))
    details: list = []
    cloud = lagrangian_sample(m, args.N, args.count, seed=args.seed, details=details)
    write_csv(out, "cloud.csv", *_coord_rows(cloud))
    return {"points": pts, "arcs": [list(a.pair) for a in m.arcs], "samples": details,
            **_cloud_summary(cloud)}


def cmd_generators(args, out: Path) -> dict:
    from .adjoint_quotient import PointConfig
    from .braids import BraidWord, KnotClosure, braid_to_paths, standard_matching
    from .transport import intersection_generators, lagrangian_sample, parallel_transport, strand_slice
    word = BraidWord.parse(args.braid)
    m = standard_matching(PointConfig(np.arange(1.0, word.strands + 1)))
    closure = KnotClosure(word, m, m)
    slice_ = strand_slice(closure.braid.strands, args.N)
    plus = lagrangian_sample(closure.match_top, args.N, args.count, seed=args.seed)
    minus = lagrangian_sample(closure.match_bottom, args.N, args.count, seed=args.seed)
    paths = braid_to_paths(closure.braid, closure.match_bottom.points)
    opts = _transport_opts(args)
    moved = []
    for c in minus:
        try:
            moved.append(parallel_transport(c, paths, slice_, opts).coords)
        except NahmkitError:
            continue
    rep = intersection_generators(np.array(moved), plus, capture_radius=args.capture,
                                  dedupe_radius=args.dedupe)
    write_csv(out, "generators.csv", *_coord_rows(rep.points))
    return {"braid": str(closure.braid), "count": rep.count, "continuum_flag": rep.continuum_flag,
            "cloud_sizes": [len(moved), len(plus)], "captured": rep.samples,
            "points": rep.points}


# parser ------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value file supplying defaults")
    p.add_argument("--output", default="nahmkit-out", help="output directory")
    p.add_argument("--seed", type=int, default=0)


def _add_strands(p: argparse.ArgumentParser, points_default: str | None = None):
    p.add_argument("--N", type=int, default=2, help="matrix size per strand")
    p.add_argument("--points", default=points_default, help="comma-separated complex base points")
    p.add_argument("--partition", default=None, help="Jordan type of the slice (default per-strand [N-1,1])")
    p.add_argument("--radius", type=float, default=0.3, help="seed ball radius")
    p.add_argument("--tol", type=float, default=1e-9, help="integrator tolerance")


COMMANDS: dict[str, tuple[Callable, str]] = {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nahmkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        p.set_defaults(func=func)
        return p

    p = add("orbit", cmd_orbit, "partition and orbit data")
    p.add_argument("--weight", help="comma-separated weight, e.g. 1,0,0")
    p.add_argument("--partition", help="comma-separated partition, e.g. 3,1")
    p.add_argument("--N", type=int, default=None)

    p = add("slice", cmd_slice, "slice dimensions and a fibre solve")
    _add_strands(p, "1")

    p = add("divisor", cmd_divisor, "divisor of a monopole Higgs field")
    p.add_argument("--weight", required=False, default="1", help="comma-separated exponents")
    p.add_argument("--line", default=None, help="comma-separated line vector (default e_1)")

    p = add("model-check", cmd_model_check, "stencil residual convergence of the closed form")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--grids", default="33,65,129")
    p.add_argument("--window", default="0.25,1")

    p = add("ebe-solve", cmd_ebe_solve, "nonlinear solve with closed-form boundary data")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--n", type=int, default=65)
    p.add_argument("--tol", type=float, default=1e-9)

    p = add("dkw-correction", cmd_dkw, "homotopy-expansion orders for a strand motion")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--motion", default="circular", choices=["circular", "uniform"])
    p.add_argument("--radius", type=float, default=1.0, help="circle radius or speed")
    p.add_argument("--q", type=float, default=0.1)
    p.add_argument("--nt", type=int, default=8)
    p.add_argument("--nx", type=int, default=13)
    p.add_argument("--ny", type=int, default=13)

    p = add("transport", cmd_transport, "parallel transport of a random fibre point")
    p.add_argument("--braid", default="k=2; s1 s1")
    _add_strands(p)

    p = add("fixpoints", cmd_fixpoints, "monodromy fixed points of a pure braid")
    p.add_argument("--braid", default="k=2; s1 s1")
    _add_strands(p)
    p.add_argument("--samples", type=int, default=4)
    p.set_defaults(radius=0.5, tol=1e-8)
    p.add_argument("--dedupe", type=float, default=1e-4)

    p = add("vanishing", cmd_vanishing, "Lagrangian sample of a rainbow matching")
    p.add_argument("--points", default="1,2")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--count", type=int, default=10)

    p = add("generators", cmd_generators, "intersection count for a plat closure")
    p.add_argument("--braid", default="k=2; s1 s1", help="word on the 2k strands of the closure")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--capture", type=float, default=1e-2)
    p.add_argument("--dedupe", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-8)
    return parser


def parse(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        entries = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        aliases = {opt.lstrip("-").replace("-", "_"): a.dest
                   for a in sub._actions for opt in a.option_strings}  # noqa: SLF001
        entries = {aliases.get(key, key): value for key, value in entries.items()}
        known = {a.dest for a in sub._actions}  # noqa: SLF001
        unknown = sorted(set(entries) - known - {"command"})
        if unknown:
            raise ParseError(f"{args.config}: unknown keys for {args.command}: {', '.join(unknown)}")
        if entries.get("command", args.command) != args.command:
            raise ParseError(f"{args.config}: config is for {entries['command']!r}, not {args.command!r}")
        entries.pop("command", None)
        sub.set_defaults(**entries)
        args = parser.parse_args(argv)
    return args


def resolved_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config", "output")}
    return dict(sorted(cfg.items()))


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse(sys.argv[1:] if argv is None else argv)
        out = Path(args.output)
        result = args.func(args, out)
        text = write_summary(out, resolved_config(args), result)
    except NahmkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    sys.stdout.write(text)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
