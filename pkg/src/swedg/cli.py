"""Command-line front end: single runs, convergence studies, case inspection,
and the runtime invariant suite.

Subcommands: ``run``, ``convergence``, ``describe``, ``verify``.  Exit codes:
0 ok, 2 configuration error, 3 solver abort / failed verification.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import integrator as ig
from . import limiters as lim
from . import operators as op
from .cases import CASE_NAMES, BoundaryHandler, make_case, setup
from .mesh import build_interval_mesh, build_structured_triangular

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved run parameters; every field lands in the output manifest."""

    case: str
    degree: int = 2
    n: int = None              # mesh resolution (cells in 1D, cells/side in 2D)
    cfl: float = None
    tol: float = None
    eps_d: float = None
    v_max: float = None
    t_final: float = None
    outdir: str = "out"
    output_times: tuple = ()
    formats: tuple = ("csv",)
    seed: int = 0
    threads: int = 1
    fast: bool = None          # None = auto (compiled kernels when available)

    def __post_init__(self):
        if self.case not in CASE_NAMES:
            raise ConfigError(
                f"unknown case {self.case!r}; choose from {', '.join(CASE_NAMES)}"
            )
        if self.degree < 0:
            raise ConfigError(f"degree must be >= 0, got {self.degree}")
        if self.n is not None and self.n < 1:
            raise ConfigError(f"resolution must be positive, got {self.n}")
        if self.cfl is not None and self.cfl <= 0:
            raise ConfigError(f"cfl must be positive, got {self.cfl}")
        if self.t_final is not None and self.t_final < 0:
            raise ConfigError(f"t_final must be non-negative, got {self.t_final}")
        for fmt in self.formats:
            if fmt not in ("csv", "vtk"):
                raise ConfigError(f"unknown output format {fmt!r}")


def _load_config_file(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a flat JSON object")
    return data


def _resolve_config(args):
    """Merge config file values with CLI flags; flags win."""
    data = _load_config_file(args.config) if args.config else {}
    for key in ("case", "degree", "n", "cfl", "tol", "eps_d", "v_max",
                "t_final", "outdir", "seed", "threads", "fast"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if getattr(args, "output_times", None):
        data["output_times"] = [float(s) for s in args.output_times.split(",")]
    if getattr(args, "format", None):
        data["formats"] = tuple(args.format)
    if "case" not in data:
        raise ConfigError("no case given (flag or config file)")
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data["output_times"] = tuple(data.get("output_times", ()))
    data["formats"] = tuple(data.get("formats", ("csv",)))
    return RunConfig(**data)


def _build_problem(config):
    case = make_case(config.case)
    if config.t_final is not None:
        case.t_final = config.t_final
    prob = setup(
        case,
        n=config.n,
        degree=config.degree,
        cfl=config.cfl,
        tol=config.tol,
        eps_d=config.eps_d,
        v_max=config.v_max,
    )
    if config.fast is not None:
        prob.disc.fast = bool(config.fast)
    return prob


# -- snapshots -----------------------------------------------------------------


def troubled_mask(prob, state):
    """Indicator-flagged cells of the current state (all-false when the case
    runs without limiters)."""
    if prob.workspace is None:
        return np.zeros(state.disc.mesh.n_elements, dtype=bool)
    eta = state.h + state.bottom.coeff
    ind = lim.fu_shu_indicator(prob.workspace, eta)
    return ind > prob.limiter_cfg.tol


def write_snapshot(state, path, fmt="csv", troubled=None):
    """Write one field snapshot.

    CSV: one row per volume quadrature point with columns
    x[,y], h, h+b, u[,v], m[,m_y], b, troubled.  VTK (2D): legacy ASCII
    unstructured grid with per-cell averages of the same quantities.
    """
    disc = state.disc
    if troubled is None:
        troubled = np.zeros(disc.mesh.n_elements, dtype=bool)
    if fmt == "csv":
        _write_csv_snapshot(state, path, troubled)
    elif fmt == "vtk":
        if disc.dim != 2:
            raise ConfigError("vtk output is only defined for 2D cases")
        _write_vtk_snapshot(state, path, troubled)
    else:
        raise ConfigError(f"unknown snapshot format {fmt!r}")


def _write_csv_snapshot(state, path, troubled):
    disc = state.disc
    dim = disc.dim
    x = disc.x_vol.reshape(-1, dim)
    hv = disc.eval_volume(state.h).ravel()
    uv = disc.eval_volume(state.u).reshape(-1, dim)
    mv = disc.eval_volume(state.m).reshape(-1, dim)
    bv = state.bottom.vol.ravel()
    flag = np.repeat(troubled.astype(int), disc.nq)

    cols = ["x"] if dim == 1 else ["x", "y"]
    cols += ["h", "h_plus_b"]
    cols += ["u"] if dim == 1 else ["u", "v"]
    cols += ["m"] if dim == 1 else ["m", "m_y"]
    cols += ["b", "troubled"]
    order = np.lexsort(tuple(x[:, d] for d in range(dim - 1, -1, -1)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for p in order:
            row = [f"{v:.16e}" for v in x[p]]
            row += [f"{hv[p]:.16e}", f"{hv[p] + bv[p]:.16e}"]
            row += [f"{v:.16e}" for v in uv[p]]
            row += [f"{v:.16e}" for v in mv[p]]
            row += [f"{bv[p]:.16e}", str(flag[p])]
            w.writerow(row)


def _write_vtk_snapshot(state, path, troubled):
    disc = state.disc
    mesh = disc.mesh
    havg = disc.cell_averages(state.h)
    bavg = disc.cell_averages(state.bottom.coeff)
    uavg = disc.cell_averages(state.u)
    mavg = disc.cell_averages(state.m)
    fields = [
        ("h", havg),
        ("h_plus_b", havg + bavg),
        ("u", uavg[:, 0]),
        ("v", uavg[:, 1]),
        ("m", mavg[:, 0]),
        ("m_y", mavg[:, 1]),
        ("b", bavg),
        ("troubled", troubled.astype(float)),
    ]
    nE = mesh.n_elements
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nswedg snapshot\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(mesh.vertices)} double\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.16e} {v[1]:.16e} 0.0\n")
        fh.write(f"CELLS {nE} {4 * nE}\n")
        for tri in mesh.elem_vertices:
            fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
        fh.write(f"CELL_TYPES {nE}\n")
        fh.write("5\n" * nE)
        fh.write(f"CELL_DATA {nE}\n")
        for name, vals in fields:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in vals:
                fh.write(f"{v:.16e}\n")


def _write_diagnostics(diag, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "dt", "entropy", "mass", "momentum",
                    "troubled", "dry", "velocity_limited"])
        for row in zip(diag.t, diag.dt, diag.entropy, diag.mass, diag.momentum,
                       diag.troubled, diag.dry, diag.velocity_limited):
            w.writerow([f"{row[0]:.16e}", f"{row[1]:.16e}", f"{row[2]:.16e}",
                        f"{row[3]:.16e}", f"{row[4]:.16e}", row[5], row[6],
                        row[7]])


def _write_manifest(config, prob, path, extra=None):
    data = asdict(config)
    data["resolved_n"] = prob.disc.mesh.n_elements
    data["resolved_cfl"] = prob.control.cfl
    data["resolved_tol"] = prob.limiter_cfg.tol
    data["resolved_eps_d"] = prob.limiter_cfg.eps_d
    data["resolved_v_max"] = prob.limiter_cfg.v_max
    data["g"] = prob.case.g
    data["t_final"] = prob.case.t_final
    data["reconstruct"] = prob.reconstruct
    data["fast_path"] = bool(prob.disc.fast)
    data.update(extra or {})
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


# -- run -----------------------------------------------------------------------


def cmd_run(config):
    prob = _build_problem(config)
    os.makedirs(config.outdir, exist_ok=True)
    case = prob.case
    times = tuple(config.output_times) or tuple(case.output_times)

    snaps = []

    def on_output(state):
        stem = f"{case.name}_t{state.t:.6f}".replace(".", "p")
        for fmt in config.formats:
            fname = os.path.join(config.outdir, f"{stem}.{fmt}")
            write_snapshot(state, fname, fmt, troubled_mask(prob, state))
            snaps.append(fname)

    on_output(prob.state)
    status = EXIT_OK
    try:
        state, diag = ig.adaptive_advance(
            prob.state, case.t_final, prob.control, prob.bc,
            ws=prob.workspace, cfg=prob.limiter_cfg,
            plain=not case.use_limiters, output_times=times,
            on_output=on_output, reconstruct=prob.reconstruct,
        )
    except ig.StepFailure as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        diag = exc.diagnostics
        status = EXIT_ABORT
    _write_diagnostics(diag, os.path.join(config.outdir, f"{case.name}_diag.csv"))
    _write_manifest(config, prob,
                    os.path.join(config.outdir, f"{case.name}_manifest.json"),
                    extra={"snapshots": snaps, "steps": len(diag.dt) - 1,
                           "retries": diag.retries, "status": status})
    if status == EXIT_OK:
        print(f"{case.name}: {len(diag.dt) - 1} steps to t={case.t_final}, "
              f"mass {diag.mass[-1]:.12e}, entropy {diag.entropy[-1]:.12e}")
    return status


# -- convergence ---------------------------------------------------------------


def _locate_reference_cells(ref_disc, points):
    """Element ids of `points` (P, dim) in the nested structured reference
    mesh, plus their reference coordinates."""
    mesh = ref_disc.mesh
    meta = mesh.structured
    if meta is None:
        raise ConfigError("convergence requires structured (nested) meshes")
    if meta["kind"] == "interval":
        a, b, n = meta["a"], meta["b"], meta["n"]
        eid = np.clip(((points[:, 0] - a) / (b - a) * n).astype(int), 0, n - 1)
    else:
        nx, ny = meta["nx"], meta["ny"]
        (x0, x1), (y0, y1) = meta["bounds"]
        fx = (points[:, 0] - x0) / (x1 - x0) * nx
        fy = (points[:, 1] - y0) / (y1 - y0) * ny
        i = np.clip(fx.astype(int), 0, nx - 1)
        j = np.clip(fy.astype(int), 0, ny - 1)
        # each rectangle splits along the lower-left/upper-right diagonal:
        # local fy <= fx selects the first (lower) triangle
        upper = (fy - j) > (fx - i)
        eid = 2 * (i * ny + j) + upper.astype(int)
    dx = points - ref_disc.origin[eid]
    xi = np.einsum("psd,pd->ps", ref_disc.Jinv[eid], dx)
    return eid, xi


def _sample_field(ref_disc, coeff, eid, xi):
    """Point values of a reference DG field at reference coordinates xi inside
    elements eid."""
    V = ref_disc.basis.values(xi)                          # (P, nb)
    scale = 1.0 / ref_disc.sqrtj[eid]
    if coeff.ndim == 2:
        return np.einsum("pi,pi->p", V, coeff[eid]) * scale
    out = np.einsum("pi,pid->pd", V, coeff[eid])
    return out * scale[:, None]


def reference_errors(prob, state, ref_disc, ref_state):
    """L2 errors of h, u (componentwise), m against a reference solution on a
    nested finer mesh, measured with the coarse quadrature rule."""
    disc = prob.disc
    dim = disc.dim
    pts = disc.x_vol.reshape(-1, dim)
    eid, xi = _locate_reference_cells(ref_disc, pts)
    errs = {}
    shape = (disc.mesh.n_elements, disc.nq)
    for name, coarse, ref in (
        ("h", state.h, ref_state.h), ("u", state.u, ref_state.u),
        ("m", state.m, ref_state.m),
    ):
        cv = disc.eval_volume(coarse)
        rv = _sample_field(ref_disc, ref, eid, xi)
        if coarse.ndim == 2:
            errs[name] = float(disc.l2_norm(cv - rv.reshape(shape)))
        else:
            rv = rv.reshape(shape + (dim,))
            for d in range(dim):
                key = name if dim == 1 else name + ("xy"[d])
                errs[key] = float(disc.l2_norm(cv[..., d] - rv[..., d]))
    return errs


def _advance_problem(prob):
    state, diag = ig.adaptive_advance(
        prob.state, prob.case.t_final, prob.control, prob.bc,
        ws=prob.workspace, cfg=prob.limiter_cfg,
        plain=not prob.case.use_limiters, reconstruct=prob.reconstruct,
    )
    return state, diag


def convergence_table(case_name, resolutions, degree=2, reference_n=None,
                      cfl=None, fast=None):
    """Run a case at each resolution plus the reference; return rows of
    {n, errors..., rates...}."""
    case = make_case(case_name)
    ref_n = reference_n or case.reference_n
    if ref_n is None:
        raise ConfigError(f"case {case_name} has no reference resolution")
    for n in resolutions:
        if ref_n % n:
            raise ConfigError(
                f"resolution {n} does not nest in reference {ref_n}"
            )
    ref_prob = setup(make_case(case_name), n=ref_n, degree=degree, cfl=cfl)
    if fast is not None:
        ref_prob.disc.fast = bool(fast)
    ref_state, _ = _advance_problem(ref_prob)

    rows = []
    for n in sorted(resolutions):
        prob = setup(make_case(case_name), n=n, degree=degree, cfl=cfl)
        if fast is not None:
            prob.disc.fast = bool(fast)
        state, _ = _advance_problem(prob)
        rows.append({"n": n, **reference_errors(prob, state, ref_prob.disc,
                                                ref_state)})
    keys = [k for k in rows[0] if k != "n"]
    for prev, cur in zip(rows, rows[1:]):
        ratio = np.log(cur["n"] / prev["n"])
        for k in keys:
            if prev[k] > 0 and cur[k] > 0:
                cur["rate_" + k] = np.log(prev[k] / cur[k]) / ratio
    return rows


def _format_table(rows):
    keys = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    lines = ["  ".join(f"{k:>12s}" for k in keys)]
    for row in rows:
        cells = []
        for k in keys:
            v = row.get(k)
            if v is None:
                cells.append(" " * 12)
            elif k == "n":
                cells.append(f"{v:>12d}")
            elif k.startswith("rate_"):
                cells.append(f"{v:>12.2f}")
            else:
                cells.append(f"{v:>12.4e}")
        lines.append("  ".join(cells))
    return "\n".join(lines)


def cmd_convergence(config, resolutions, reference_n):
    rows = convergence_table(
        config.case, resolutions, degree=config.degree,
        reference_n=reference_n, cfl=config.cfl, fast=config.fast,
    )
    os.makedirs(config.outdir, exist_ok=True)
    path = os.path.join(config.outdir, f"{config.case}_convergence.csv")
    keys = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in keys})
    print(_format_table(rows))
    print(f"written {path}")
    return EXIT_OK


# -- describe ------------------------------------------------------------------


def cmd_describe(case_name):
    if case_name not in CASE_NAMES:
        raise ConfigError(f"unknown case {case_name!r}")
    case = make_case(case_name)
    print(f"case       : {case.name}")
    print(f"dimension  : {case.dim}")
    print(f"g          : {case.g}")
    print(f"t_final    : {case.t_final}")
    print(f"default N  : {case.default_n}")
    print(f"reference N: {case.reference_n}")
    print(f"cfl        : {case.cfl or (0.1 if case.dim == 1 else 0.05)}")
    print(f"bottom     : {'continuous' if case.bottom_continuous else 'discontinuous (hydrostatic reconstruction)'}")
    print(f"boundaries : {'periodic' if case.periodic else (case.bc or 'wall')}")
    print(f"limiters   : {'on' if case.use_limiters else 'off'} "
          f"(tol={case.tol}, eps_d={case.eps_d}, v_max={case.v_max})")
    if case.output_times:
        print(f"outputs at : {list(case.output_times)}")
    if case.notes:
        print(f"notes      : {case.notes}")
    return EXIT_OK


# -- verify --------------------------------------------------------------------


def _random_state(disc, bottom, g, rng):
    nE, nb = disc.mesh.n_elements, disc.nb
    h = disc.project_function(lambda x: 4.0 + np.sin(3 * x[..., 0]))
    h += 0.2 * rng.standard_normal((nE, nb)) / (1 + np.arange(nb))
    m = 0.5 * rng.standard_normal((nE, nb, disc.dim)) / (1 + np.arange(nb))[:, None]
    u = op.velocity_update(disc, h, m)
    return op.SimState(disc, h, u, m, bottom, g)


def cmd_verify(config):
    rng = np.random.default_rng(config.seed)
    checks = []

    def check(name, value, tol):
        ok = value <= tol
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {value:.3e} (tol {tol:.1e})")

    prob = _build_problem(config)
    disc, mesh = prob.disc, prob.disc.mesh

    # mesh invariants
    vol = float(np.sum(mesh.elem_measure))
    if mesh.structured and mesh.structured["kind"] == "interval":
        exact = mesh.structured["b"] - mesh.structured["a"]
    elif mesh.structured:
        (x0, x1), (y0, y1) = mesh.structured["bounds"]
        exact = (x1 - x0) * (y1 - y0)
    else:
        exact = vol
    check("mesh volume closure", abs(vol - exact) / max(1.0, abs(exact)), 1e-12)
    check("facet normals unit", float(np.abs(
        np.linalg.norm(mesh.facet_normal, axis=1) - 1.0).max()), 1e-13)

    # well-balance: lake at rest over the case bottom
    bot = prob.state.bottom
    eta = float(disc.cell_averages(bot.coeff).max() + 2.0)
    h_rest = disc.project_function(lambda x: np.full(x.shape[:-1], eta)) - bot.coeff
    u0 = np.zeros((mesh.n_elements, disc.nb, disc.dim))
    res = op.assemble_residuals(disc, h_rest, u0, bot, prob.case.g, prob.bc,
                                reconstruct=prob.reconstruct)
    check("lake-at-rest mass residual", float(np.abs(res.A).max()), 1e-10)
    check("lake-at-rest momentum residual", float(np.abs(res.BC).max()), 1e-9)

    # entropy identity on a random state (continuous-bottom form)
    st = _random_state(disc, bot, prob.case.g, rng)
    rate = op.entropy_rate(disc, st.h, st.u, st.m, bot, st.g, prob.bc)
    if bot.continuous and not mesh.boundary_mask.any():
        diss = op.entropy_dissipation(disc, st.h, st.u, bot, st.g, prob.bc)
        scale = max(1.0, abs(rate))
        check("entropy identity", abs(rate - diss) / scale, 1e-10)

    # short run: conservation and entropy decay
    try:
        state, diag = ig.adaptive_advance(
            prob.state, min(prob.case.t_final, 50 * ig.compute_dt(
                prob.state, prob.control, prob.bc)),
            prob.control, prob.bc, ws=prob.workspace, cfg=prob.limiter_cfg,
            plain=not prob.case.use_limiters, reconstruct=prob.reconstruct)
    except ig.StepFailure as exc:
        print(f"FAIL  short run aborted: {exc}")
        checks.append(False)
    else:
        drift = abs(diag.mass[-1] - diag.mass[0]) / max(1.0, abs(diag.mass[0]))
        check("mass conservation (50 steps)", drift, 1e-12)
        hbar_min = float(disc.cell_averages(state.h).min())
        check("height averages nonnegative", max(0.0, -hbar_min), 1e-12)

    if all(checks):
        print("all checks passed")
        return EXIT_OK
    print("verification failed", file=sys.stderr)
    return EXIT_ABORT


# -- entry point -----------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--case", help="benchmark case name")
    p.add_argument("--degree", type=int, help="polynomial degree k")
    p.add_argument("-n", "--n", type=int, help="mesh resolution")
    p.add_argument("--cfl", type=float)
    p.add_argument("--tol", type=float, help="troubled-cell indicator tolerance")
    p.add_argument("--eps-d", dest="eps_d", type=float, help="dry-cell threshold")
    p.add_argument("--v-max", dest="v_max", type=float, help="velocity cap")
    p.add_argument("--t-final", dest="t_final", type=float)
    p.add_argument("--outdir", help="output directory")
    p.add_argument("--seed", type=int, help="seed for randomized checks")
    p.add_argument("--threads", type=int, help="solver thread cap")
    p.add_argument("--fast", action=argparse.BooleanOptionalAction,
                   default=None, help="use compiled kernels (default: auto)")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="swedg",
        description="Velocity-based entropy-stable DG shallow water solver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    _add_common(p_run)
    p_run.add_argument("--output-times", help="comma-separated snapshot times")
    p_run.add_argument("--format", action="append", choices=("csv", "vtk"),
                       help="snapshot format (repeatable)")

    p_conv = sub.add_parser("convergence", help="run a convergence study")
    _add_common(p_conv)
    p_conv.add_argument("--resolutions", required=True,
                        help="comma-separated mesh resolutions")
    p_conv.add_argument("--reference-n", dest="reference_n", type=int,
                        help="override the case's reference resolution")

    p_desc = sub.add_parser("describe", help="print a case's parameters")
    p_desc.add_argument("case", nargs="?", help="case name (default: list all)")

    p_ver = sub.add_parser("verify", help="run the runtime invariant suite")
    _add_common(p_ver)

    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads >= 1:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))

    try:
        if args.command == "describe":
            if args.case is None:
                print("\n".join(CASE_NAMES))
                return EXIT_OK
            return cmd_describe(args.case)
        config = _resolve_config(args)
        if args.command == "run":
            return cmd_run(config)
        if args.command == "convergence":
            resolutions = [int(s) for s in args.resolutions.split(",")]
            return cmd_convergence(config, resolutions, args.reference_n)
        if args.command == "verify":
            return cmd_verify(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
