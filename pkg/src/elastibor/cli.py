"""Command line driver: configured solves, kernel self-tests, convergence sweeps.

Subcommands:

    elastibor solve CONFIG [--output-dir DIR] [--workers N] [-v]
    elastibor kernels-selftest [--kappa K --modes M --targets T ...]
    elastibor convergence CONFIG [--output-dir DIR] [--workers N] [-v]

CONFIG is a TOML file with sections [geometry] (name, n_panels, order,
corner_depth), [material] (kappa_p, kappa_s, mu), [incident] (kind "point"
or "plane", location / direction, polarization, threshold, m_cap), [solver]
(kernel_tol, workers, backend "certified" or "tables"), [output] (directory,
near_radius, near_count, far_n_theta, far_n_phi, probe_radius, probe_count)
and, for sweeps, [convergence] (panel_counts).

``solve`` writes densities.csv, near_field.csv, far_field.csv and
report.json (kappa_p, kappa_s, n_f, n_pts, t_matgen, t_solve, t_syn,
e_error; e_error is null for plane waves) into the output directory; point
source runs add error_map.csv with the pointwise probe mismatch.  CSV
values carry full double precision, so rerunning a config reproduces the
numeric outputs byte for byte; only the timings in report.json move.

Exit codes: 0 success, 2 bad configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .geometry import GeneratingCurve, build_mesh, make_builtin_curve
from .incident import IncidentField, fundamental_tensor
from .modal_kernels import g23_from_g1, primitive_block_batch
from .oracles import modal_oracle, modal_oracle_weighted, relative_mode_errors
from .postprocess import extinction_error, far_field, probe_sphere, scattered_field
from .quadrature import LogRuleTable
from .solver import ScatteringSolver, synthesize

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

BUILTIN_NAMES = ("sphere", "ellipsoid", "starfish", "droplet")

# self-test grid: one source a fixed distance from each target plus four
# spread around the curve, so both kernel branches are always exercised
GRID_NEAR_DIST = 1e-4
GRID_SHIFTS = (0.03, 0.11, 0.23, 0.41)

SELFTEST_FAR_TOL = 1e-10
SELFTEST_NEAR_TOL = 1e-8
SELFTEST_REC_TOL = 1e-13


@dataclass(frozen=True)
class RunConfig:
    """One configured run: geometry, material, incident field, outputs."""

    curve_name: str
    n_panels: int
    order: int
    corner_depth: int
    kappa_p: float
    kappa_s: float
    mu: float
    kind: str
    polarization: tuple
    location: tuple | None
    direction: tuple | None
    threshold: float
    m_cap: int
    kernel_tol: float
    workers: int
    backend: str
    out_dir: str
    near_radius: float
    near_count: int
    far_n_theta: int
    far_n_phi: int
    probe_radius: float
    probe_count: int
    panel_counts: tuple | None = None

    def __post_init__(self):
        for name in (
            "n_panels",
            "order",
            "m_cap",
            "workers",
            "near_count",
            "far_n_theta",
            "far_n_phi",
            "probe_count",
        ):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not isinstance(self.corner_depth, int) or self.corner_depth < 0:
            raise ValueError("corner_depth must be a non-negative integer")
        for name in ("threshold", "kernel_tol"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        for name in ("kappa_p", "kappa_s", "mu", "near_radius", "probe_radius"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.kind not in ("point", "plane"):
            raise ValueError("incident.kind must be 'point' or 'plane'")
        if self.kind == "point" and self.location is None:
            raise ValueError("incident.location is required for a point source")
        if self.kind == "plane" and self.direction is None:
            raise ValueError("incident.direction is required for a plane wave")
        if self.backend not in ("certified", "tables"):
            raise ValueError("solver.backend must be 'certified' or 'tables'")
        if self.panel_counts is not None and (
            len(self.panel_counts) == 0
            or any(not isinstance(c, int) or c < 1 for c in self.panel_counts)
        ):
            raise ValueError("convergence.panel_counts must be positive integers")


_REQUIRED = object()


def _get(cfg, section, key, default=_REQUIRED):
    try:
        return cfg[section][key]
    except (KeyError, TypeError):
        if default is not _REQUIRED:
            return default
        raise ValueError(f"config key {section}.{key} is required") from None


def _num(cfg, section, key, default=_REQUIRED):
    v = _get(cfg, section, key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{section}.{key} must be a number")
    return float(v)


def _int(cfg, section, key, default=_REQUIRED):
    v = _get(cfg, section, key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"{section}.{key} must be an integer")
    return v


def _str(cfg, section, key, default=_REQUIRED):
    v = _get(cfg, section, key, default)
    if not isinstance(v, str):
        raise ValueError(f"{section}.{key} must be a string")
    return v


def _vec3(cfg, section, key, default=_REQUIRED):
    v = _get(cfg, section, key, default)
    if v is None:
        return None
    ok = (
        isinstance(v, list)
        and len(v) == 3
        and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)
    )
    if not ok:
        raise ValueError(f"{section}.{key} must be a list of three numbers")
    return tuple(float(c) for c in v)


def load_config(path: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    with open(path, "rb") as fh:
        try:
            cfg = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            # the decoder message carries the line and column
            raise ValueError(f"{path}: {e}") from None
    counts = _get(cfg, "convergence", "panel_counts", None)
    if counts is not None:
        if not isinstance(counts, list):
            raise ValueError("convergence.panel_counts must be a list of integers")
        counts = tuple(counts)
    return RunConfig(
        curve_name=_str(cfg, "geometry", "name"),
        n_panels=_int(cfg, "geometry", "n_panels"),
        order=_int(cfg, "geometry", "order"),
        corner_depth=_int(cfg, "geometry", "corner_depth", 0),
        kappa_p=_num(cfg, "material", "kappa_p"),
        kappa_s=_num(cfg, "material", "kappa_s"),
        mu=_num(cfg, "material", "mu", 1.0),
        kind=_str(cfg, "incident", "kind"),
        polarization=_vec3(cfg, "incident", "polarization"),
        location=_vec3(cfg, "incident", "location", None),
        direction=_vec3(cfg, "incident", "direction", None),
        threshold=_num(cfg, "incident", "threshold", 1e-12),
        m_cap=_int(cfg, "incident", "m_cap", 200),
        kernel_tol=_num(cfg, "solver", "kernel_tol", 1e-12),
        workers=_int(cfg, "solver", "workers", 1),
        backend=_str(cfg, "solver", "backend", "certified"),
        out_dir=_str(cfg, "output", "directory", "."),
        near_radius=_num(cfg, "output", "near_radius", 4.0),
        near_count=_int(cfg, "output", "near_count", 400),
        far_n_theta=_int(cfg, "output", "far_n_theta", 16),
        far_n_phi=_int(cfg, "output", "far_n_phi", 8),
        probe_radius=_num(cfg, "output", "probe_radius", 4.0),
        probe_count=_int(cfg, "output", "probe_count", 400),
        panel_counts=counts,
    )


def _setup(cfg: RunConfig):
    """Mesh and incident field for a config; checks the output spheres clear."""
    curve = make_builtin_curve(cfg.curve_name)
    mesh = build_mesh(curve, cfg.n_panels, cfg.order, cfg.corner_depth)
    if cfg.kind == "point":
        field = IncidentField.point_source(
            cfg.location, cfg.polarization, cfg.kappa_p, cfg.kappa_s, cfg.mu
        )
    else:
        field = IncidentField.plane(
            cfg.direction, cfg.polarization, cfg.kappa_p, cfg.kappa_s
        )
    reach = float(np.hypot(mesh.frame.r, mesh.frame.z).max())
    checks = [("output.near_radius", cfg.near_radius)]
    if cfg.kind == "point":
        checks.append(("output.probe_radius", cfg.probe_radius))
    for label, radius in checks:
        if radius <= reach:
            raise ValueError(
                f"{label} = {radius:g} does not clear the surface "
                f"(points reach {reach:.3g} from the origin)"
            )
    return mesh, field


def _solve_once(mesh, field, cfg: RunConfig):
    table = LogRuleTable() if cfg.backend == "tables" else None
    solver = ScatteringSolver(
        mesh,
        cfg.kappa_p,
        cfg.kappa_s,
        kernel_tol=cfg.kernel_tol,
        threshold=cfg.threshold,
        m_cap=cfg.m_cap,
        workers=cfg.workers,
        log_table=table,
    )
    densities, report = solver.solve(field)
    # stamps t_syn on the report
    synthesize(densities, 2 * densities.m_max + 1, report)
    return densities, report


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.16e}"
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_densities(path, densities):
    mesh = densities.mesh
    header = [
        "m",
        "node",
        "t",
        "r",
        "z",
        "re_sigma",
        "im_sigma",
        "re_j_t",
        "im_j_t",
        "re_j_q",
        "im_j_q",
    ]

    def rows():
        M = densities.m_max
        for i in range(2 * M + 1):
            for k in range(mesh.n_nodes):
                s = densities.sigma[i, k]
                jt = densities.j_t[i, k]
                jq = densities.j_q[i, k]
                yield (
                    i - M,
                    k,
                    float(mesh.t[k]),
                    float(mesh.frame.r[k]),
                    float(mesh.frame.z[k]),
                    float(s.real),
                    float(s.imag),
                    float(jt.real),
                    float(jt.imag),
                    float(jq.real),
                    float(jq.imag),
                )

    _write_csv(path, header, rows())


def _write_near_field(path, densities, radius, count):
    pts, _ = probe_sphere(radius, count)
    u = scattered_field(densities, pts)
    header = ["x", "y", "z", "re_u1", "re_u2", "re_u3", "im_u1", "im_u2", "im_u3"]
    rows = (
        tuple(float(c) for c in pts[k])
        + tuple(float(c) for c in u[k].real)
        + tuple(float(c) for c in u[k].imag)
        for k in range(count)
    )
    _write_csv(path, header, rows)


def _write_error_map(path, densities, field, radius, count):
    """Pointwise probe mismatch rows; returns the weighted l2 total.

    The total matches extinction_error up to summation order: both square
    the same per-point euclidean mismatch against Phi(x, y0) p.
    """
    pts, w = probe_sphere(radius, count)
    u = scattered_field(densities, pts)
    tensor = fundamental_tensor(pts, field.y0, field.kappa_p, field.kappa_s, field.mu)
    err = np.sqrt((np.abs(u - tensor @ field.p) ** 2).sum(axis=1))
    header = ["x", "y", "z", "error"]
    rows = (
        tuple(float(c) for c in pts[k]) + (float(err[k]),) for k in range(count)
    )
    _write_csv(path, header, rows)
    return float(np.sqrt(w * np.sum(err**2)))


def _write_far_field(path, densities, n_theta, n_phi):
    theta = np.pi * (np.arange(n_theta) + 0.5) / n_theta
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    pattern = far_field(densities, theta, phi)
    header = ["theta", "phi"]
    for tag in ("ap", "as"):
        for part in ("re", "im"):
            header += [f"{part}_{tag}{c}" for c in "123"]

    def rows():
        for i in range(n_theta):
            for j in range(n_phi):
                ap = pattern.a_p[i, j]
                as_ = pattern.a_s[i, j]
                yield (
                    float(theta[i]),
                    float(phi[j]),
                    *(float(c) for c in ap.real),
                    *(float(c) for c in ap.imag),
                    *(float(c) for c in as_.real),
                    *(float(c) for c in as_.imag),
                )

    _write_csv(path, header, rows())


def _report_row(cfg: RunConfig, report, e_error):
    return {
        "kappa_p": cfg.kappa_p,
        "kappa_s": cfg.kappa_s,
        "n_f": int(report.n_f),
        "n_pts": int(report.n_pts),
        "t_matgen": float(report.t_matgen),
        "t_solve": float(report.t_solve),
        "t_syn": float(report.t_syn),
        "e_error": None if e_error is None else float(e_error),
    }


def _report_line(row) -> str:
    e = "-" if row["e_error"] is None else f"{row['e_error']:.3e}"
    return (
        f"kappa_p={row['kappa_p']:g} kappa_s={row['kappa_s']:g} "
        f"N_f={row['n_f']} N_pts={row['n_pts']} "
        f"T_matgen={row['t_matgen']:.2f}s T_solve={row['t_solve']:.2f}s "
        f"T_syn={row['t_syn']:.3f}s E_error={e}"
    )


def _configure(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.output_dir is not None:
        cfg = replace(cfg, out_dir=args.output_dir)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    return cfg


def cmd_solve(args) -> int:
    try:
        cfg = _configure(args)
        mesh, field = _setup(cfg)
        os.makedirs(cfg.out_dir, exist_ok=True)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.verbose:
            print(f"mesh: {mesh.n_nodes} nodes on {cfg.curve_name}")
        densities, report = _solve_once(mesh, field, cfg)
        if args.verbose:
            print(f"solved {2 * densities.m_max + 1} modes")
        _write_densities(os.path.join(cfg.out_dir, "densities.csv"), densities)
        _write_near_field(
            os.path.join(cfg.out_dir, "near_field.csv"),
            densities,
            cfg.near_radius,
            cfg.near_count,
        )
        _write_far_field(
            os.path.join(cfg.out_dir, "far_field.csv"),
            densities,
            cfg.far_n_theta,
            cfg.far_n_phi,
        )
        e_error = None
        if cfg.kind == "point":
            e_error = _write_error_map(
                os.path.join(cfg.out_dir, "error_map.csv"),
                densities,
                field,
                cfg.probe_radius,
                cfg.probe_count,
            )
            if not np.isfinite(e_error):
                raise RuntimeError(f"extinction error is not finite: {e_error}")
        row = _report_row(cfg, report, e_error)
        with open(os.path.join(cfg.out_dir, "report.json"), "w") as fh:
            json.dump(row, fh, indent=2)
            fh.write("\n")
        if args.verbose:
            print(f"artifacts in {cfg.out_dir}")
        print(_report_line(row))
        return 0
    except (RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


def cmd_convergence(args) -> int:
    try:
        cfg = _configure(args)
        if cfg.panel_counts is None:
            raise ValueError("convergence.panel_counts is required")
        if cfg.kind != "point":
            raise ValueError("convergence sweeps need a point-source config")
        curve = make_builtin_curve(cfg.curve_name)
        meshes = [
            build_mesh(curve, n, cfg.order, cfg.corner_depth)
            for n in cfg.panel_counts
        ]
        field = IncidentField.point_source(
            cfg.location, cfg.polarization, cfg.kappa_p, cfg.kappa_s, cfg.mu
        )
        reach = max(
            float(np.hypot(m.frame.r, m.frame.z).max()) for m in meshes
        )
        if cfg.probe_radius <= reach:
            raise ValueError(
                f"output.probe_radius = {cfg.probe_radius:g} does not clear "
                f"the surface (points reach {reach:.3g} from the origin)"
            )
        os.makedirs(cfg.out_dir, exist_ok=True)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = []
        for n, mesh in zip(cfg.panel_counts, meshes):
            densities, report = _solve_once(mesh, field, cfg)
            e = extinction_error(densities, field, cfg.probe_radius, cfg.probe_count)
            rows.append(
                (
                    n,
                    int(report.n_pts),
                    int(report.n_f),
                    float(e),
                    float(report.t_matgen),
                    float(report.t_solve),
                )
            )
            print(
                f"n_panels={n} N_pts={report.n_pts} N_f={report.n_f} "
                f"E_error={e:.3e}"
            )
        _write_csv(
            os.path.join(cfg.out_dir, "convergence.csv"),
            ["n_panels", "n_pts", "n_f", "e_error", "t_matgen", "t_solve"],
            rows,
        )
        return 0
    except (RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


def pair_grid(curve: GeneratingCurve, n_targets: int = 10):
    """Deterministic on-surface (target, source) pairs for kernel checks.

    Each of ``n_targets`` interior parameters gets one source roughly
    GRID_NEAR_DIST away along the curve plus one per entry of GRID_SHIFTS
    wrapped around the parameter range.  Returns flat (r_t, z_t, r_s, z_s)
    arrays of 5 * n_targets pairs.
    """
    span = curve.t1 - curve.t0
    u = (np.arange(n_targets) + 0.5) / n_targets
    t = curve.t0 + span * u
    speed = np.hypot(curve.dr(t), curve.dz(t))
    src = [t + GRID_NEAR_DIST / speed]
    for f in GRID_SHIFTS:
        src.append(curve.t0 + span * ((u + f) % 1.0))
    s = np.stack(src, axis=1).ravel()
    tt = np.repeat(t, len(src))
    return curve.r(tt), curve.z(tt), curve.r(s), curve.z(s)


def kernel_selftest(
    curve: GeneratingCurve,
    kappa: float = 2.0,
    m_max: int = 8,
    n_targets: int = 4,
    epsabs: float = 1e-13,
) -> dict:
    """Max relative deviation of the fast kernels from slow quadrature.

    The plain and trig-weighted kernel families are compared per branch
    against adaptive oscillatory quadrature on the ``pair_grid`` pairs.  The
    half-sum / half-difference relation producing the weighted families from
    the plain one is certified on the far pairs, the regime where the
    reference quadrature itself resolves at that level; the relation carries
    no pair dependence, and the near-branch values are covered by the direct
    comparison.
    """
    rt, zt, rs, zs = pair_grid(curve, n_targets)
    blocks = primitive_block_batch(rt, zt, rs, zs, kappa, m_max)
    g2, g3 = g23_from_g1(blocks.g)
    out = {
        "geometry": curve.name,
        "far": 0.0,
        "near": 0.0,
        "recurrence": 0.0,
        "n_far": 0,
        "n_near": 0,
    }
    lo_idx = np.abs(np.arange(m_max + 1) - 1)
    for i in range(rt.size):
        pair = (rt[i], zt[i], rs[i], zs[i])
        want1 = np.array(
            [modal_oracle(*pair, kappa, m, "g", epsabs) for m in range(m_max + 2)]
        )
        want2 = np.array(
            [
                modal_oracle_weighted(*pair, kappa, m, "cos", epsabs)
                for m in range(m_max + 1)
            ]
        )
        # the sin-weighted family vanishes identically at m = 0
        want3 = np.array(
            [0j]
            + [
                modal_oracle_weighted(*pair, kappa, m, "sin", epsabs)
                for m in range(1, m_max + 1)
            ]
        )
        checks = [(blocks.g[i], want1), (g2[i], want2)]
        if m_max >= 1:
            checks.append((g3[i], want3))
        dev = max(relative_mode_errors(a, b).max() for a, b in checks)
        if blocks.branch[i] == "F":
            out["far"] = max(out["far"], dev)
            out["n_far"] += 1
            hi, lo = want1[1:], want1[lo_idx]
            rec = np.abs(
                np.r_[0.5 * (hi + lo) - want2, -0.5 * (hi - lo) - want3]
            )
            out["recurrence"] = max(
                out["recurrence"], float(rec.max() / np.abs(want1).max())
            )
        else:
            out["near"] = max(out["near"], dev)
            out["n_near"] += 1
    return out


def cmd_kernels_selftest(args) -> int:
    if args.targets < 1 or args.modes < 0 or args.kappa <= 0:
        print(
            "error: need targets >= 1, modes >= 0 and kappa > 0",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    names = args.geometry or list(BUILTIN_NAMES)
    worst = {"far": 0.0, "near": 0.0, "recurrence": 0.0}
    for name in names:
        curve = make_builtin_curve(name)
        res = kernel_selftest(
            curve, kappa=args.kappa, m_max=args.modes, n_targets=args.targets
        )
        print(
            f"{name:<10} pairs={res['n_far']}F+{res['n_near']}N  "
            f"far {res['far']:.2e}  near {res['near']:.2e}  "
            f"recurrence {res['recurrence']:.2e}"
        )
        for key in worst:
            worst[key] = max(worst[key], res[key])
    print(
        f"max deviations: far {worst['far']:.2e} (tol {args.far_tol:.0e}), "
        f"near {worst['near']:.2e} (tol {args.near_tol:.0e}), "
        f"recurrence {worst['recurrence']:.2e} (tol {args.rec_tol:.0e})"
    )
    if (
        worst["far"] > args.far_tol
        or worst["near"] > args.near_tol
        or worst["recurrence"] > args.rec_tol
    ):
        print("error: kernel deviation exceeds tolerance", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="elastibor",
        description="Elastic scattering from rigid axisymmetric obstacles.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sol = sub.add_parser("solve", help="run one configured scattering solve")
    sol.add_argument("config", help="TOML run configuration")
    sol.add_argument("--output-dir", default=None, help="override output.directory")
    sol.add_argument("--workers", type=int, default=None, help="override solver.workers")
    sol.add_argument("-v", "--verbose", action="store_true")
    sol.set_defaults(func=cmd_solve)

    ker = sub.add_parser(
        "kernels-selftest",
        help="compare the fast modal kernels against slow quadrature",
    )
    ker.add_argument("--kappa", type=float, default=2.0)
    ker.add_argument("--modes", type=int, default=8)
    ker.add_argument("--targets", type=int, default=4, help="targets per geometry")
    ker.add_argument(
        "--geometry",
        action="append",
        choices=BUILTIN_NAMES,
        help="restrict to a geometry (repeatable)",
    )
    ker.add_argument("--far-tol", type=float, default=SELFTEST_FAR_TOL)
    ker.add_argument("--near-tol", type=float, default=SELFTEST_NEAR_TOL)
    ker.add_argument("--rec-tol", type=float, default=SELFTEST_REC_TOL)
    ker.set_defaults(func=cmd_kernels_selftest)

    con = sub.add_parser(
        "convergence", help="panel-count sweep of the extinction error"
    )
    con.add_argument("config", help="TOML run configuration with [convergence]")
    con.add_argument("--output-dir", default=None, help="override output.directory")
    con.add_argument("--workers", type=int, default=None, help="override solver.workers")
    con.add_argument("-v", "--verbose", action="store_true")
    con.set_defaults(func=cmd_convergence)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
