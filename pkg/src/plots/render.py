"""Render figures from solver CSV artifacts.

Three figure kinds, one per artifact:

    near-hemisphere   near_field.csv   Im u_1 on the upper half of the
                                       probe sphere, seen from above
    far-pattern       far_field.csv    Im(a_p1 + a_s1) over the (theta, phi)
                                       direction grid
    error-map         error_map.csv    pointwise probe mismatch on a log
                                       color scale, unrolled to a
                                       (longitude, height) rectangle

The loaders only parse and validate; they never call the solver.  An
axisymmetric run (source and polarization on the z axis) produces far-field
amplitude magnitudes that do not depend on phi, and ``load_far_field``
reports the worst relative variation along each theta row so callers can
check that before trusting a fixture.
"""

import argparse
import csv
import sys
from dataclasses import dataclass, field

import numpy as np

KINDS = ("near-hemisphere", "far-pattern", "error-map")

NEAR_COLUMNS = (
    "x",
    "y",
    "z",
    "re_u1",
    "re_u2",
    "re_u3",
    "im_u1",
    "im_u2",
    "im_u3",
)
FAR_COLUMNS = (
    "theta",
    "phi",
    "re_ap1",
    "re_ap2",
    "re_ap3",
    "im_ap1",
    "im_ap2",
    "im_ap3",
    "re_as1",
    "re_as2",
    "re_as3",
    "im_as1",
    "im_as2",
    "im_as3",
)
ERROR_COLUMNS = ("x", "y", "z", "error")

_KIND_COLUMNS = {
    "near-hemisphere": NEAR_COLUMNS,
    "far-pattern": FAR_COLUMNS,
    "error-map": ERROR_COLUMNS,
}

DEFAULT_DPI = 150
DEFAULT_CMAP = {
    "near-hemisphere": "RdBu_r",
    "far-pattern": "viridis",
    "error-map": "magma",
}


def _read_table(path, expected):
    """Header-checked float table; raises ValueError with the column names."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [c.strip() for c in header]
        if header != list(expected):
            missing = [c for c in expected if c not in header]
            extra = [c for c in header if c not in expected]
            parts = [f"{path}: header mismatch"]
            if missing:
                parts.append("missing columns " + ", ".join(missing))
            if extra:
                parts.append("unexpected columns " + ", ".join(extra))
            if not missing and not extra:
                parts.append("columns out of order")
            raise ValueError("; ".join(parts))
        rows = []
        for k, row in enumerate(reader):
            if len(row) != len(expected):
                raise ValueError(
                    f"{path}: row {k + 2} has {len(row)} fields, "
                    f"expected {len(expected)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}: row {k + 2} has a non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    if not np.isfinite(data).all():
        bad = int(np.argwhere(~np.isfinite(data).all(axis=1))[0, 0])
        raise ValueError(f"{path}: non-finite value in row {bad + 2}")
    return data


@dataclass
class NearFieldTable:
    points: np.ndarray
    u: np.ndarray  # complex, shape (n, 3)


@dataclass
class ErrorMapTable:
    points: np.ndarray
    error: np.ndarray

    def __post_init__(self):
        if (self.error < 0).any():
            raise ValueError("error column must be non-negative")


@dataclass
class FarFieldTable:
    theta: np.ndarray
    phi: np.ndarray
    a_p: np.ndarray  # complex, shape (n_theta, n_phi, 3)
    a_s: np.ndarray
    azimuth_variation: float = field(init=False)

    def __post_init__(self):
        # worst relative spread of |a_p| and |a_s| along any theta row; an
        # axisymmetric run must show none, so a fixture that fails this was
        # generated from the wrong config
        mag_p = np.linalg.norm(self.a_p, axis=2)
        mag_s = np.linalg.norm(self.a_s, axis=2)
        peak = max(mag_p.max(), mag_s.max(), 1e-300)
        spread = max(np.ptp(mag_p, axis=1).max(), np.ptp(mag_s, axis=1).max())
        self.azimuth_variation = float(spread / peak)


def load_near_field(path):
    data = _read_table(path, NEAR_COLUMNS)
    return NearFieldTable(points=data[:, :3], u=data[:, 3:6] + 1j * data[:, 6:9])


def load_error_map(path):
    data = _read_table(path, ERROR_COLUMNS)
    return ErrorMapTable(points=data[:, :3], error=data[:, 3])


def load_far_field(path):
    data = _read_table(path, FAR_COLUMNS)
    theta = np.unique(data[:, 0])
    phi = np.unique(data[:, 1])
    nt, npz = theta.size, phi.size
    if nt * npz != data.shape[0]:
        raise ValueError(
            f"{path}: rows do not fill a grid "
            f"({nt} thetas x {npz} phis != {data.shape[0]} rows)"
        )
    # rows are written theta-major; verify rather than assume
    grid = data.reshape(nt, npz, data.shape[1])
    if not (
        np.array_equal(grid[:, 0, 0], theta) and np.array_equal(grid[0, :, 1], phi)
    ):
        raise ValueError(f"{path}: rows are not in theta-major grid order")
    a_p = grid[:, :, 2:5] + 1j * grid[:, :, 5:8]
    a_s = grid[:, :, 8:11] + 1j * grid[:, :, 11:14]
    return FarFieldTable(theta=theta, phi=phi, a_p=a_p, a_s=a_s)


@dataclass
class FigureSpec:
    """What to read, which figure kind to draw, where to write the image."""

    input_path: str
    kind: str
    output_path: str
    cmap: str | None = None
    dpi: int = DEFAULT_DPI

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {', '.join(KINDS)}")
        if not isinstance(self.dpi, int) or self.dpi < 10:
            raise ValueError("dpi must be an integer >= 10")


@dataclass
class RenderResult:
    output_path: str
    n_points: int
    vmin: float
    vmax: float


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _render_near(table, spec, plt):
    keep = table.points[:, 2] >= 0.0
    if not keep.any():
        raise ValueError("no points with z >= 0 in the near-field table")
    pts = table.points[keep]
    vals = table.u[keep, 0].imag
    vmin, vmax = float(vals.min()), float(vals.max())
    lim = max(abs(vmin), abs(vmax), 1e-300)
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    sc = ax.scatter(
        pts[:, 0],
        pts[:, 1],
        c=vals,
        s=14.0,
        cmap=spec.cmap or DEFAULT_CMAP[spec.kind],
        vmin=-lim,
        vmax=lim,
    )
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("Im u_1, upper probe hemisphere")
    fig.colorbar(sc, ax=ax, shrink=0.85)
    return fig, vals.size, vmin, vmax


def _render_far(table, spec, plt):
    disp = (table.a_p[:, :, 0] + table.a_s[:, :, 0]).imag
    vmin, vmax = float(disp.min()), float(disp.max())
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    mesh = ax.pcolormesh(
        table.phi,
        table.theta,
        disp,
        cmap=spec.cmap or DEFAULT_CMAP[spec.kind],
        shading="nearest",
    )
    ax.set_xlabel("phi")
    ax.set_ylabel("theta")
    ax.invert_yaxis()
    ax.set_title("Im(a_p1 + a_s1)")
    fig.colorbar(mesh, ax=ax, shrink=0.9)
    return fig, disp.size, vmin, vmax


def _render_error(table, spec, plt):
    from matplotlib.colors import LogNorm

    err = table.error
    vmin = float(err.min())
    vmax = float(err.max())
    # LogNorm needs a positive range of nonzero width; keep the reported
    # bounds as the data bounds and only pad the norm itself
    lo = max(vmin, vmax * 1e-16, 1e-300)
    hi = vmax if vmax > 0 else 1e-300
    if hi <= lo:
        lo, hi = lo * 0.5, hi * 2.0
    lon = np.arctan2(table.points[:, 1], table.points[:, 0])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    sc = ax.scatter(
        lon,
        table.points[:, 2],
        c=np.maximum(err, lo),
        s=14.0,
        cmap=spec.cmap or DEFAULT_CMAP[spec.kind],
        norm=LogNorm(vmin=lo, vmax=hi),
    )
    ax.set_xlabel("longitude")
    ax.set_ylabel("z")
    ax.set_title("pointwise probe error")
    fig.colorbar(sc, ax=ax, shrink=0.9)
    return fig, err.size, vmin, vmax


def render(spec: FigureSpec) -> RenderResult:
    """Draw the figure a spec describes and write it to spec.output_path.

    Returns the written path together with the point count and the data
    range behind the color scale (for the error map these are the raw data
    bounds, not the padded ones the log norm uses when the data is flat).
    """
    plt = _pyplot()
    if spec.kind == "near-hemisphere":
        fig, n, vmin, vmax = _render_near(load_near_field(spec.input_path), spec, plt)
    elif spec.kind == "far-pattern":
        fig, n, vmin, vmax = _render_far(load_far_field(spec.input_path), spec, plt)
    else:
        fig, n, vmin, vmax = _render_error(load_error_map(spec.input_path), spec, plt)
    fig.savefig(spec.output_path, dpi=spec.dpi, bbox_inches="tight")
    plt.close(fig)
    return RenderResult(output_path=spec.output_path, n_points=n, vmin=vmin, vmax=vmax)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="plots.render",
        description="Render a figure from a solver CSV artifact.",
    )
    parser.add_argument("input", help="CSV artifact written by the solve command")
    parser.add_argument("kind", choices=KINDS, help="figure kind")
    parser.add_argument("output", help="image file to write (png, pdf, ...)")
    parser.add_argument("--cmap", default=None, help="matplotlib colormap name")
    parser.add_argument("--dpi", type=int, default=DEFAULT_DPI)
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(
            input_path=args.input,
            kind=args.kind,
            output_path=args.output,
            cmap=args.cmap,
            dpi=args.dpi,
        )
        result = render(spec)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {result.output_path} ({result.n_points} points, "
        f"range {result.vmin:.3e} .. {result.vmax:.3e})"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
