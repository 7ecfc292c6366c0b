"""Generating curves and panel meshes for axisymmetric surfaces.

A surface of revolution is described by a generating curve
t -> (r(t), z(t)), r >= 0, in the meridian half-plane.  Rotating the curve
about the z axis sweeps the surface; the azimuthal angle is theta.  The
surface frame at a curve point is

    tau1 = (r', z') / |(r', z')|   (meridian tangent)
    tau2 = e_theta                 (azimuthal tangent)
    n    = s * (z', -r') / |(r', z')|

where the per-curve sign s = +/-1 is chosen so n points into the exterior
domain.  Meshes are panels in the parameter t with Gauss-Legendre nodes;
nodes never sit on panel endpoints, so curve endpoints on the axis (r = 0)
carry no nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# dyadic corner refinement splits the corner panel and its neighbour
_CORNER_TOL = 1e-12


@dataclass(frozen=True)
class GeneratingCurve:
    """Parametrized meridian curve with two derivatives.

    Callables accept and return ndarrays.  ``corners`` lists parameter
    values (endpoints allowed) where the curve is not smooth; meshes refine
    dyadically toward them when asked to.
    """

    name: str
    t0: float
    t1: float
    r: Callable[[np.ndarray], np.ndarray]
    z: Callable[[np.ndarray], np.ndarray]
    dr: Callable[[np.ndarray], np.ndarray]
    dz: Callable[[np.ndarray], np.ndarray]
    d2r: Callable[[np.ndarray], np.ndarray]
    d2z: Callable[[np.ndarray], np.ndarray]
    corners: tuple[float, ...] = ()
    interior_z: float | None = None

    def interior_reference(self) -> np.ndarray:
        """A point (0, 0, z_mid) inside the body, used to orient normals."""
        if self.interior_z is not None:
            return np.array([0.0, self.interior_z])
        ts = np.linspace(self.t0, self.t1, 2001)[1:-1]
        zs = self.z(ts)
        return np.array([0.0, 0.5 * (zs.min() + zs.max())])


def _sphere() -> GeneratingCurve:
    return GeneratingCurve(
        name="sphere",
        t0=0.0,
        t1=np.pi,
        r=lambda t: 2.0 * np.sin(t),
        z=lambda t: 2.0 * np.cos(t),
        dr=lambda t: 2.0 * np.cos(t),
        dz=lambda t: -2.0 * np.sin(t),
        d2r=lambda t: -2.0 * np.sin(t),
        d2z=lambda t: -2.0 * np.cos(t),
    )


def _ellipsoid() -> GeneratingCurve:
    return GeneratingCurve(
        name="ellipsoid",
        t0=0.0,
        t1=np.pi,
        r=lambda t: np.sin(t),
        z=lambda t: 2.0 * np.cos(t),
        dr=lambda t: np.cos(t),
        dz=lambda t: -2.0 * np.sin(t),
        d2r=lambda t: -np.sin(t),
        d2z=lambda t: -2.0 * np.cos(t),
    )


def _starfish() -> GeneratingCurve:
    # wavy radius w(t) about a circle traversed pole to pole
    def w(t):
        return 2.0 + 0.5 * np.cos(5.0 * np.pi * (t - 1.0))

    def dw(t):
        return -2.5 * np.pi * np.sin(5.0 * np.pi * (t - 1.0))

    def d2w(t):
        return -12.5 * np.pi ** 2 * np.cos(5.0 * np.pi * (t - 1.0))

    def a(t):
        return np.pi * (t - 0.5)

    return GeneratingCurve(
        name="starfish",
        t0=0.0,
        t1=1.0,
        r=lambda t: w(t) * np.cos(a(t)),
        z=lambda t: w(t) * np.sin(a(t)),
        dr=lambda t: dw(t) * np.cos(a(t)) - w(t) * np.pi * np.sin(a(t)),
        dz=lambda t: dw(t) * np.sin(a(t)) + w(t) * np.pi * np.cos(a(t)),
        d2r=lambda t: (
            d2w(t) * np.cos(a(t))
            - 2.0 * dw(t) * np.pi * np.sin(a(t))
            - w(t) * np.pi ** 2 * np.cos(a(t))
        ),
        d2z=lambda t: (
            d2w(t) * np.sin(a(t))
            + 2.0 * dw(t) * np.pi * np.cos(a(t))
            - w(t) * np.pi ** 2 * np.sin(a(t))
        ),
    )


def _droplet() -> GeneratingCurve:
    # conical point on the axis at t = 1, i.e. at (r, z) = (0, 2)
    def u(t):
        return np.pi * t

    def v(t):
        return 0.5 * np.pi * (t - 1.5)

    return GeneratingCurve(
        name="droplet",
        t0=0.5,
        t1=1.0,
        r=lambda t: 4.0 * np.sin(u(t)) * np.cos(v(t)),
        z=lambda t: 4.0 * np.sin(u(t)) * np.sin(v(t)) + 2.0,
        dr=lambda t: (
            4.0 * np.pi * np.cos(u(t)) * np.cos(v(t))
            - 2.0 * np.pi * np.sin(u(t)) * np.sin(v(t))
        ),
        dz=lambda t: (
            4.0 * np.pi * np.cos(u(t)) * np.sin(v(t))
            + 2.0 * np.pi * np.sin(u(t)) * np.cos(v(t))
        ),
        d2r=lambda t: (
            -5.0 * np.pi ** 2 * np.sin(u(t)) * np.cos(v(t))
            - 4.0 * np.pi ** 2 * np.cos(u(t)) * np.sin(v(t))
        ),
        d2z=lambda t: (
            -5.0 * np.pi ** 2 * np.sin(u(t)) * np.sin(v(t))
            + 4.0 * np.pi ** 2 * np.cos(u(t)) * np.cos(v(t))
        ),
        corners=(1.0,),
    )


_BUILTIN = {
    "sphere": _sphere,
    "ellipsoid": _ellipsoid,
    "starfish": _starfish,
    "droplet": _droplet,
}


def make_builtin_curve(name: str) -> GeneratingCurve:
    """Return one of the built-in generating curves by name."""
    try:
        return _BUILTIN[name]()
    except KeyError:
        raise ValueError(
            f"unknown curve {name!r}; available: {sorted(_BUILTIN)}"
        ) from None


@dataclass
class Frame:
    """Curve data at a batch of parameter values; all fields are (n,) arrays."""

    t: np.ndarray
    r: np.ndarray
    z: np.ndarray
    dr: np.ndarray
    dz: np.ndarray
    d2r: np.ndarray
    d2z: np.ndarray
    speed: np.ndarray  # |(r', z')| = ds/dt
    nr: np.ndarray  # outward unit normal, r component
    nz: np.ndarray
    tr: np.ndarray  # unit meridian tangent (unsigned, follows t)
    tz: np.ndarray


def curve_frame(curve: GeneratingCurve, t: np.ndarray, orientation: float = 1.0) -> Frame:
    """Evaluate position, derivatives and surface frame at parameters ``t``."""
    t = np.asarray(t, dtype=float)
    r, z = curve.r(t), curve.z(t)
    dr, dz = curve.dr(t), curve.dz(t)
    d2r, d2z = curve.d2r(t), curve.d2z(t)
    speed = np.hypot(dr, dz)
    inv = 1.0 / speed
    return Frame(
        t=t, r=r, z=z, dr=dr, dz=dz, d2r=d2r, d2z=d2z, speed=speed,
        nr=orientation * dz * inv, nz=-orientation * dr * inv,
        tr=dr * inv, tz=dz * inv,
    )


def coord_deltas(
    curve: GeneratingCurve, t_ref: float, t: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Stable coordinate differences r(t_ref) - r(t), z(t_ref) - z(t).

    Direct subtraction loses all significance once |t_ref - t| is small
    against t_ref; quantities derived from the squared distance then carry
    noise amplified by the near-diagonal kernel cancellations.  Integrating
    the curve derivatives over [t, t_ref] instead keeps the difference
    accurate relative to its own size at any separation.
    """
    t = np.asarray(t, dtype=float)
    x, w = np.polynomial.legendre.leggauss(24)
    half = 0.5 * (t_ref - t)
    nodes = (0.5 * (t_ref + t))[:, None] + half[:, None] * x[None, :]
    dr = (curve.dr(nodes) @ w) * half
    dz = (curve.dz(nodes) @ w) * half
    return dr, dz


def curve_orientation(curve: GeneratingCurve) -> float:
    """Sign s making n = s*(z',-r')/speed point away from the axis interior."""
    ts = np.linspace(curve.t0, curve.t1, 4001)[1:-1]
    rs = curve.r(ts)
    k = int(np.argmax(rs))
    t = ts[k : k + 1]
    f = curve_frame(curve, t)
    ref = curve.interior_reference()
    outward = (f.r[0] - ref[0]) * f.nr[0] + (f.z[0] - ref[1]) * f.nz[0]
    return 1.0 if outward > 0.0 else -1.0


@dataclass
class PanelMesh:
    """Gauss-Legendre panel mesh on a generating curve.

    Node arrays are flat with shape (n_nodes,) ordered panel by panel;
    ``panel_of[i]`` gives the panel index of node i.  ``weights_t`` are the
    Gauss weights in the parameter; ``weights_arc = weights_t * speed`` so
    that sum(weights_arc * f) approximates the line integral of f in
    arclength.  ``neighbors[k]`` lists panel indices sharing an endpoint
    with panel k.
    """

    curve: GeneratingCurve
    p: int
    panels: np.ndarray  # (n_panels, 2) parameter intervals, increasing
    orientation: float
    t: np.ndarray = field(init=False)
    weights_t: np.ndarray = field(init=False)
    frame: Frame = field(init=False)
    panel_of: np.ndarray = field(init=False)
    neighbors: list[tuple[int, ...]] = field(init=False)

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("panel order p must be at least 2")
        widths = self.panels[:, 1] - self.panels[:, 0]
        if np.any(widths <= 0):
            raise ValueError("panels must be increasing parameter intervals")
        x, w = np.polynomial.legendre.leggauss(self.p)
        mid = 0.5 * (self.panels[:, 0] + self.panels[:, 1])
        half = 0.5 * widths
        self.t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        self.weights_t = (half[:, None] * w[None, :]).ravel()
        self.frame = curve_frame(self.curve, self.t, self.orientation)
        if np.any(self.frame.r <= 0):
            raise ValueError("mesh nodes must satisfy r > 0")
        if np.any(self.frame.speed <= 0):
            raise ValueError("generating curve has a stationary point at a node")
        self.panel_of = np.repeat(np.arange(self.n_panels), self.p)
        self.neighbors = _adjacency(self.panels)

    @property
    def n_panels(self) -> int:
        return self.panels.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.n_panels * self.p

    @property
    def weights_arc(self) -> np.ndarray:
        return self.weights_t * self.frame.speed

    def panel_slice(self, k: int) -> slice:
        return slice(k * self.p, (k + 1) * self.p)


def _adjacency(panels: np.ndarray) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []
    for k in range(panels.shape[0]):
        nb = []
        for j in range(panels.shape[0]):
            if j == k:
                continue
            if (
                abs(panels[k, 1] - panels[j, 0]) < _CORNER_TOL
                or abs(panels[k, 0] - panels[j, 1]) < _CORNER_TOL
            ):
                nb.append(j)
        out.append(tuple(nb))
    return out


def _dyadic_chain(a: float, b: float, depth: int, toward_right: bool) -> list[tuple[float, float]]:
    """Split [a, b] into depth+1 panels geometrically graded toward one end."""
    pieces = []
    lo, hi = a, b
    for _ in range(depth):
        mid = 0.5 * (lo + hi)
        if toward_right:
            pieces.append((lo, mid))
            lo = mid
        else:
            pieces.append((mid, hi))
            hi = mid
    pieces.append((lo, hi))
    if not toward_right:
        pieces.reverse()
    return pieces


def build_mesh(
    curve: GeneratingCurve,
    n_panels: int,
    p: int,
    corner_depth: int = 0,
) -> PanelMesh:
    """Mesh the curve with ``n_panels`` uniform panels of order ``p``.

    With ``corner_depth`` = d > 0, every panel touching a listed corner and
    that panel's neighbour away from the corner are each replaced by a
    dyadic chain of d+1 panels graded toward the corner (panel widths
    L/2, L/4, ..., L/2^d, L/2^d).
    """
    if n_panels < 1:
        raise ValueError("need at least one panel")
    bps = list(np.linspace(curve.t0, curve.t1, n_panels + 1))
    intervals = [(bps[i], bps[i + 1]) for i in range(n_panels)]
    if corner_depth > 0:
        for c in curve.corners:
            intervals = _refine_at(intervals, c, corner_depth)
    panels = np.array(intervals, dtype=float)
    panels = panels[np.argsort(panels[:, 0])]
    return PanelMesh(
        curve=curve, p=p, panels=panels, orientation=curve_orientation(curve)
    )


def _refine_at(
    intervals: list[tuple[float, float]], c: float, depth: int
) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    touching = [
        i
        for i, (a, b) in enumerate(intervals)
        if abs(a - c) < _CORNER_TOL or abs(b - c) < _CORNER_TOL
    ]
    if not touching:
        raise ValueError(f"corner {c} is not a panel endpoint; adjust n_panels")
    expand: dict[int, bool] = {}
    for i in touching:
        a, b = intervals[i]
        toward_right = abs(b - c) < _CORNER_TOL
        expand[i] = toward_right
        # neighbour on the far side from the corner gets the same grading
        j = i - 1 if toward_right else i + 1
        if 0 <= j < len(intervals) and j not in expand:
            expand[j] = toward_right
    for i, (a, b) in enumerate(intervals):
        if i in expand:
            out.extend(_dyadic_chain(a, b, depth, expand[i]))
        else:
            out.append((a, b))
    return out
