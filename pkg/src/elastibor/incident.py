"""Incident elastic fields and their azimuthal boundary-data modes.

Two sources are supported: a plane wave split into its compressional and
shear parts,

    u_inc(x) = (d.p) d e^{i kappa_p d.x} + ((d x p) x d) e^{i kappa_s d.x},

and a polarized point source u_inc(x) = -Phi(x, y0) p built from the
fundamental tensor

    Phi = ( G_s I + grad grad (G_s - G_p) / kappa_s^2 ) / mu,

with G_kappa = e^{i kappa R} / (4 pi R) and closed-form gradient/Hessian.

``boundary_data`` samples the field on each mesh node's azimuthal circle,
FFTs the rigid-boundary data f = -n.u and g = -n x u (tangential
components), and truncates the mode range where the spectrum has decayed
below a requested threshold.  The sample count doubles until the trailing
quarter of the spectrum certifies that no significant mode is aliased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAMPLES_MIN = 64
SAMPLES_MAX = 1 << 14


def wavenumbers(omega: float, lam: float, mu: float) -> tuple[float, float]:
    """Compressional and shear wavenumbers from material constants."""
    if mu <= 0 or lam + 2 * mu <= 0:
        raise ValueError("need mu > 0 and lam + 2 mu > 0")
    return omega / np.sqrt(lam + 2 * mu), omega / np.sqrt(mu)


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a unit 3-vector")
    return v


@dataclass(frozen=True)
class IncidentField:
    """Incoming field: kind 'plane' (d, p) or 'point' (y0, p, mu)."""

    kind: str
    kappa_p: float
    kappa_s: float
    p: np.ndarray
    d: np.ndarray | None = None
    y0: np.ndarray | None = None
    mu: float = 1.0

    @classmethod
    def plane(cls, d, p, kappa_p: float, kappa_s: float) -> "IncidentField":
        if kappa_p <= 0 or kappa_s <= 0:
            raise ValueError("wavenumbers must be positive")
        return cls(
            kind="plane",
            kappa_p=float(kappa_p),
            kappa_s=float(kappa_s),
            p=_unit(p, "polarization"),
            d=_unit(d, "direction"),
        )

    @classmethod
    def point_source(
        cls, y0, p, kappa_p: float, kappa_s: float, mu: float = 1.0
    ) -> "IncidentField":
        if kappa_p <= 0 or kappa_s <= 0:
            raise ValueError("wavenumbers must be positive")
        if mu <= 0:
            raise ValueError("shear modulus must be positive")
        y0 = np.asarray(y0, dtype=float)
        if y0.shape != (3,):
            raise ValueError("source location must be a 3-vector")
        return cls(
            kind="point",
            kappa_p=float(kappa_p),
            kappa_s=float(kappa_s),
            p=np.asarray(p, dtype=float),
            y0=y0,
            mu=float(mu),
        )


def default_plane_wave(kappa_p: float, kappa_s: float) -> IncidentField:
    """Plane wave at the standard oblique benchmark angles."""
    th1, ph1 = np.pi / 4, np.pi / 8
    th2, ph2 = np.pi / 5, np.pi / 10
    d = np.array(
        [np.cos(th1) * np.sin(ph1), np.sin(th1) * np.sin(ph1), np.cos(ph1)]
    )
    p = np.array(
        [np.cos(th2) * np.sin(ph2), np.sin(th2) * np.sin(ph2), np.cos(ph2)]
    )
    return IncidentField.plane(d, p, kappa_p, kappa_s)


def fundamental_tensor(x, y0, kappa_p: float, kappa_s: float, mu: float):
    """Navier fundamental tensor Phi(x, y0), shape (..., 3, 3).

    Built from radial derivatives of h = e^{i kappa R}/(4 pi R):

        h'  = e^{i kappa R} (i kappa R - 1) / (4 pi R^2)
        h'' = e^{i kappa R} (2 - kappa^2 R^2 - 2 i kappa R) / (4 pi R^3)

    and grad grad h = (h'' - h'/R) u u^T + (h'/R) I with u = (x - y0)/R.
    """
    x = np.asarray(x, dtype=float)
    diff = x - np.asarray(y0, dtype=float)
    R = np.linalg.norm(diff, axis=-1)
    if np.any(R == 0.0):
        raise ValueError("target coincides with the source point")
    u = diff / R[..., None]

    def radial(kappa):
        e = np.exp(1j * kappa * R)
        g = e / (4 * np.pi * R)
        d1 = e * (1j * kappa * R - 1.0) / (4 * np.pi * R**2)
        d2 = e * (2.0 - (kappa * R) ** 2 - 2j * kappa * R) / (4 * np.pi * R**3)
        return g, d1, d2

    gs, d1s, d2s = radial(kappa_s)
    gp, d1p, d2p = radial(kappa_p)
    d1, d2 = d1s - d1p, d2s - d2p
    eye = np.eye(3)
    uu = u[..., :, None] * u[..., None, :]
    hess = (d2 - d1 / R)[..., None, None] * uu + (d1 / R)[..., None, None] * eye
    return (gs[..., None, None] * eye + hess / kappa_s**2) / mu


def eval_incident(field: IncidentField, x) -> np.ndarray:
    """Incident displacement at targets x, shape (..., 3) -> (..., 3)."""
    x = np.asarray(x, dtype=float)
    if field.kind == "plane":
        d, p = field.d, field.p
        dp = d @ p
        shear = np.cross(np.cross(d, p), d)
        phase_p = np.exp(1j * field.kappa_p * (x @ d))
        phase_s = np.exp(1j * field.kappa_s * (x @ d))
        return dp * phase_p[..., None] * d + phase_s[..., None] * shear
    phi = fundamental_tensor(x, field.y0, field.kappa_p, field.kappa_s, field.mu)
    return -(phi @ field.p)


@dataclass(frozen=True)
class BoundaryDataModes:
    """Rigid-boundary data modes f_m, (g_m . tau1), (g_m . e_theta).

    Arrays have shape (2 m_max + 1, n_nodes), row j holding mode
    m = j - m_max.  ``threshold`` is the relative truncation level the
    trailing modes satisfy.
    """

    m_max: int
    threshold: float
    f: np.ndarray
    g_t: np.ndarray
    g_q: np.ndarray

    def rhs(self, m: int) -> np.ndarray:
        """Stacked right-hand side [f_m; g_m.tau1; g_m.e_theta]."""
        if abs(m) > self.m_max:
            raise ValueError("mode exceeds the stored range")
        j = m + self.m_max
        return np.concatenate([self.f[j], self.g_t[j], self.g_q[j]])


def _circle_data(field: IncidentField, mesh, n_phi: int):
    """Sample f, g.tau1, g.e_theta on every node's azimuthal circle."""
    fr = mesh.frame
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    cph, sph = np.cos(phi), np.sin(phi)
    pts = np.empty((mesh.n_nodes, n_phi, 3))
    pts[:, :, 0] = fr.r[:, None] * cph[None, :]
    pts[:, :, 1] = fr.r[:, None] * sph[None, :]
    pts[:, :, 2] = fr.z[:, None]
    u = eval_incident(field, pts)
    n_vec = np.empty_like(pts)
    n_vec[:, :, 0] = fr.nr[:, None] * cph[None, :]
    n_vec[:, :, 1] = fr.nr[:, None] * sph[None, :]
    n_vec[:, :, 2] = fr.nz[:, None]
    t_vec = np.empty_like(pts)
    t_vec[:, :, 0] = fr.tr[:, None] * cph[None, :]
    t_vec[:, :, 1] = fr.tr[:, None] * sph[None, :]
    t_vec[:, :, 2] = fr.tz[:, None]
    g = -np.cross(n_vec, u)
    f = -np.einsum("nkc,nkc->nk", n_vec, u)
    g_t = np.einsum("nkc,nkc->nk", t_vec, g)
    g_q = -sph[None, :] * g[:, :, 0] + cph[None, :] * g[:, :, 1]
    return f, g_t, g_q


def boundary_data(
    field: IncidentField, mesh, threshold: float = 1e-12, m_cap: int = 200
) -> BoundaryDataModes:
    """Azimuthal modes of the rigid-boundary data with certified truncation."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    n_phi = SAMPLES_MIN
    while True:
        fams = _circle_data(field, mesh, n_phi)
        coeff = [np.fft.fft(a, axis=1) / n_phi for a in fams]
        amp = np.zeros(n_phi)
        for c in coeff:
            np.maximum(amp, np.abs(c).max(axis=0), out=amp)
        lead = amp.max()
        half, quart = n_phi // 2, n_phi // 4
        # amplitude by |m|; index n_phi - m holds mode -m
        by_absm = np.maximum(amp[: half + 1], amp[np.r_[0, n_phi - np.arange(1, half + 1)]])
        if by_absm[quart : half + 1].max() <= threshold * lead:
            break
        if n_phi >= SAMPLES_MAX:
            raise ValueError(
                "boundary data spectrum does not decay: trailing level "
                f"{by_absm[quart:].max() / lead:.3e} at {n_phi} samples"
            )
        n_phi *= 2

    tail = np.maximum.accumulate(by_absm[::-1])[::-1]
    above = np.nonzero(tail > threshold * lead)[0]
    m_max = int(above[-1]) if above.size else 0
    if m_max > m_cap:
        raise ValueError(
            f"mode cap {m_cap} too small: decay at the cap is "
            f"{tail[m_cap + 1] / lead:.3e}, above threshold {threshold:.1e}"
        )

    idx = np.r_[n_phi - np.arange(m_max, 0, -1), np.arange(m_max + 1)]
    f, g_t, g_q = (c[:, idx].T.copy() for c in coeff)
    return BoundaryDataModes(
        m_max=m_max, threshold=threshold, f=f, g_t=g_t, g_q=g_q
    )
