"""Azimuthal Fourier modes of the Helmholtz kernel and its gradients.

For a target (r_t, z_t) and source (r_s, z_s) on the meridian plane, the
3-D distance depends on the azimuth difference phi through

    rho(phi)^2 = rho0^2 + 4 r_t r_s sin^2(phi/2),
    rho0^2     = (r_t - r_s)^2 + (z_t - z_s)^2,

and the m-th kernel mode is khat_m = int_0^{2pi} k(rho(phi)) e^{-i m phi} dphi,
even in m.  Evaluated families, per wavenumber kappa:

    g      modes of e^{i kappa rho} / (4 pi rho)
    d_rt, d_zt, d_rs   modes of its partial derivatives (d_zs = -d_zt)

Production branches:

* far (rho0 >= max(r_t, r_s)): plain trapezoid/FFT in phi.  The grid is
  doubled until the trailing quarter of the spectrum falls below the
  requested tolerance, which certifies both truncation and aliasing.

* near: kernel splitting.  i sin(kappa rho)/(4 pi rho) and the gradient
  envelope i (kappa rho cos - sin)/(4 pi rho^3) are entire in rho^2, so
  they FFT on a rho0-independent grid.  The remaining pieces are
  cos(kappa rho)/(4 pi rho) and -(cos + kappa rho sin)/(4 pi rho^3) N_x,
  products of smooth azimuthal factors with 1/rho or grad(1/rho), whose
  modes are half-integer Legendre functions

      modal(1/rho)_mu = 2 (r_t r_s)^(-1/2) Q_{|mu|-1/2}(chi),
      chi = 1 + rho0^2 / (2 r_t r_s),

  so the singular parts come from discrete convolutions of the smooth
  factors' FFT spectra with the Q family.  Q is seeded by complete
  elliptic integrals and continued by its three-term recurrence, run
  forward when stable and by a renormalized backward (Miller) sweep
  otherwise.

A third backend, "adaptive", integrates the unsplit integrand by composite
Gauss panels dyadically refined toward phi = 0 and certifies by doubling;
it is slower and serves to validate the optimized branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ellipe, ellipkm1

FFT_K_MIN = 64
FFT_K_MAX = 1 << 15
FAR_DELTA = 1.0  # far branch when rho0 >= FAR_DELTA * max(r_t, r_s)
_TAYLOR_X = 0.6  # switch for the entire gradient envelope
_SPECTRUM_FLOOR = 1e-300


class ModalKernelError(RuntimeError):
    """Raised when a certified kernel evaluation fails to converge."""


@dataclass(frozen=True)
class ModalKernelRequest:
    """One target/source pair, wavenumber and mode count (modes 0..n_modes+1)."""

    r_t: float
    z_t: float
    r_s: float
    z_s: float
    kappa: float
    n_modes: int
    tol: float = 1e-12


@dataclass
class ModalKernelValues:
    """Kernel modes m = 0..M+1; negative modes follow from evenness.

    ``get(m)`` returns the mode for any sign of m.  ``branch`` records which
    evaluation path produced the values.
    """

    modes: np.ndarray
    branch: str

    def get(self, m: int) -> complex:
        return self.modes[abs(m)]

    @property
    def n_modes(self) -> int:
        return len(self.modes) - 2


@dataclass
class PrimitiveBlocks:
    """Batched kernel modes: arrays of shape (n_pairs, n_modes + 2).

    ``g`` holds the kernel value family, ``d_rt``/``d_zt``/``d_rs`` its
    partial derivatives; d/dz_s = -d_zt.  ``branch`` marks the path used
    per pair ('F' far, 'N' near, 'A' adaptive).
    """

    g: np.ndarray
    d_rt: np.ndarray
    d_zt: np.ndarray
    d_rs: np.ndarray
    branch: np.ndarray

    @property
    def d_zs(self) -> np.ndarray:
        return -self.d_zt


# --- half-integer Legendre Q ----------------------------------------------


def toroidal_q(chim1: np.ndarray, mu_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Q_{mu-1/2}(chi) and d/dchi for mu = 0..mu_max, chi = 1 + chim1.

    chim1 must be positive; passing chi - 1 directly preserves accuracy
    near coincidence.  Uses elliptic-integral seeds
        Q_{-1/2} = sqrt(2/(1+chi)) K(m),   m = 2/(1+chi),
        Q_{+1/2} = chi sqrt(2/(1+chi)) K(m) - sqrt(2(1+chi)) E(m),
    the forward three-term recurrence where it is stable
    (2 mu_max arccosh(chi) <= 3) and a renormalized backward Miller sweep
    elsewhere.
    """
    chim1 = np.asarray(chim1, dtype=float)
    if np.any(chim1 <= 0):
        raise ValueError("chi must exceed 1 (distinct target and source)")
    n = chim1.shape[0]
    chi = 1.0 + chim1
    m_ell = 2.0 / (2.0 + chim1)
    one_minus = chim1 / (2.0 + chim1)
    ek = ellipkm1(one_minus)
    ee = ellipe(m_ell)
    sm = np.sqrt(m_ell)
    q0 = sm * ek
    q1 = chi * sm * ek - np.sqrt(2.0 * (2.0 + chim1)) * ee
    theta = np.log1p(chim1 + np.sqrt(chim1 * (chim1 + 2.0)))

    q = np.empty((n, mu_max + 1))
    q[:, 0] = q0
    if mu_max >= 1:
        q[:, 1] = q1
    fwd = 2.0 * mu_max * theta <= 3.0
    if np.any(fwd) and mu_max >= 2:
        qf = q[fwd]
        chif = chi[fwd]
        for mu in range(1, mu_max):
            qf[:, mu + 1] = (
                2.0 * mu * chif * qf[:, mu] - (mu - 0.5) * qf[:, mu - 1]
            ) / (mu + 0.5)
        q[fwd] = qf
    bwd = ~fwd
    if np.any(bwd) and mu_max >= 1:
        idx = np.nonzero(bwd)[0]
        boost = np.clip(np.ceil(37.0 / theta[idx]), 40, 40000).astype(int)
        starts = 1 << np.ceil(np.log2(mu_max + boost)).astype(int)
        for start in np.unique(starts):
            sub = idx[starts == start]
            q[sub] = _miller_downward(chi[sub], q0[sub], int(start), mu_max)

    qp = np.empty_like(q)
    den = chim1 * (chim1 + 2.0)
    qp[:, 0] = -0.5 * (chi * q0 - q1) / den
    for mu in range(1, mu_max + 1):
        qp[:, mu] = (mu - 0.5) * (chi * q[:, mu] - q[:, mu - 1]) / den
    return q, qp


def _miller_downward(chi, q0_seed, start: int, mu_max: int) -> np.ndarray:
    n = chi.shape[0]
    out = np.empty((n, mu_max + 1))
    y_up = np.zeros(n)  # value at index mu+1
    y = np.ones(n)  # value at index mu
    for mu in range(start, 0, -1):
        y_dn = (2.0 * mu * chi * y - (mu + 0.5) * y_up) / (mu - 0.5)
        y_up = y
        y = y_dn
        if mu - 1 <= mu_max:
            out[:, mu - 1] = y
        big = np.abs(y) > 1e250
        if np.any(big):
            y[big] *= 1e-250
            y_up[big] *= 1e-250
            if mu - 1 <= mu_max:
                out[np.nonzero(big)[0], mu - 1 :] *= 1e-250
    with np.errstate(over="ignore", under="ignore"):
        out *= (q0_seed / out[:, 0])[:, None]
    return out


# --- FFT helpers -----------------------------------------------------------


def _unpack_pair(c_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split the FFT of a + i b (a, b real signals) into a_hat, b_hat."""
    rev = np.concatenate([c_hat[:, :1], c_hat[:, :0:-1]], axis=1)
    a_hat = 0.5 * (c_hat + np.conj(rev))
    b_hat = -0.5j * (c_hat - np.conj(rev))
    return a_hat, b_hat


def _tail_ok(spec: np.ndarray, tol: float) -> np.ndarray:
    """Per-row certificate: trailing quarter of the spectrum below tol*max."""
    K = spec.shape[1]
    mag = np.abs(spec)
    peak = np.maximum(mag.max(axis=1), _SPECTRUM_FLOOR)
    band = mag[:, K // 4 : K // 2 + 1].max(axis=1)
    return band <= tol * peak


def _grad_from_envelope(f_hat, sl, rt, rs, dz, n_out):
    """Modes of F*N_x from the envelope spectrum F_hat via the cos shift."""
    K = f_hat.shape[1]
    up = f_hat[:, (np.arange(n_out) + 1) % K]
    dn = f_hat[:, (np.arange(n_out) - 1) % K]
    ctr = f_hat[:, :n_out]
    cos_part = 0.5 * (up + dn)
    return (
        rt[sl, None] * ctr - rs[sl, None] * cos_part,
        dz[sl, None] * ctr,
        rs[sl, None] * ctr - rt[sl, None] * cos_part,
    )


def _envelope_smooth(x: np.ndarray) -> np.ndarray:
    """(x cos x - sin x)/x^3, series below the cancellation threshold."""
    out = np.empty_like(x)
    small = np.abs(x) < _TAYLOR_X
    xs = x[small]
    x2 = xs * xs
    # sum_k (-1)^(k+1) (2k+2)/(2k+3)! x^(2k)
    out[small] = (
        -1.0 / 3.0
        + x2
        * (
            1.0 / 30.0
            + x2
            * (
                -1.0 / 840.0
                + x2 * (1.0 / 45360.0 + x2 * (-1.0 / 3991680.0 + x2 / 518918400.0))
            )
        )
    )
    xl = x[~small]
    out[~small] = (xl * np.cos(xl) - np.sin(xl)) / xl**3
    return out


# --- branch drivers --------------------------------------------------------


def _initial_K(kappa, rho_span, n_modes) -> np.ndarray:
    need = 2.0 * (n_modes + 2) + 1.4 * np.abs(kappa) * rho_span + 16.0
    K = np.maximum(FFT_K_MIN, 2 ** np.ceil(np.log2(need)).astype(int))
    return np.minimum(K, FFT_K_MAX).astype(int)


def _far_group(rt, zt, rs, zs, dr, dz, kappa, n_modes, K, tol):
    """FFT evaluation of one equal-K group; returns families + ok mask."""
    n_out = n_modes + 2
    phi = 2.0 * np.pi * np.arange(K) / K
    s2 = np.sin(0.5 * phi) ** 2
    rho0sq = dr * dr + dz * dz
    rho = np.sqrt(rho0sq[:, None] + 4.0 * (rt * rs)[:, None] * s2[None, :])
    x = kappa * rho
    ph = np.exp(1j * x)
    G = ph / (4.0 * np.pi * rho)
    F = ph * (1j * x - 1.0) / (4.0 * np.pi * rho**3)
    g_hat = np.fft.fft(G, axis=1) * (2.0 * np.pi / K)
    f_hat = np.fft.fft(F, axis=1) * (2.0 * np.pi / K)
    ok = _tail_ok(g_hat, tol) & _tail_ok(f_hat, tol)
    sl = slice(None)
    d_rt, d_zt, d_rs = _grad_from_envelope(f_hat, sl, rt, rs, dz, n_out)
    return g_hat[:, :n_out], d_rt, d_zt, d_rs, ok


def _near_group(rt, zt, rs, zs, dr, dz, kappa, n_modes, K, tol):
    """Split-kernel evaluation of one equal-K group; returns families + ok."""
    n_out = n_modes + 2
    phi = 2.0 * np.pi * np.arange(K) / K
    s2 = np.sin(0.5 * phi) ** 2
    rr = rt * rs
    rho0sq = dr * dr + dz * dz
    chim1 = rho0sq / (2.0 * rr)
    rho = np.sqrt(rho0sq[:, None] + 4.0 * rr[:, None] * s2[None, :])
    x = kappa * rho
    inv4pi = 1.0 / (4.0 * np.pi)

    # entire-in-rho^2 parts: a = sin(k rho)/(4 pi rho), b = envelope of F
    if kappa != 0.0:
        a = inv4pi * kappa * np.sinc(x / np.pi)
    else:
        a = np.zeros_like(rho)
    b = inv4pi * kappa**3 * _envelope_smooth(x)
    ab_hat = np.fft.fft(a + 1j * b, axis=1) * (2.0 * np.pi / K)
    a_hat, b_hat = _unpack_pair(ab_hat)

    # smooth azimuthal factors of the singular parts
    v = np.cos(x)
    w = np.cos(x) + x * np.sin(x)
    vw_hat = np.fft.fft(v + 1j * w, axis=1) * (2.0 * np.pi / K)
    v_hat, w_hat = _unpack_pair(vw_hat)

    ok = (
        _tail_ok(ab_hat, tol)
        & _tail_ok(vw_hat, tol)
    )

    # convolution cut: keep coefficients above the significance floor; the
    # FFT roundoff floor sits near 2e-16 * peak, so cutting below it only
    # drags noise terms through the convolution at quadratic cost
    cut = max(1.0e-3 * tol, 1.0e-16)
    vw_mag = np.maximum(np.abs(v_hat), np.abs(w_hat))
    peak = np.maximum(vw_mag.max(axis=1), _SPECTRUM_FLOOR)[:, None]
    keep = (vw_mag[:, : K // 2 + 1] > cut * peak).any(axis=0)
    kc = min(int(np.nonzero(keep)[0].max()) + 1 if keep.any() else 1, K // 2)
    mu_max = n_modes + 1 + kc

    qv, qpv = toroidal_q(chim1, mu_max)
    pref = 2.0 / np.sqrt(rr)
    Lq = pref[:, None] * qv  # modal(1/rho)
    dchi_rt = (dr - rs * chim1) / rr
    dchi_rs = (-dr - rt * chim1) / rr
    dchi_zt = dz / rr
    dL_rt = pref[:, None] * (qpv * dchi_rt[:, None]) - Lq / (2.0 * rt)[:, None]
    dL_rs = pref[:, None] * (qpv * dchi_rs[:, None]) - Lq / (2.0 * rs)[:, None]
    dL_zt = pref[:, None] * (qpv * dchi_zt[:, None])

    # modal(smooth * singular)_m = 1/(2 pi) sum_k shat_k Lhat_{|m-k|}
    ks = np.arange(-kc, kc + 1)
    gather_vw = np.abs(ks) % K  # spectra are even in k
    idx = np.abs(np.arange(n_out)[:, None] - ks[None, :])  # (n_out, 2kc+1)
    inv2pi = 1.0 / (2.0 * np.pi)

    def conv(s_hat, Lfam):
        # row-chunked: the (rows, n_out, 2kc+1) gather can dwarf the inputs
        nrows = s_hat.shape[0]
        step = max(1, int(4_000_000 // (n_out * (2 * kc + 1))))
        out = np.empty((nrows, n_out), complex)
        for lo in range(0, nrows, step):
            sl = slice(lo, min(lo + step, nrows))
            out[sl] = inv2pi * np.einsum(
                "nk,nmk->nm", s_hat[sl][:, gather_vw], Lfam[sl][:, idx], optimize=True
            )
        return out

    g = a_hat[:, :n_out] * 1j + inv4pi * conv(v_hat, Lq)
    d_rt, d_zt, d_rs = _grad_from_envelope(1j * b_hat, slice(None), rt, rs, dz, n_out)
    d_rt = d_rt + inv4pi * conv(w_hat, dL_rt)
    d_zt = d_zt + inv4pi * conv(w_hat, dL_zt)
    d_rs = d_rs + inv4pi * conv(w_hat, dL_rs)
    return g, d_rt, d_zt, d_rs, ok


def _adaptive_block(rt, zt, rs, zs, dr, dz, kappa, n_modes, tol):
    """Direct certified quadrature of the unsplit integrands, all families."""

    def run(n_osc_scale, extra_levels):
        rr = rt * rs
        rho0sq = dr * dr + dz * dz
        rho_max = np.sqrt(rho0sq + 4.0 * rr)
        span = float(np.max(np.abs(kappa) * (rho_max - np.sqrt(rho0sq))))
        n_osc = max(4, int(math.ceil(n_osc_scale * (0.6 * span + n_modes + 2) / 8.0)))
        peak = math.sqrt(2.0 * float(np.min(rho0sq / (2.0 * rr))))
        levels = int(np.clip(math.ceil(math.log2(np.pi / n_osc / max(peak, 1e-14))), 2, 48))
        levels += extra_levels
        # uniform oscillation panels on [pi/n_osc, pi], dyadic chain below
        edges = [np.pi * (k + 1) / n_osc for k in range(1, n_osc)]
        first = np.pi / n_osc
        pieces = [(first / 2.0**(l + 1), first / 2.0**l) for l in range(levels)]
        pieces.append((0.0, first / 2.0**levels))
        pieces.extend(zip([first] + edges[:-1], edges))
        xg, wg = np.polynomial.legendre.leggauss(16)
        nodes, wts = [], []
        for lo, hi in pieces:
            nodes.append(0.5 * (lo + hi) + 0.5 * (hi - lo) * xg)
            wts.append(0.5 * (hi - lo) * wg)
        phi = np.concatenate(nodes)
        wphi = np.concatenate(wts)
        s2 = np.sin(0.5 * phi) ** 2
        rho = np.sqrt(rho0sq[:, None] + 4.0 * rr[:, None] * s2[None, :])
        x = kappa * rho
        ph = np.exp(1j * x)
        G = ph / (4.0 * np.pi * rho)
        F = ph * (1j * x - 1.0) / (4.0 * np.pi * rho**3)
        cosm = np.cos(np.arange(n_modes + 2)[:, None] * phi[None, :])
        basis = 2.0 * cosm * wphi[None, :]  # even integrands: 2 int_0^pi
        g = G @ basis.T
        # r_t - r_s cos(phi) = dr + 2 r_s sin^2(phi/2), stable near coincidence
        n_rt = dr[:, None] + 2.0 * rs[:, None] * s2[None, :]
        n_rs = -dr[:, None] + 2.0 * rt[:, None] * s2[None, :]
        d_rt = (F * n_rt) @ basis.T
        d_rs = (F * n_rs) @ basis.T
        d_zt = (dz[:, None] * F) @ basis.T
        return g, d_rt, d_zt, d_rs

    coarse = run(1.0, 0)
    fine = run(1.5, 2)
    err = 0.0
    for c, f in zip(coarse, fine):
        scale = max(np.abs(f).max(), _SPECTRUM_FLOOR)
        err = max(err, float(np.abs(c - f).max() / scale))
    if err > tol:
        raise ModalKernelError(
            f"adaptive modal quadrature did not certify: err={err:.3e} > {tol:.3e}"
        )
    return fine


def primitive_block_batch(
    rt,
    zt,
    rs,
    zs,
    kappa: float,
    n_modes: int,
    tol: float = 1e-12,
    backend: str = "auto",
    dr=None,
    dz=None,
) -> PrimitiveBlocks:
    """Kernel mode families for a batch of pairs; shapes (n, n_modes + 2).

    backend 'auto' picks far/near per pair; 'adaptive' forces the certified
    direct quadrature (slow, for validation).  ``dr``/``dz`` optionally
    supply precomputed differences r_t - r_s, z_t - z_s; for almost-touching
    pairs the caller can evaluate these without cancellation (see
    ``geometry.coord_deltas``), which the plain coordinate subtraction here
    cannot.
    """
    rt, zt, rs, zs = np.atleast_1d(
        np.asarray(rt, float), np.asarray(zt, float), np.asarray(rs, float), np.asarray(zs, float)
    )
    dr = rt - rs if dr is None else np.atleast_1d(np.asarray(dr, float))
    dz = zt - zs if dz is None else np.atleast_1d(np.asarray(dz, float))
    n = rt.shape[0]
    n_out = n_modes + 2
    shape = (n, n_out)
    g = np.empty(shape, complex)
    d_rt = np.empty(shape, complex)
    d_zt = np.empty(shape, complex)
    d_rs = np.empty(shape, complex)
    branch = np.empty(n, dtype="U1")

    if backend == "adaptive":
        # chunk: the adaptive path builds (n, nodes) scratch arrays
        for lo in range(0, n, 512):
            sl = slice(lo, min(lo + 512, n))
            g[sl], d_rt[sl], d_zt[sl], d_rs[sl] = _adaptive_block(
                rt[sl], zt[sl], rs[sl], zs[sl], dr[sl], dz[sl],
                kappa, n_modes, max(tol, 1e-11) * 30
            )
        branch[:] = "A"
        return PrimitiveBlocks(g, d_rt, d_zt, d_rs, branch)
    if backend not in ("auto",):
        raise ValueError(f"unknown backend {backend!r}")

    rho0 = np.hypot(dr, dz)
    if np.any(rho0 <= 0):
        raise ValueError("coincident target/source pair in kernel batch")
    far = rho0 >= FAR_DELTA * np.maximum(rt, rs)
    branch[far] = "F"
    branch[~far] = "N"

    rho_max = np.sqrt(rho0**2 + 4.0 * rt * rs)
    for is_far, mask in ((True, far), (False, ~far)):
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            continue
        span = (rho_max - rho0)[idx] if is_far else rho_max[idx]
        K_want = _initial_K(kappa, span, n_modes)
        pending = idx
        while pending.size:
            K_vals = np.unique(K_want[np.searchsorted(idx, pending)])
            next_pending = []
            for K in K_vals:
                grp = pending[K_want[np.searchsorted(idx, pending)] == K]
                if grp.size == 0:
                    continue
                # chunk by memory: K complex values per pair per scratch array
                max_rows = max(1, (1 << 22) // int(K))
                for lo in range(0, grp.size, max_rows):
                    rows = grp[lo : lo + max_rows]
                    fn = _far_group if is_far else _near_group
                    gg, drt, dzt, drs, ok = fn(
                        rt[rows], zt[rows], rs[rows], zs[rows],
                        dr[rows], dz[rows], kappa, n_modes, K, tol
                    )
                    good = rows[ok]
                    g[good] = gg[ok]
                    d_rt[good] = drt[ok]
                    d_zt[good] = dzt[ok]
                    d_rs[good] = drs[ok]
                    bad = rows[~ok]
                    if bad.size:
                        if 2 * K > FFT_K_MAX:
                            raise ModalKernelError(
                                "kernel spectrum did not certify at the grid cap"
                            )
                        K_want[np.searchsorted(idx, bad)] = 2 * K
                        next_pending.append(bad)
            pending = np.concatenate(next_pending) if next_pending else np.empty(0, int)
    return PrimitiveBlocks(g, d_rt, d_zt, d_rs, branch)


# --- public per-pair interface --------------------------------------------


def eval_g1_block(req: ModalKernelRequest, backend: str = "auto") -> ModalKernelValues:
    """Kernel value modes g_m for m = 0..n_modes+1 at one pair."""
    blocks = primitive_block_batch(
        [req.r_t], [req.z_t], [req.r_s], [req.z_s], req.kappa, req.n_modes, req.tol, backend
    )
    return ModalKernelValues(blocks.g[0], {"F": "far", "N": "near", "A": "adaptive"}[blocks.branch[0]])


def eval_derivative_blocks(
    req: ModalKernelRequest, backend: str = "auto"
) -> dict[str, ModalKernelValues]:
    """Gradient modes for one pair, keyed 'd_rt', 'd_zt', 'd_rs', 'd_zs'."""
    blocks = primitive_block_batch(
        [req.r_t], [req.z_t], [req.r_s], [req.z_s], req.kappa, req.n_modes, req.tol, backend
    )
    name = {"F": "far", "N": "near", "A": "adaptive"}[blocks.branch[0]]
    return {
        "d_rt": ModalKernelValues(blocks.d_rt[0], name),
        "d_zt": ModalKernelValues(blocks.d_zt[0], name),
        "d_rs": ModalKernelValues(blocks.d_rs[0], name),
        "d_zs": ModalKernelValues(-blocks.d_zt[0], name),
    }


def g23_from_g1(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cos- and sin-weighted families from the value family.

    Input: modes 0..M+1 (last axis).  Output: modes 0..M with
        g2_m = (g1_{m+1} + g1_{m-1}) / 2,
        g3_m = -(g1_{m+1} - g1_{m-1}) / 2,
    using g1_{-1} = g1_{+1}, so g3_0 = 0.
    """
    v = np.asarray(values)
    M = v.shape[-1] - 2
    plus = v[..., 1 : M + 2]
    minus = np.concatenate([v[..., 1:2], v[..., 0:M]], axis=-1)
    g2 = 0.5 * (plus + minus)
    g3 = -0.5 * (plus - minus)
    return g2, g3
