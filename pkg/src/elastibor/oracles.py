"""Slow reference evaluations of the modal kernel integrals.

Adaptive quadrature (QUADPACK oscillatory rules, plus a plain rule with
break points for the sin-weighted family) of the exact azimuthal
integrands, independent of the FFT/recurrence engine in modal_kernels.
Used by the self-test command and by the test suite to validate the fast
paths.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad

_TWO_PI = 2.0 * np.pi


def _rho(r_t, z_t, r_s, z_s, phi):
    rho0sq = (r_t - r_s) ** 2 + (z_t - z_s) ** 2
    return np.sqrt(rho0sq + 4.0 * r_t * r_s * np.sin(0.5 * phi) ** 2)


def _integrand(family: str, r_t, z_t, r_s, z_s, kappa):
    def f(phi):
        rho = _rho(r_t, z_t, r_s, z_s, phi)
        if family == "g":
            return np.exp(1j * kappa * rho) / (4.0 * np.pi * rho)
        x = kappa * rho
        F = np.exp(1j * x) * (1j * x - 1.0) / (4.0 * np.pi * rho**3)
        if family == "d_rt":
            return F * (r_t - r_s * np.cos(phi))
        if family == "d_zt":
            return F * (z_t - z_s)
        if family == "d_rs":
            return F * (r_s - r_t * np.cos(phi))
        if family == "d_zs":
            return -F * (z_t - z_s)
        raise ValueError(f"unknown family {family!r}")

    return f


def modal_oracle(
    r_t: float,
    z_t: float,
    r_s: float,
    z_s: float,
    kappa: float,
    m: int,
    family: str = "g",
    epsabs: float = 1e-13,
) -> complex:
    """m-th azimuthal mode of a kernel family by adaptive oscillatory quadrature.

    Computes int_0^{2pi} f(phi) e^{-i m phi} dphi; the integrand is even in
    phi so only the cosine transform survives.
    """
    f = _integrand(family, r_t, z_t, r_s, z_s, kappa)
    kw = dict(weight="cos", wvar=m, limit=800, epsabs=epsabs, epsrel=1e-12)
    re, _ = quad(lambda p: f(p).real, 0.0, _TWO_PI, **kw)
    im, _ = quad(lambda p: f(p).imag, 0.0, _TWO_PI, **kw)
    return re + 1j * im


def modal_oracle_weighted(
    r_t: float,
    z_t: float,
    r_s: float,
    z_s: float,
    kappa: float,
    m: int,
    trig: str,
    epsabs: float = 1e-13,
) -> complex:
    """Modes of the kernel times cos(phi) or sin(phi), for the shifted families.

    'cos': int G cos(phi) cos(m phi) dphi  (equals the cos-weighted family)
    'sin': int G sin(phi) sin(m phi) dphi  (equals the sin-weighted family)

    The cos transform goes through QUADPACK's oscillatory rule.  For the sin
    weight that rule loses ~7 digits on nearly touching pairs, so the sin
    family is integrated as a plain adaptive quadrature over the half period
    (the full integrand is even about phi = pi) with break points at the
    peak.
    """
    f = _integrand("g", r_t, z_t, r_s, z_s, kappa)
    if trig == "cos":
        g = lambda p: f(p) * np.cos(p)
        kw = dict(weight="cos", wvar=m, limit=800, epsabs=epsabs, epsrel=1e-12)
        re, _ = quad(lambda p: g(p).real, 0.0, _TWO_PI, **kw)
        im, _ = quad(lambda p: g(p).imag, 0.0, _TWO_PI, **kw)
        return re + 1j * im
    if trig != "sin":
        raise ValueError("trig must be 'cos' or 'sin'")
    g = lambda p: f(p) * np.sin(p) * np.sin(m * p)
    d0 = np.hypot(r_t - r_s, z_t - z_s)
    w = max(d0 / max(np.sqrt(r_t * r_s), 1e-30), 1e-12)
    pts = [min(w, 0.5 * np.pi), min(10.0 * w, 0.9 * np.pi)]
    kw = dict(limit=800, epsabs=0.5 * epsabs, epsrel=1e-13, points=pts)
    re, _ = quad(lambda p: g(p).real, 0.0, np.pi, **kw)
    im, _ = quad(lambda p: g(p).imag, 0.0, np.pi, **kw)
    return 2.0 * (re + 1j * im)


def relative_mode_errors(got: np.ndarray, want: np.ndarray, floor_frac: float = 1e-3):
    """Per-mode relative errors with a floor tied to the family's peak.

    Modes far below the family scale are compared against
    floor_frac * max|want| instead of their own magnitude, so noise on
    negligible modes is not amplified.
    """
    got = np.asarray(got)
    want = np.asarray(want)
    scale = np.maximum(np.abs(want), floor_frac * np.abs(want).max())
    return np.abs(got - want) / scale
