"""Panel quadrature: smooth rules, singular row integrals, log-product tables.

Regular (well-separated) interactions use the mesh's Gauss-Legendre weights
directly.  For a target on or adjacent to a source panel the kernels behave
like a(t) + b(t) log|t - s0| near the singular parameter s0, and two
backends compute the row of quadrature weights mapping density node values
to the panel integral:

* ``singular_rows`` (always available): the panel is split at s0 and each
  leg is integrated on dyadic subpanels graded toward the singularity.  The
  innermost strip is never sampled; a local model
  poly3(u) + poly3(u) log u is fitted to kernel values on the three
  resolved subpanels next to the strip and the strip integral of the model
  is added in closed form (the fitted log part is subtracted and integrated
  analytically).  Rows are assembled at two depths and the difference is a
  certificate; disagreement raises QuadratureError.  Kernels are evaluated
  no closer than one strip width from the singularity, which keeps the
  combined (cancellation-built) kernels in their numerically stable range.

* ``LogRuleTable`` (acceleration): interpolatory product rules on 3p Gauss
  support nodes, exact for polynomials of degree < 2p and for
  P_k(x) log|x - s0|, k < p.  Moments come from QUADPACK with a split at
  s0.  Rules are cached by (p, relative singular location) and can be
  saved to / loaded from a plain-text file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.integrate import quad


class QuadratureError(RuntimeError):
    """Raised when a certified quadrature fails to converge."""


@lru_cache(maxsize=64)
def gauss_legendre(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the q-point Gauss-Legendre rule on [-1, 1]."""
    x, w = leggauss(q)
    return x, w


@lru_cache(maxsize=64)
def legendre_coeff_matrix(p: int) -> np.ndarray:
    """U with (U @ f_nodes) = Legendre coefficients of the degree<p interpolant.

    Uses the discrete orthogonality of Gauss-Legendre nodes, so no matrix
    inversion is involved: U[n, j] = (2n+1)/2 * w_j * P_n(x_j).
    """
    x, w = gauss_legendre(p)
    V = legvander(x, p - 1)  # (p, p), V[j, n] = P_n(x_j)
    scale = (2.0 * np.arange(p) + 1.0) / 2.0
    return scale[:, None] * (V.T * w[None, :])


@lru_cache(maxsize=64)
def reference_deriv_matrix(p: int) -> np.ndarray:
    """D with (D @ f_nodes) = d/dx of the interpolant at the nodes, on [-1,1]."""
    x, _ = gauss_legendre(p)
    U = legendre_coeff_matrix(p)
    # derivative of Legendre series via the coefficient recurrence
    eye = np.eye(p)
    dcoef = np.stack(
        [np.polynomial.legendre.legder(eye[:, j]) for j in range(p)], axis=1
    )  # (p-1, p)
    Vd = legvander(x, p - 2) if p >= 2 else np.zeros((p, 0))
    return Vd @ dcoef @ U


def interp_matrix(p: int, x_new: np.ndarray) -> np.ndarray:
    """L with (L @ f_nodes) = interpolant values at x_new (reference coords)."""
    U = legendre_coeff_matrix(p)
    return legvander(np.asarray(x_new, float), p - 1) @ U


# --- closed-form log moments --------------------------------------------

# int_0^1 Pshift_n(u) ln u du = -1 (n=0), (-1)^(n+1)/(n(n+1)) otherwise
def _shifted_legendre_log_moments(n: int) -> np.ndarray:
    out = np.empty(n)
    out[0] = -1.0
    k = np.arange(1, n)
    out[1:] = (-1.0) ** (k + 1) / (k * (k + 1.0))
    return out


@lru_cache(maxsize=8)
def _strip_projection(p: int, q: int = 48):
    """Quadrature data for strip integrals int_0^1 (poly + poly*ln u) P_n du."""
    x, w = gauss_legendre(q)
    u = 0.5 * (x + 1.0)  # [0, 1]
    wu = 0.5 * w
    deg = p - 1 + _FIT_DEG  # max degree of poly * P_n products
    Vs = legvander(2.0 * u - 1.0, deg)  # shifted Legendre values
    scale = (2.0 * np.arange(deg + 1) + 1.0)
    proj = scale[:, None] * (Vs.T * wu[None, :])  # function values -> coeffs
    lam = _shifted_legendre_log_moments(deg + 1)
    # log-weight row: int_0^1 f(u) ln u du ~ lam @ proj @ f(u_k)
    logw = lam @ proj
    return u, wu, logw


_FIT_DEG = 4  # polynomial degree of the strip model (exclusive)


@dataclass
class _Leg:
    e: float  # singular end (parameter)
    direction: float  # +1 integrates [e, e+width], -1 integrates [e-width, e]
    width: float
    singular_at_e: bool  # True when s0 == e (self target); enables the strip


def _make_legs(a: float, b: float, s0: float) -> list[_Leg]:
    if a < s0 < b:
        return [
            _Leg(e=s0, direction=-1.0, width=s0 - a, singular_at_e=True),
            _Leg(e=s0, direction=+1.0, width=b - s0, singular_at_e=True),
        ]
    # target off-panel: grade toward the nearest end, no strip model
    if s0 <= a:
        return [_Leg(e=a, direction=+1.0, width=b - a, singular_at_e=False)]
    return [_Leg(e=b, direction=-1.0, width=b - a, singular_at_e=False)]


def _leg_levels(leg: _Leg, s0: float, levels: int) -> int:
    if leg.singular_at_e:
        return levels
    gap = abs(leg.e - s0)
    if gap <= 0.0:
        return levels
    if gap >= leg.width:
        return 1
    return min(levels, max(1, int(math.ceil(math.log2(leg.width / gap))) + 2))


def _leg_nodes(leg: _Leg, n_lev: int, q: int):
    """Dyadic piece nodes in u = distance from the singular end."""
    x, w = gauss_legendre(q)
    hi = leg.width / 2.0 ** np.arange(n_lev)  # piece outer edges
    lo = hi / 2.0
    if not leg.singular_at_e:
        lo = lo.copy()
        lo[-1] = 0.0  # innermost piece reaches the end, no strip
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wu = (half[:, None] * w[None, :]).ravel()
    return u, wu, lo[-1]  # strip width (0 when no strip)


def _fit_strip_models(u_fit: np.ndarray, k_fit: np.ndarray, strip: float) -> np.ndarray:
    """Least-squares coefficients of k ~ sum a_j v^j + sum b_j v^j ln v, v=u/strip.

    k_fit has shape (n_fam, n_samples); returns (n_fam, 2*_FIT_DEG).
    """
    v = u_fit / strip
    lv = np.log(v)
    cols = [v ** j for j in range(_FIT_DEG)] + [v ** j * lv for j in range(_FIT_DEG)]
    Phi = np.stack(cols, axis=1)
    norm = np.linalg.norm(Phi, axis=0)
    coef, *_ = np.linalg.lstsq(Phi / norm[None, :], k_fit.T, rcond=None)
    return (coef / norm[:, None]).T


def _strip_integrals(
    models: np.ndarray, leg: _Leg, strip: float, tau_of_u, p: int
) -> np.ndarray:
    """int over the strip of k_model(t) P_n(tau(t)) dt for n < p; (n_fam, p)."""
    u01, w01, logw = _strip_projection(p)
    tau = tau_of_u(leg.e + leg.direction * strip * u01)
    Pn = legvander(tau, p - 1)  # (q, p)
    vpow = np.stack([u01 ** j for j in range(_FIT_DEG)], axis=0)  # (deg, q)
    a = models[:, :_FIT_DEG]
    b = models[:, _FIT_DEG:]
    ka = a @ vpow  # (n_fam, q) smooth part on the strip
    kb = b @ vpow
    smooth = (ka * w01[None, :]) @ Pn
    logpart = (kb * logw[None, :]) @ Pn
    return strip * (smooth + logpart)


def singular_rows(
    kernel_eval,
    a: float,
    b: float,
    s0: float,
    p: int,
    *,
    levels: int = 10,
    q: int = 24,
    tol: float = 1e-8,
    rel_floor: float = 1e-14,
    floor_frac: float = 0.0,
):
    """Quadrature rows for int_a^b k_f(t) sigma(t) dt with singularity at s0.

    kernel_eval maps a parameter batch (n,) to kernel values (n_fam, n).
    Returns (rows, err) where rows has shape (n_fam, p) acting on density
    values at the panel's Gauss nodes, and err is the certified relative
    difference between the two refinement depths.  Raises QuadratureError
    when the certificate exceeds ``tol``.  With floor_frac > 0 each family
    certifies relative to at least floor_frac times the largest family
    norm, so families that are negligible within a batch cannot fail on
    noise alone.
    """
    if not b > a:
        raise ValueError("panel must satisfy a < b")
    legs = _make_legs(a, b, s0)
    U = legendre_coeff_matrix(p)

    def tau_of(t):
        return (2.0 * t - a - b) / (b - a)

    def chain_pieces(leg: _Leg, n_lev: int):
        u, wu, strip = _leg_nodes(leg, n_lev, q)
        t = leg.e + leg.direction * u
        k = np.asarray(kernel_eval(t))
        if k.ndim == 1:
            k = k[None, :]
        per_piece = k.reshape(k.shape[0], n_lev, q)
        Pw = (legvander(tau_of(t), p - 1) * wu[:, None]).reshape(n_lev, q, p)
        return per_piece, Pw, k, u, strip

    I_lo = None
    I_hi = None
    for leg in legs:
        n_base = _leg_levels(leg, s0, levels)
        n_lev = n_base + 2
        if leg.singular_at_e:
            # one node set serves both depths; only the strip model differs
            per_piece, Pw, k, u, strip = chain_pieces(leg, n_lev)
            contrib_hi = np.einsum("flq,lqn->fn", per_piece, Pw)
            contrib_lo = np.einsum("flq,lqn->fn", per_piece[:, :n_base], Pw[:n_base])
            sl_hi = slice((n_lev - 3) * q, n_lev * q)
            m_hi = _fit_strip_models(u[sl_hi], k[:, sl_hi], strip)
            contrib_hi = contrib_hi + _strip_integrals(m_hi, leg, strip, tau_of, p)
            strip_lo = strip * 4.0
            sl_lo = slice((n_base - 3) * q, n_base * q)
            m_lo = _fit_strip_models(u[sl_lo], k[:, sl_lo], strip_lo)
            contrib_lo = contrib_lo + _strip_integrals(m_lo, leg, strip_lo, tau_of, p)
        else:
            pp, Pw, *_ = chain_pieces(leg, n_lev)
            contrib_hi = np.einsum("flq,lqn->fn", pp, Pw)
            pp, Pw, *_ = chain_pieces(leg, n_base)
            contrib_lo = np.einsum("flq,lqn->fn", pp, Pw)
        I_hi = contrib_hi if I_hi is None else I_hi + contrib_hi
        I_lo = contrib_lo if I_lo is None else I_lo + contrib_lo

    rows_hi = I_hi @ U
    rows_lo = I_lo @ U
    scale = np.maximum(np.abs(rows_hi).max(axis=1), rel_floor)
    if floor_frac > 0.0:
        scale = np.maximum(scale, floor_frac * scale.max())
    err = float((np.abs(rows_hi - rows_lo).max(axis=1) / scale).max())
    if err > tol:
        raise QuadratureError(
            f"singular panel quadrature did not certify: err={err:.3e} > tol={tol:.3e}"
        )
    return rows_hi, err


# --- product-integration tables ------------------------------------------


def _log_moment(k: int, s0: float) -> float:
    """int_{-1}^{1} P_k(x) log|x - s0| dx via QUADPACK with a split at s0."""
    import warnings

    c = np.zeros(k + 1)
    c[k] = 1.0

    def f(x):
        return np.polynomial.legendre.legval(x, c) * math.log(abs(x - s0))

    pts = [s0] if -1.0 < s0 < 1.0 else []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, _ = quad(
            f, -1.0, 1.0, points=pts or None, limit=400, epsabs=1e-14, epsrel=1e-13
        )
    return val


def _support_nodes(p: int, s0: float) -> np.ndarray:
    """Support nodes on [-1,1]: a plain Gauss set plus dyadic clusters at s0.

    Clustering keeps the log columns of the exactness system numerically
    independent of the polynomial ones, which a single Gauss set cannot do
    for p beyond ~10.  Nodes stay at least ~1e-2 panel widths away from the
    singular point so the kernels are evaluated in their stable range.
    """
    base, _ = gauss_legendre(2 * p)
    parts = [base]
    xg, _ = gauss_legendre(8)
    levels = 5
    ends = []
    if -1.0 < s0 < 1.0:
        ends = [(s0, -1.0), (s0, 1.0)]
    elif abs(s0) < 2.0:
        ends = [(-1.0, 1.0)] if s0 <= -1.0 else [(1.0, -1.0)]
    for e, sgn in ends:
        width = (1.0 - sgn * e) if abs(e) < 1.0 else 2.0
        hi = width / 2.0 ** np.arange(levels)
        lo = hi / 2.0
        mid = 0.5 * (hi + lo)
        half = 0.5 * (hi - lo)
        u = e + sgn * (mid[:, None] + half[:, None] * xg[None, :]).ravel()
        parts.append(u)
    return np.unique(np.concatenate(parts))


def build_log_rule(p: int, s0_rel: float) -> tuple[np.ndarray, np.ndarray]:
    """Support nodes and weights exact for {P_k}_{k<2p} and {P_k log|x-s0|}_{k<p}.

    The system is underdetermined (more nodes than constraints); the
    minimum-norm weights are taken, which keeps the rule well behaved.
    """
    u = _support_nodes(p, s0_rel)
    rows = []
    rhs = []
    V = legvander(u, 2 * p - 1)
    for k in range(2 * p):
        rows.append(V[:, k])
        rhs.append(2.0 if k == 0 else 0.0)
    lg = np.log(np.abs(u - s0_rel))
    for k in range(p):
        rows.append(V[:, k] * lg)
        rhs.append(_log_moment(k, s0_rel))
    A = np.stack(rows, axis=0)
    bvec = np.asarray(rhs)
    nrm = np.maximum(np.abs(A).max(axis=1), 1e-30)
    w, *_ = np.linalg.lstsq(A / nrm[:, None], bvec / nrm, rcond=None)
    return u, w


@dataclass
class LogRuleTable:
    """Cache of log-product rules keyed by (p, rounded relative location)."""

    rules: dict[tuple[int, float], tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict
    )

    @staticmethod
    def _key(p: int, s0_rel: float) -> tuple[int, float]:
        return p, round(float(s0_rel), 10)

    def get(self, p: int, s0_rel: float) -> tuple[np.ndarray, np.ndarray]:
        key = self._key(p, s0_rel)
        if key not in self.rules:
            self.rules[key] = build_log_rule(p, key[1])
        return self.rules[key]

    def rows(self, kernel_eval, a: float, b: float, s0: float, p: int) -> np.ndarray:
        """Quadrature rows (n_fam, p) from the product rule for this panel."""
        s0_rel = (2.0 * s0 - a - b) / (b - a)
        u, w = self.get(p, s0_rel)
        half = 0.5 * (b - a)
        t = 0.5 * (a + b) + half * u
        k = np.asarray(kernel_eval(t))
        if k.ndim == 1:
            k = k[None, :]
        L = interp_matrix(p, u)  # (3p, p): density node values -> support values
        return half * ((k * w[None, :]) @ L)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(f"logrule v1 {len(self.rules)}\n")
            for (p, s0), (u, w) in sorted(self.rules.items()):
                fh.write(f"rule {p} {float(s0)!r} {len(u)}\n")
                for ui, wi in zip(u, w):
                    fh.write(f"{float(ui)!r} {float(wi)!r}\n")

    @classmethod
    def load(cls, path: str) -> "LogRuleTable":
        table = cls()
        with open(path) as fh:
            header = fh.readline().split()
            if header[:2] != ["logrule", "v1"]:
                raise ValueError(f"{path}: not a log-rule table file")
            n_rules = int(header[2])
            for _ in range(n_rules):
                fields = fh.readline().split()
                if len(fields) != 4 or fields[0] != "rule":
                    raise ValueError(f"{path}: malformed rule header")
                _, p_s, s0_s, n_s = fields
                p, n = int(p_s), int(n_s)
                vals = [fh.readline().split() for _ in range(n)]
                u = np.array([float(v[0]) for v in vals])
                w = np.array([float(v[1]) for v in vals])
                table.rules[(p, float(s0_s))] = (u, w)
        return table
