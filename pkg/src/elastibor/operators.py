"""Boundary operator assembly for rigid scattering, one azimuthal mode at a time.

The scattered field is sought as u = grad S_p[sigma] + curl S_s[J] with
scalar single layers at the pressure and shear wavenumbers.  Enforcing
u = -u_inc on the surface and projecting on the normal n, the meridian
tangent tau1 and the azimuthal direction e_theta gives, per mode m, a
3x3 block system on the density modes [sigma; J1; J2]:

    (-1/2 + K) sigma + N J = f        f   = -n . u_inc
    H sigma + (1/2 + M) J  = g        g_i = -(n x u_inc) . tau_i

K is the normal derivative of the pressure layer; H collects the two
components of n x grad S_p; N and M are the corresponding projections of
curl S_s.  Tangential target derivatives are rewritten, through the
surface calculus, as combinations whose Cauchy-type parts cancel: only
log-singular "slots" are ever integrated near the diagonal, with the
parameter derivative of the density split off explicitly (the *_dt
kernels below).

Assembly routes each (target node, source panel) pair by parameter
distance: separated pairs use the panel Gauss rule on the modal kernels;
the containing panel and panels within ``near_factor`` widths go through
the certified singular quadrature (or a precomputed log-product rule for
the containing panel when a table is supplied).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PanelMesh, coord_deltas, curve_frame
from .modal_kernels import primitive_block_batch
from .quadrature import (
    LogRuleTable,
    QuadratureError,
    reference_deriv_matrix,
    singular_rows,
)

# a source panel is treated as singular for a target within this many
# panel widths in the parameter
NEAR_PANEL_FACTOR = 1.0
SINGULAR_TOL = 3e-9
# families below this fraction of the batch max certify against the floor
# instead of their own scale: their absolute error budget is then
# SINGULAR_TOL * SINGULAR_FLOOR_FRAC * batch max.  The traction combos
# cancel down to ~1e-3 of the batch max on strongly curved panels while
# their noise stays at the primitive scale, so the floor must sit a decade
# above that ratio or the certificate saturates on noise
SINGULAR_FLOOR_FRAC = 1e-2
# log-product rules assume smooth-plus-log structure across the panel; near
# the axis the modal kernels localize at scale r_t instead, so table rows are
# used only when r_t exceeds this fraction of the panel arc width
TABLE_AXIS_FACTOR = 0.5

_SLOT_ORDER = ("g_p", "g_s", "dn_p", "dn_s", "K", "mt1", "mt2", "mq1", "mq2")
# families with an odd mode index flip sign for negative m
_ODD_SLOTS = frozenset({"mt2", "mq1"})


def parity_signs(n_nodes: int) -> np.ndarray:
    """Diagonal D with A(-m) = D A(m) D: the J1 block is odd, the rest even."""
    d = np.ones(3 * n_nodes)
    d[n_nodes : 2 * n_nodes] = -1.0
    return d


def _slot_counts(n_modes: int) -> dict[str, int]:
    full = n_modes + 2
    trimmed = n_modes + 1
    return {
        "g_p": full,
        "g_s": full,
        "dn_p": full,
        "dn_s": full,
        "K": trimmed,
        "mt1": trimmed,
        "mt2": trimmed,
        "mq1": trimmed,
        "mq2": trimmed,
    }


def _source_factors(r, dr, dz, d2r, d2z, speed) -> dict[str, np.ndarray]:
    """Per-source geometric factors entering the block recipes."""
    C = 1.0 / speed
    Cp = -(dr * d2r + dz * d2z) * C**3
    e1 = C * (Cp * dr + C * d2r)
    e2 = C * (Cp * dz + C * d2z)
    return {
        "rs": r,
        "drs": dr,
        "dzs": dz,
        "Js": speed,
        "csdrs": C * dr,
        "csdzs": C * dz,
        "e1": e1,
        "e2": e2,
        # curvature-type folds of the theta-row integration by parts
        "p3": (C * C * dr * dz) / r + e2,
        "q3": (C * C * dr * dr) / r + e1 - 1.0 / r,
    }


def _shift_all(f: np.ndarray, n_modes: int) -> tuple[np.ndarray, np.ndarray]:
    """Cos- and sin-weighted shifts of a mode-first family, modes 0..n_modes."""
    plus = f[1 : n_modes + 2]
    minus = np.concatenate([f[1:2], f[0:n_modes]], axis=0)
    return 0.5 * (plus + minus), -0.5 * (plus - minus)


def _combo_families(prim_p, prim_s, tgt, src, n_modes: int) -> dict[str, np.ndarray]:
    """Kernel slot families (mode-first) from primitive blocks.

    ``tgt`` and ``src`` hold factor arrays broadcastable against the pair
    axis of the primitives.  The returned combinations are exactly the
    quantities safe to integrate near the diagonal: their Cauchy parts
    cancel by construction.
    """
    M = n_modes
    gp = prim_p.g.T
    gs = prim_s.g.T
    dn_p = src["csdzs"] * prim_p.d_rs.T - src["csdrs"] * prim_p.d_zs.T
    dn_s = src["csdzs"] * prim_s.d_rs.T - src["csdrs"] * prim_s.d_zs.T
    K = tgt["ctdzt"] * prim_p.d_rt.T[: M + 1] - tgt["ctdrt"] * prim_p.d_zt.T[: M + 1]

    drt_s = prim_s.d_rt.T
    dzt_s = prim_s.d_zt.T
    sh2_dzt, sh3_dzt = _shift_all(dzt_s, M)
    sh2_drt, sh3_drt = _shift_all(drt_s, M)
    sh2_gs, sh3_gs = _shift_all(gs, M)

    mt1 = src["drs"] * sh2_dzt - src["dzs"] * drt_s[: M + 1]
    mt2 = sh3_dzt

    mvec = np.arange(M + 1).reshape((M + 1,) + (1,) * (gp.ndim - 1))
    zr = tgt["ctdzt"] / tgt["rt"]
    mq1 = -(
        zr * 1j * src["drs"] * sh3_gs
        + 1j * tgt["ctdzt"] * src["drs"] * sh3_drt
        - zr * 1j * mvec * src["drs"] * sh2_gs
        + tgt["ctdrt"] * (1j * mvec / tgt["rt"]) * src["dzs"] * gs[: M + 1]
        - tgt["ctdrt"] * 1j * src["drs"] * sh3_dzt
    )
    mq2 = -(
        zr * sh2_gs
        + tgt["ctdzt"] * sh2_drt
        - zr * mvec * sh3_gs
        - tgt["ctdrt"] * sh2_dzt
    )
    return {
        "g_p": gp,
        "g_s": gs,
        "dn_p": dn_p,
        "dn_s": dn_s,
        "K": K,
        "mt1": mt1,
        "mt2": mt2,
        "mq1": mq1,
        "mq2": mq2,
    }


def _pv_pieces(m: int, fam, tgt, src, W):
    """Principal-value block kernels at signed mode m, orientation-free.

    ``fam`` maps slot names to mode-first arrays whose trailing axes match
    ``W``; for pre-integrated singular rows pass W = 1.  Returns the f-row
    columns ('K', 'N1', 'N2', 'N2_dt'), the tau1 row ('Ht', 'Mt1', 'Mt2')
    and the theta row ('Hq', 'Hq_dt', 'Mq1', 'Mq2').  The *_dt kernels act
    on d/dt of the density and must be composed with the panel derivative.
    """
    mm = abs(m)
    sg = 1.0 if m >= 0 else -1.0

    def at(name):
        return fam[name][mm]

    def sh2(name):
        f = fam[name]
        return 0.5 * (f[mm + 1] + f[abs(mm - 1)])

    def sh3(name):
        f = fam[name]
        return sg * -0.5 * (f[mm + 1] - f[abs(mm - 1)])

    rsJs = src["rs"] * src["Js"]
    out = {}

    out["K"] = at("K") * (rsJs * W)
    out["Ht"] = (1j * m / tgt["rt"]) * at("g_p") * (rsJs * W)

    t1 = (tgt["ctdzt"] * src["p3"] * at("g_p") + tgt["ctdrt"] * src["q3"] * sh2("g_p")) * (
        rsJs * W
    )
    t2_theta = tgt["ctdrt"] * (m * sh3("g_p")) * (src["Js"] * W)
    t3 = -(
        tgt["ctdrt"] * (src["rs"] * src["dzs"]) * sh2("dn_p")
        - tgt["ctdzt"] * (src["rs"] * src["drs"]) * at("dn_p")
    ) * W
    out["Hq"] = -(t1 + t2_theta + t3)
    out["Hq_dt"] = -(
        tgt["ctdzt"] * src["csdzs"] * at("g_p") + tgt["ctdrt"] * src["csdrs"] * sh2("g_p")
    ) * (src["rs"] * W)

    kmat = (tgt["ctdrt"] * src["csdrs"] * at("g_s") + tgt["ctdzt"] * src["csdzs"] * sh2("g_s"))
    out["N1"] = (
        -1j * tgt["ctdzt"] * src["csdzs"] * src["Js"] * sh3("g_s") * W
        + (1j * m) * kmat * (src["Js"] * W)
        - 1j * tgt["ctdzt"] * rsJs * sh3("dn_s") * W
    )
    out["N2"] = (
        -(tgt["ctdrt"] * src["e1"] * at("g_s") + tgt["ctdzt"] * src["e2"] * sh2("g_s"))
        * (rsJs * W)
        - kmat * (src["drs"] * W)
        - tgt["ctdzt"] * (src["rs"] * src["drs"]) * sh2("dn_s") * W
        + tgt["ctdrt"] * (src["rs"] * src["dzs"]) * at("dn_s") * W
    )
    out["N2_dt"] = -kmat * (src["rs"] * W)

    out["Mt1"] = at("mt1") * (src["rs"] * W)
    out["Mt2"] = (-1j * sg) * at("mt2") * (rsJs * W)
    out["Mq1"] = sg * at("mq1") * (src["rs"] * W)
    out["Mq2"] = at("mq2") * (rsJs * W)
    return out


@dataclass
class ModeBlocks:
    """Oriented principal-value blocks at one mode, without jump terms."""

    m: int
    K: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    Ht: np.ndarray
    Mt1: np.ndarray
    Mt2: np.ndarray
    Hq: np.ndarray
    Mq1: np.ndarray
    Mq2: np.ndarray


class BoundaryAssembler:
    """Per-mode system matrices for one mesh and wavenumber pair.

    Mode-independent work (modal kernels at all node pairs, certified
    singular panel rows) happens once at construction; ``matrix(m)`` then
    assembles a (3n, 3n) system per mode.  ``log_table`` switches the
    containing-panel rows to interpolatory log-product rules.
    """

    def __init__(
        self,
        mesh: PanelMesh,
        kappa_p: float,
        kappa_s: float,
        n_modes: int,
        *,
        kernel_tol: float = 1e-12,
        singular_tol: float = SINGULAR_TOL,
        near_factor: float = NEAR_PANEL_FACTOR,
        log_table: LogRuleTable | None = None,
        target_chunk: int = 48,
    ):
        if kappa_p < 0 or kappa_s < 0:
            raise ValueError("wavenumbers must be nonnegative")
        if n_modes < 0:
            raise ValueError("n_modes must be nonnegative")
        self.mesh = mesh
        self.kappa_p = float(kappa_p)
        self.kappa_s = float(kappa_s)
        self.n_modes = int(n_modes)
        self.kernel_tol = float(kernel_tol)
        self.singular_tol = float(singular_tol)
        self.near_factor = float(near_factor)
        self.log_table = log_table

        f = mesh.frame
        self._tgt_col = {
            "rt": f.r[:, None],
            "ctdrt": (f.dr / f.speed)[:, None],
            "ctdzt": (f.dz / f.speed)[:, None],
        }
        self._src = _source_factors(f.r, f.dr, f.dz, f.d2r, f.d2z, f.speed)

        halfwidths = 0.5 * (mesh.panels[:, 1] - mesh.panels[:, 0])
        D = reference_deriv_matrix(mesh.p)
        self._Dk = [D / h for h in halfwidths]

        self._sing_mask = self._singular_panel_mask()
        W = np.where(
            self._sing_mask[:, mesh.panel_of], 0.0, mesh.weights_t[None, :]
        )
        self._W = W
        self._fam = self._build_smooth_families(target_chunk)
        self._sing = self._build_singular_rows()

    # --- construction -----------------------------------------------------

    def _singular_panel_mask(self) -> np.ndarray:
        """(n_nodes, n_panels) flags: route this pair through singular rows."""
        mesh = self.mesh
        t = mesh.t[:, None]
        a = mesh.panels[None, :, 0]
        b = mesh.panels[None, :, 1]
        gap = np.maximum(np.maximum(a - t, t - b), 0.0)
        return gap <= self.near_factor * (b - a)

    def _build_smooth_families(self, target_chunk: int) -> dict[str, np.ndarray]:
        mesh = self.mesh
        n = mesh.n_nodes
        M = self.n_modes
        f = mesh.frame
        counts = _slot_counts(M)
        fam = {name: np.zeros((cnt, n, n), complex) for name, cnt in counts.items()}
        src_all = self._src
        for lo in range(0, n, target_chunk):
            it = np.arange(lo, min(lo + target_chunk, n))
            idx_t = np.repeat(it, n)
            idx_s = np.tile(np.arange(n), it.size)
            keep = idx_t != idx_s
            ti, si = idx_t[keep], idx_s[keep]
            prim_p = primitive_block_batch(
                f.r[ti], f.z[ti], f.r[si], f.z[si], self.kappa_p, M, self.kernel_tol
            )
            prim_s = (
                prim_p
                if self.kappa_s == self.kappa_p
                else primitive_block_batch(
                    f.r[ti], f.z[ti], f.r[si], f.z[si], self.kappa_s, M, self.kernel_tol
                )
            )
            tgt = {
                "rt": f.r[ti],
                "ctdrt": (f.dr / f.speed)[ti],
                "ctdzt": (f.dz / f.speed)[ti],
            }
            src = {k: v[si] for k, v in src_all.items()}
            combos = _combo_families(prim_p, prim_s, tgt, src, M)
            for name, cnt in counts.items():
                block = np.zeros((cnt, it.size * n), complex)
                block[:, keep] = combos[name]
                fam[name][:, it] = block.reshape(cnt, it.size, n)
        return fam

    def _slot_eval_for(self, i: int):
        mesh = self.mesh
        f = mesh.frame
        M = self.n_modes
        rt, zt, t_i = f.r[i], f.z[i], mesh.t[i]
        tgt = {
            "rt": rt,
            "ctdrt": f.dr[i] / f.speed[i],
            "ctdzt": f.dz[i] / f.speed[i],
        }

        def slot_eval(ts: np.ndarray) -> np.ndarray:
            fr = curve_frame(mesh.curve, ts)
            src = _source_factors(fr.r, fr.dr, fr.dz, fr.d2r, fr.d2z, fr.speed)
            ones = np.full(ts.shape, 1.0)
            # cancellation-free deltas: the combos magnify any rho0 noise
            dr, dz = coord_deltas(mesh.curve, t_i, ts)
            prim_p = primitive_block_batch(
                rt * ones, zt * ones, fr.r, fr.z, self.kappa_p, M, self.kernel_tol,
                dr=dr, dz=dz,
            )
            prim_s = (
                prim_p
                if self.kappa_s == self.kappa_p
                else primitive_block_batch(
                    rt * ones, zt * ones, fr.r, fr.z, self.kappa_s, M, self.kernel_tol,
                    dr=dr, dz=dz,
                )
            )
            combos = _combo_families(prim_p, prim_s, tgt, src, M)
            return np.concatenate([combos[name] for name in _SLOT_ORDER], axis=0)

        return slot_eval, tgt

    def _build_singular_rows(self) -> dict[tuple[int, int], dict[str, np.ndarray]]:
        mesh = self.mesh
        counts = _slot_counts(self.n_modes)
        arcw = np.array(
            [mesh.weights_arc[mesh.panel_slice(k)].sum() for k in range(mesh.n_panels)]
        )
        out: dict[tuple[int, int], dict[str, np.ndarray]] = {}
        for i in range(mesh.n_nodes):
            slot_eval, _ = self._slot_eval_for(i)
            for k in np.nonzero(self._sing_mask[i])[0]:
                a, b = mesh.panels[k]
                use_table = (
                    self.log_table is not None
                    and mesh.panel_of[i] == k
                    and mesh.frame.r[i] >= TABLE_AXIS_FACTOR * arcw[k]
                )
                if use_table:
                    rows = self.log_table.rows(slot_eval, a, b, mesh.t[i], mesh.p)
                else:
                    rows = self._certified_rows(slot_eval, a, b, mesh.t[i])
                fam_rows = {}
                ofs = 0
                for name in _SLOT_ORDER:
                    cnt = counts[name]
                    fam_rows[name] = rows[ofs : ofs + cnt]
                    ofs += cnt
                out[(i, int(k))] = fam_rows
        return out

    def _certified_rows(self, slot_eval, a: float, b: float, s0: float) -> np.ndarray:
        last_err: QuadratureError | None = None
        for levels in (12, 16, 19, 23):
            try:
                rows, _ = singular_rows(
                    slot_eval,
                    a,
                    b,
                    s0,
                    self.mesh.p,
                    levels=levels,
                    tol=self.singular_tol,
                    floor_frac=SINGULAR_FLOOR_FRAC,
                )
                return rows
            except QuadratureError as exc:
                last_err = exc
        raise last_err

    # --- per-mode assembly --------------------------------------------------

    def _apply_dt_right(self, mat: np.ndarray) -> np.ndarray:
        out = np.empty_like(mat)
        for k in range(self.mesh.n_panels):
            sl = self.mesh.panel_slice(k)
            out[:, sl] = mat[:, sl] @ self._Dk[k]
        return out

    def pv_blocks(self, m: int) -> ModeBlocks:
        """Oriented PV operator blocks at signed mode m (no jump terms)."""
        if abs(m) > self.n_modes:
            raise ValueError("mode exceeds the assembled range")
        mesh = self.mesh
        pieces = _pv_pieces(m, self._fam, self._tgt_col, self._src, self._W)
        blocks = {
            name: pieces[name]
            for name in ("K", "N1", "Ht", "Mt1", "Mt2", "Mq1", "Mq2")
        }
        blocks["N2"] = pieces["N2"] + self._apply_dt_right(pieces["N2_dt"])
        blocks["Hq"] = pieces["Hq"] + self._apply_dt_right(pieces["Hq_dt"])

        src_all = self._src
        f = mesh.frame
        for (i, k), fam_rows in self._sing.items():
            sl = mesh.panel_slice(k)
            tgt = {
                "rt": f.r[i],
                "ctdrt": f.dr[i] / f.speed[i],
                "ctdzt": f.dz[i] / f.speed[i],
            }
            src = {name: v[sl] for name, v in src_all.items()}
            rp = _pv_pieces(m, fam_rows, tgt, src, 1.0)
            for name in ("K", "N1", "Ht", "Mt1", "Mt2", "Mq1", "Mq2"):
                blocks[name][i, sl] += rp[name]
            blocks["N2"][i, sl] += rp["N2"] + rp["N2_dt"] @ self._Dk[k]
            blocks["Hq"][i, sl] += rp["Hq"] + rp["Hq_dt"] @ self._Dk[k]

        s = mesh.orientation
        return ModeBlocks(m=m, **{name: s * arr for name, arr in blocks.items()})

    def double_layer(self, m: int, wave: str = "p") -> np.ndarray:
        """Oriented PV matrix of the source-normal kernel dG/dn(y) at mode m.

        Not used by the solve itself; exposed as a diagnostic.  At kappa = 0
        and m = 0 applying it to the constant 1 returns -1/2 at every node of
        a closed surface, which checks the weight layout and the singular
        rows end to end.
        """
        if abs(m) > self.n_modes:
            raise ValueError("mode exceeds the assembled range")
        if wave not in ("p", "s"):
            raise ValueError("wave must be 'p' or 's'")
        name = "dn_" + wave
        mesh = self.mesh
        src = self._src
        rsJs = src["rs"] * src["Js"]
        mat = self._fam[name][abs(m)] * (rsJs * self._W)
        for (i, k), fam_rows in self._sing.items():
            sl = mesh.panel_slice(k)
            mat[i, sl] += fam_rows[name][abs(m)] * rsJs[sl]
        return mesh.orientation * mat

    def matrix(self, m: int) -> np.ndarray:
        """Full (3n, 3n) mode-m system with jump terms, unknowns [sigma; J1; J2]."""
        b = self.pv_blocks(m)
        n = self.mesh.n_nodes
        A = np.empty((3 * n, 3 * n), complex)
        A[0:n, 0:n] = b.K
        A[0:n, n : 2 * n] = b.N1
        A[0:n, 2 * n :] = b.N2
        A[n : 2 * n, 0:n] = b.Ht
        A[n : 2 * n, n : 2 * n] = b.Mt1
        A[n : 2 * n, 2 * n :] = b.Mt2
        A[2 * n :, 0:n] = b.Hq
        A[2 * n :, n : 2 * n] = b.Mq1
        A[2 * n :, 2 * n :] = b.Mq2
        idx = np.arange(n)
        A[idx, idx] -= 0.5
        A[n + idx, n + idx] += 0.5
        A[2 * n + idx, 2 * n + idx] += 0.5
        return A
