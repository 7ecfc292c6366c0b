import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastibor.modal_kernels import (
    FAR_DELTA,
    ModalKernelError,
    ModalKernelRequest,
    eval_derivative_blocks,
    eval_g1_block,
    g23_from_g1,
    primitive_block_batch,
    toroidal_q,
    _far_group,
    _near_group,
)
from elastibor.oracles import modal_oracle, modal_oracle_weighted, relative_mode_errors

# Representative pairs: one with rho0 beyond the far cutoff, one well inside it.
FAR_PAIR = (1.2, 0.3, 0.5, -2.1)
NEAR_PAIR = (1.0, 0.1, 1.1, 0.25)

# Frozen from oracles.modal_oracle (adaptive oscillatory quadrature of the
# defining integrals), so the fast paths are pinned without re-running quad.
FROZEN = {
    (FAR_PAIR, 1.7, "g", 0): (-0.016892237125216307 - 0.17687502259059318j),
    (FAR_PAIR, 1.7, "g", 4): (1.1042255320421876e-05 + 7.281665938856373e-06j),
    (FAR_PAIR, 1.7, "d_rt", 0): (0.13077557905078757 + 0.023972850564518672j),
    (FAR_PAIR, 1.7, "d_rt", 4): (2.3795032950132923e-05 + 2.1520546897715615e-05j),
    (NEAR_PAIR, 1.7, "g", 0): (0.0991914222072004 + 0.2783646505950842j),
    (NEAR_PAIR, 1.7, "g", 7): (0.05075865304208126 + 1.7625326311290768e-09j),
    (NEAR_PAIR, 1.7, "d_zt", 0): (0.765352212708056 + 0.06597176504777352j),
    (NEAR_PAIR, 1.7, "d_zt", 7): (0.3745175961320288 + 4.5867094844442846e-11j),
    (NEAR_PAIR, 0.0, "g", 0): (0.5819743461373172 + 0j),
    (NEAR_PAIR, 0.0, "g", 3): (0.1356749511244311 + 0j),
    (NEAR_PAIR, 0.0, "d_rs", 2): (-0.44300724004673014 + 0j),
}

FAMS = ("g", "d_rt", "d_zt", "d_rs")


def _blocks(pair, kappa, n_modes, backend="auto", tol=1e-12):
    rt, zt, rs, zs = pair
    return primitive_block_batch([rt], [zt], [rs], [zs], kappa, n_modes, tol, backend)


def test_frozen_modes():
    by_case = {}
    for (pair, kappa, fam, m), want in FROZEN.items():
        by_case.setdefault((pair, kappa), []).append((fam, m, want))
    for (pair, kappa), entries in by_case.items():
        blocks = _blocks(pair, kappa, n_modes=8)
        for fam, m, want in entries:
            got = getattr(blocks, fam)[0, m]
            assert abs(got - want) <= 1e-11 * max(abs(want), 1e-6), (pair, kappa, fam, m)


def test_branch_selection():
    far = _blocks(FAR_PAIR, 1.7, 4)
    near = _blocks(NEAR_PAIR, 1.7, 4)
    assert far.branch[0] == "F"
    assert near.branch[0] == "N"


@pytest.mark.parametrize(
    "pair,kappa,tol",
    [
        (FAR_PAIR, 1.7, 1e-10),
        (NEAR_PAIR, 1.7, 1e-8),
        (NEAR_PAIR, 0.0, 1e-8),
        (NEAR_PAIR, 20.0, 1e-8),
    ],
    ids=["far", "near", "static", "high-freq"],
)
def test_families_match_oscillatory_quadrature(pair, kappa, tol):
    M = 6
    blocks = _blocks(pair, kappa, M)
    for fam in FAMS:
        got = getattr(blocks, fam)[0]
        want = np.array(
            [modal_oracle(*pair, kappa, m, fam) for m in range(M + 2)]
        )
        rel = relative_mode_errors(got, want)
        assert rel.max() <= tol, (fam, rel.max())


def test_dzs_is_negated_dzt():
    blocks = _blocks(NEAR_PAIR, 1.7, 4)
    assert np.array_equal(blocks.d_zs, -blocks.d_zt)
    want = modal_oracle(*NEAR_PAIR, 1.7, 2, "d_zs")
    assert abs(blocks.d_zs[0, 2] - want) <= 1e-9 * abs(want)


def test_g23_shift_matches_weighted_quadrature():
    M = 5
    blocks = _blocks(FAR_PAIR, 1.7, M)
    g2, g3 = g23_from_g1(blocks.g)
    assert g2.shape[-1] == M + 1
    assert g3[0, 0] == 0.0
    for m in range(M + 1):
        want2 = modal_oracle_weighted(*FAR_PAIR, 1.7, m, "cos")
        assert abs(g2[0, m] - want2) <= 1e-10 * max(abs(want2), 1e-5)
        if m >= 1:
            want3 = modal_oracle_weighted(*FAR_PAIR, 1.7, m, "sin")
            assert abs(g3[0, m] - want3) <= 1e-10 * max(abs(want3), 1e-5)


def test_far_and_near_paths_agree_at_the_boundary():
    # rho0 close to max(rt, rs): both evaluation paths are valid here.
    rt, zt, rs, zs = 1.0, 0.0, 0.8, 0.97
    args = (np.array([rt]), np.array([zt]), np.array([rs]), np.array([zs]),
            np.array([rt - rs]), np.array([zt - zs]), 2.3, 8)
    out_f = _far_group(*args, K=4096, tol=1e-13)
    out_n = _near_group(*args, K=4096, tol=1e-13)
    assert out_f[-1].all() and out_n[-1].all()
    for a, b in zip(out_f[:4], out_n[:4]):
        scale = np.abs(b).max()
        assert np.abs(a - b).max() <= 1e-12 * scale


def test_adaptive_backend_agrees_with_auto():
    for pair, kappa in [(FAR_PAIR, 1.7), (NEAR_PAIR, 1.7), (NEAR_PAIR, 0.0)]:
        fast = _blocks(pair, kappa, 4)
        slow = _blocks(pair, kappa, 4, backend="adaptive")
        assert slow.branch[0] == "A"
        for fam in FAMS:
            a = getattr(fast, fam)
            b = getattr(slow, fam)
            assert np.abs(a - b).max() <= 1e-9 * np.abs(a).max()


def test_request_interface_and_evenness():
    req = ModalKernelRequest(*NEAR_PAIR, kappa=1.7, n_modes=6)
    vals = eval_g1_block(req)
    assert vals.branch == "near"
    assert vals.n_modes == 6
    assert vals.get(-3) == vals.get(3)
    ders = eval_derivative_blocks(req)
    assert set(ders) == {"d_rt", "d_zt", "d_rs", "d_zs"}
    assert ders["d_zs"].get(2) == -ders["d_zt"].get(2)


def test_coincident_pair_rejected():
    with pytest.raises(ValueError):
        primitive_block_batch([1.0], [0.5], [1.0], [0.5], 2.0, 4)


def test_impossible_tolerance_raises():
    # tol = 0 can never certify a decaying spectrum: the grid doubles to its
    # cap and the batch must fail loudly rather than return junk.
    with pytest.raises(ModalKernelError):
        _blocks(NEAR_PAIR, 1.7, 4, tol=0.0)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        _blocks(NEAR_PAIR, 1.7, 4, backend="fft")


@given(
    rt=st.floats(0.3, 2.0),
    rs=st.floats(0.3, 2.0),
    dz=st.floats(0.15, 3.0),
    kappa=st.floats(0.0, 12.0),
)
@settings(max_examples=20, deadline=None)
def test_modes_stable_under_mode_count(rt, rs, dz, kappa):
    # Requesting more modes changes the grid size but not the shared modes.
    lo = primitive_block_batch([rt], [0.0], [rs], [dz], kappa, 3)
    hi = primitive_block_batch([rt], [0.0], [rs], [dz], kappa, 9)
    for fam in FAMS:
        a = getattr(lo, fam)[0]
        b = getattr(hi, fam)[0, : a.shape[0]]
        assert np.abs(a - b).max() <= 1e-10 * max(np.abs(b).max(), 1e-300)


def test_batch_mixes_branches():
    rts = np.array([FAR_PAIR[0], NEAR_PAIR[0]])
    zts = np.array([FAR_PAIR[1], NEAR_PAIR[1]])
    rss = np.array([FAR_PAIR[2], NEAR_PAIR[2]])
    zss = np.array([FAR_PAIR[3], NEAR_PAIR[3]])
    blocks = primitive_block_batch(rts, zts, rss, zss, 1.7, 5)
    assert list(blocks.branch) == ["F", "N"]
    solo = _blocks(NEAR_PAIR, 1.7, 5)
    assert np.abs(blocks.g[1] - solo.g[0]).max() <= 1e-14 * np.abs(solo.g).max()


# --- half-integer Legendre Q ------------------------------------------------


def _mp_toroidal_q(chim1, mu_max, dps=60):
    """Reference Q_{mu-1/2}(1 + chim1) in high-precision arithmetic.

    Near chi = 1 the forward recurrence is stable and exact elliptic seeds
    dominate; away from it mpmath's hypergeometric evaluation is reliable.
    """
    with mp.workdps(dps):
        chim1 = mp.mpf(chim1)
        chi = 1 + chim1
        if chim1 < mp.mpf("0.05"):
            m_ell = 2 / (2 + chim1)
            q = [mp.sqrt(m_ell) * mp.ellipk(m_ell)]
            q.append(chi * q[0] - mp.sqrt(2 * (2 + chim1)) * mp.ellipe(m_ell))
            for mu in range(1, mu_max):
                q.append((2 * mu * chi * q[mu] - (mu - 0.5) * q[mu - 1]) / (mu + 0.5))
        else:
            # type=3 picks the branch that is real on (1, inf)
            q = [mp.legenq(mu - 0.5, 0, chi, type=3).real for mu in range(mu_max + 1)]
        return [float(v) for v in q[: mu_max + 1]]


def test_mp_reference_seeds_match_legenq():
    # Anchors the elliptic seed formulas to an independent evaluation at a
    # chi where legenq is trustworthy.
    with mp.workdps(50):
        chi = mp.mpf("1.5")
        m_ell = 2 / (1 + chi)
        q0 = mp.sqrt(m_ell) * mp.ellipk(m_ell)
        q1 = chi * q0 - mp.sqrt(2 * (1 + chi)) * mp.ellipe(m_ell)
        assert abs(q0 - mp.legenq(-0.5, 0, chi, type=3).real) < mp.mpf("1e-40")
        assert abs(q1 - mp.legenq(0.5, 0, chi, type=3).real) < mp.mpf("1e-40")


@pytest.mark.parametrize(
    "chim1", [1e-10, 1e-4, 1e-2, 0.5, 2.0, 49.0, 1e6 - 1.0], ids=str
)
def test_toroidal_q_against_mpmath(chim1):
    mu_max = 60
    q, _ = toroidal_q(np.array([chim1]), mu_max)
    ref = np.array(_mp_toroidal_q(chim1, mu_max))
    # at very large chi the high modes underflow double precision; only the
    # representable ones are comparable
    ok = np.abs(ref) > 1e-280
    assert ok[:10].all()
    rel = np.abs(q[0, ok] - ref[ok]) / np.abs(ref[ok])
    assert rel.max() <= 5e-13
    assert np.abs(q[0, ~ok]).max(initial=0.0) <= 1e-280


@pytest.mark.parametrize("chim1", [1e-4, 0.5, 49.0], ids=str)
def test_toroidal_q_derivative_against_mp_diff(chim1):
    mu_max = 12
    q, qp = toroidal_q(np.array([chim1]), mu_max)
    with mp.workdps(50):
        chi = 1 + mp.mpf(chim1)
        for mu in (0, 1, 5, 12):
            ref = float(mp.diff(lambda x: mp.legenq(mu - 0.5, 0, x, type=3).real, chi))
            assert abs(qp[0, mu] - ref) <= 1e-11 * abs(ref)


def test_toroidal_q_recurrence_residual():
    # The returned values must satisfy the three-term recurrence to near
    # machine precision across both the forward and backward regimes.
    chim1 = np.logspace(-12, 2, 29)
    mu_max = 45
    q, _ = toroidal_q(chim1, mu_max)
    chi = 1.0 + chim1
    mu = np.arange(1, mu_max)[None, :]
    lhs = (mu + 0.5) * q[:, 2:]
    rhs = 2.0 * mu * chi[:, None] * q[:, 1:-1] - (mu - 0.5) * q[:, :-2]
    scale = np.maximum(np.abs(lhs), np.abs(2.0 * mu * chi[:, None] * q[:, 1:-1]))
    assert (np.abs(lhs - rhs) / scale).max() <= 1e-13


def test_toroidal_q_positive_and_decreasing():
    q, qp = toroidal_q(np.logspace(-8, 1, 12), 30)
    assert (q > 0).all()
    assert (np.diff(q, axis=1) < 0).all()
    assert (qp < 0).all()


def test_toroidal_q_rejects_chi_below_one():
    with pytest.raises(ValueError):
        toroidal_q(np.array([0.0]), 5)
