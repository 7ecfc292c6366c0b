import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastibor.geometry import (
    build_mesh,
    coord_deltas,
    curve_frame,
    curve_orientation,
    make_builtin_curve,
)

CURVES = ["sphere", "ellipsoid", "starfish", "droplet"]


@pytest.mark.parametrize("name", CURVES)
def test_derivatives_match_finite_differences(name):
    c = make_builtin_curve(name)
    t = np.linspace(c.t0, c.t1, 37)[1:-1]
    h = 1e-6 * (c.t1 - c.t0)
    for f, df in [(c.r, c.dr), (c.z, c.dz), (c.dr, c.d2r), (c.dz, c.d2z)]:
        fd = (f(t + h) - f(t - h)) / (2 * h)
        assert np.allclose(fd, df(t), rtol=1e-7, atol=1e-6)


@given(st.sampled_from(CURVES), st.floats(0.02, 0.98))
@settings(max_examples=40, deadline=None)
def test_frame_is_orthonormal(name, frac):
    c = make_builtin_curve(name)
    t = np.array([c.t0 + frac * (c.t1 - c.t0)])
    f = curve_frame(c, t, curve_orientation(c))
    assert np.allclose(f.tr**2 + f.tz**2, 1.0, atol=1e-12)
    assert np.allclose(f.nr**2 + f.nz**2, 1.0, atol=1e-12)
    assert np.allclose(f.tr * f.nr + f.tz * f.nz, 0.0, atol=1e-12)


def test_sphere_normal_is_radial():
    c = make_builtin_curve("sphere")
    m = build_mesh(c, 6, 12)
    # outward normal of the radius-2 sphere is position/2
    assert np.allclose(m.frame.nr, m.frame.r / 2.0, atol=1e-13)
    assert np.allclose(m.frame.nz, m.frame.z / 2.0, atol=1e-13)


@pytest.mark.parametrize("name", CURVES)
def test_normals_point_outward(name):
    c = make_builtin_curve(name)
    m = build_mesh(c, 10, 8)
    ref = c.interior_reference()
    dot = (m.frame.r - ref[0]) * m.frame.nr + (m.frame.z - ref[1]) * m.frame.nz
    assert np.all(dot > 0)


def test_sphere_arclength_and_area():
    c = make_builtin_curve("sphere")
    m = build_mesh(c, 8, 16)
    # generating curve is a half circle of radius 2
    assert abs(m.weights_arc.sum() - 2 * np.pi) < 1e-12
    area = (2 * np.pi * m.frame.r * m.weights_arc).sum()
    assert abs(area - 16 * np.pi) < 1e-10


def test_uniform_mesh_adjacency():
    c = make_builtin_curve("ellipsoid")
    m = build_mesh(c, 5, 4)
    assert m.neighbors[0] == (1,)
    assert m.neighbors[2] == (1, 3)
    assert m.neighbors[4] == (3,)


def test_corner_refinement_panel_count():
    c = make_builtin_curve("droplet")
    m = build_mesh(c, 8, 30, corner_depth=4)
    # corner panel and its neighbour each become a chain of depth+1 panels
    assert m.n_panels == 8 - 2 + 2 * 5
    assert m.n_nodes == 480
    widths = m.panels[:, 1] - m.panels[:, 0]
    # smallest panels hug the corner at t = 1
    assert widths.min() == widths[-1]
    assert abs(m.panels[-1, 1] - 1.0) < 1e-14
    base = (c.t1 - c.t0) / 8
    assert np.isclose(widths[-1], base / 2**4)
    assert np.isclose(widths[-2], base / 2**4)
    # refined region still tiles the parameter interval
    assert np.allclose(m.panels[1:, 0], m.panels[:-1, 1])


def test_corner_refinement_depth_zero_is_uniform():
    c = make_builtin_curve("droplet")
    m = build_mesh(c, 8, 6, corner_depth=0)
    assert m.n_panels == 8
    assert np.allclose(np.diff(m.panels[:, 0]), (c.t1 - c.t0) / 8)


def test_droplet_has_corner_on_axis():
    c = make_builtin_curve("droplet")
    t = np.array([c.t1])
    assert abs(c.r(t)[0]) < 1e-14
    assert abs(c.z(t)[0] - 2.0) < 1e-14
    # one-sided tangents differ at the corner: the curve is not smooth there
    tm = np.array([c.t1 - 1e-8])
    f = curve_frame(c, tm)
    assert f.speed[0] > 0.1


def test_unknown_curve_raises():
    with pytest.raises(ValueError, match="unknown curve"):
        make_builtin_curve("torus")


def test_nodes_avoid_axis():
    for name in CURVES:
        m = build_mesh(make_builtin_curve(name), 7, 10)
        assert np.all(m.frame.r > 0)


def test_coord_deltas_match_direct_subtraction_at_moderate_gap():
    c = make_builtin_curve("starfish")
    t_ref = 0.37
    t = np.linspace(0.1, 0.9, 41)
    dr, dz = coord_deltas(c, t_ref, t)
    assert np.abs(dr - (c.r(np.array([t_ref]))[0] - c.r(t))).max() < 1e-13
    assert np.abs(dz - (c.z(np.array([t_ref]))[0] - c.z(t))).max() < 1e-13


def test_coord_deltas_beat_subtraction_at_tiny_gaps():
    # sphere: r = 2 sin t, z = 2 cos t, so the deltas have closed forms
    # 2 sin(a) - 2 sin(b) = 4 cos((a+b)/2) sin((a-b)/2) with no cancellation.
    c = make_builtin_curve("sphere")
    t_ref = 0.8
    t = t_ref + 10.0 ** -np.arange(3, 12.0)
    eps = t - t_ref  # exact: t and t_ref are within a factor of two
    dr, dz = coord_deltas(c, t_ref, t)
    want_r = 4.0 * np.cos(t_ref + eps / 2) * np.sin(-eps / 2)
    want_z = -4.0 * np.sin(t_ref + eps / 2) * np.sin(-eps / 2)
    # relative accuracy holds even where direct subtraction has lost digits
    assert np.abs(dr / want_r - 1.0).max() < 1e-12
    assert np.abs(dz / want_z - 1.0).max() < 1e-12
