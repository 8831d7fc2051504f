"""Geometry tests: frames against finite-difference oracles."""

import numpy as np
import pytest

from raceopt.surfaces import (
    GRAVITY,
    Segment,
    SurfaceCoord,
    TrackDefinition,
    TrackError,
    build_surface,
    frame,
    net_normal_force,
    pose_kinematics,
    surface_mesh,
    tangent_angular_velocity,
    world_position_path,
)


def flat_straight(length=100.0, w=6.0):
    return build_surface(TrackDefinition("flat_frenet", [Segment(length)], w))


def flat_turn(kappa=0.02, w=6.0):
    return build_surface(
        TrackDefinition("flat_frenet", [Segment(50.0), Segment(80.0, kappa), Segment(50.0)], w)
    )


def banked_track(beta=0.3, w=6.0, kappa=0.0):
    d = TrackDefinition(
        "banked_frenet",
        [Segment(60.0, kappa), Segment(60.0, -kappa)],
        w,
        banking=[(0.0, beta), (120.0, beta)],
    )
    return build_surface(d)


def chicane_track():
    d = TrackDefinition(
        "banked_frenet",
        [Segment(40.0), Segment(25.0, 1.0 / 30.0), Segment(30.0),
         Segment(25.0, -1.0 / 30.0), Segment(40.0)],
        4.5,
        banking=[(0.0, 0.0), (40.0, -0.35), (65.0, -0.35), (95.0, 0.35),
                 (120.0, 0.35), (160.0, 0.0)],
    )
    return build_surface(d)


def uturn_track():
    d = TrackDefinition(
        "arc_profile",
        [Segment(150.0), Segment(np.pi * 60.0, 1.0 / 60.0), Segment(150.0)],
        6.0,
        profile_radius=120.0,
        centerline_offset=-6.0,
    )
    return build_surface(d)


ALL_TRACKS = [flat_turn, banked_track, chicane_track, uturn_track]


def fd_frame(surface, s, y, h=1e-5, h2=1e-3):
    """Finite-difference oracle for tangents and fundamental forms.

    Second differences use a larger step: with h = 1e-5 their roundoff
    noise (eps * |p| / h^2) would swamp the 1e-6 comparison tolerance.
    """
    p = lambda a, b: world_position_path(surface, [[a, b]])[0]  # noqa: E731
    xs = (p(s + h, y) - p(s - h, y)) / (2 * h)
    xy = (p(s, y + h) - p(s, y - h)) / (2 * h)
    h = h2
    p_ss = (p(s + h, y) - 2 * p(s, y) + p(s - h, y)) / h**2
    p_yy = (p(s, y + h) - 2 * p(s, y) + p(s, y - h)) / h**2
    p_sy = (p(s + h, y + h) - p(s + h, y - h) - p(s - h, y + h) + p(s - h, y - h)) / (4 * h**2)
    n = np.cross(xs, xy)
    n /= np.linalg.norm(n)
    I = np.array([[xs @ xs, xs @ xy], [xs @ xy, xy @ xy]])
    II = np.array([[p_ss @ n, p_sy @ n], [p_sy @ n, p_yy @ n]])
    return xs, xy, n, I, II


def random_points(surface, rng, n, margin=0.05):
    joints = np.concatenate([[0.0], surface.joints, [surface.total_length]])
    s = rng.uniform(0.2, surface.total_length - 0.2, n)
    # keep FD stencils away from C1-only joints
    for j in surface.joints:
        s[np.abs(s - j) < 2e-3] += 5e-3
    lo, hi = surface.y_bounds
    y = rng.uniform(lo + margin, hi - margin, n)
    return s, y


def test_flat_plane_embedding():
    surf = flat_straight()
    f = frame(surf, SurfaceCoord(50.0, 2.0))
    assert np.allclose(f.position(), [50.0, 2.0, 0.0], atol=1e-12)
    assert np.allclose(f.normal(), [0.0, 0.0, 1.0], atol=1e-12)
    assert np.allclose(f.first_form(), np.eye(2), atol=1e-12)
    assert np.allclose(f.second_form(), 0.0, atol=1e-12)
    assert np.allclose(f.wn_coeffs, 0.0, atol=1e-12)


def test_frenet_scale_factor():
    surf = flat_turn(kappa=0.02)
    f = frame(surf, SurfaceCoord(80.0, 5.0))
    assert np.linalg.norm(f.tangent_s()) == pytest.approx(1.0 - 0.02 * 5.0, abs=1e-12)


def test_arc_profile_second_form_center():
    d = TrackDefinition("arc_profile", [Segment(100.0)], 6.0, profile_radius=100.0)
    surf = build_surface(d)
    f = frame(surf, SurfaceCoord(30.0, 0.0))
    assert f.second_form()[1, 1] == pytest.approx(1.0 / 100.0, abs=1e-9)
    assert f.second_form()[0, 0] == pytest.approx(0.0, abs=1e-9)
    # oracle: second finite differences of the explicit position map
    *_, II = fd_frame(surf, 30.0, 0.0, h=1e-4)
    assert np.allclose(f.second_form(), II, atol=1e-6)


def test_banked_normal():
    surf = banked_track(beta=0.3)
    f = frame(surf, SurfaceCoord(10.0, 1.5))
    assert np.allclose(f.normal(), [0.0, -np.sin(0.3), np.cos(0.3)], atol=1e-12)


@pytest.mark.parametrize("maker", ALL_TRACKS)
def test_fundamental_forms_match_fd(maker):
    surf = maker()
    rng = np.random.default_rng(7)
    s, y = random_points(surf, rng, 100)
    for si, yi in zip(s, y):
        f = frame(surf, SurfaceCoord(si, yi))
        xs, xy, n, I, II = fd_frame(surf, si, yi)
        scale = max(1.0, np.abs(I).max())
        assert np.allclose(f.first_form(), I, atol=1e-6 * scale)
        assert np.allclose(f.second_form(), II, atol=2e-6 * max(1.0, np.abs(II).max()))


@pytest.mark.parametrize("maker", ALL_TRACKS)
def test_frame_invariants_random(maker):
    surf = maker()
    rng = np.random.default_rng(11)
    s, y = random_points(surf, rng, 1000)
    f = surf.frame_arrays(s, y)
    n = f.normal()
    assert np.allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-12)
    assert np.allclose(np.einsum("ij,ij->i", n, f.tangent_s()), 0.0, atol=1e-10)
    assert np.allclose(np.einsum("ij,ij->i", n, f.tangent_y()), 0.0, atol=1e-10)
    det = f.I[0] * f.I[2] - f.I[1] ** 2
    assert np.all(det > 0)
    assert np.all(f.I[0] + f.I[2] > 0)


def test_pose_kinematics_flat():
    surf = flat_straight()
    f = frame(surf, SurfaceCoord(10.0, 0.0))
    assert np.allclose(pose_kinematics(f, 0.0, 10.0, 0.0, 0.0), (10.0, 0.0, 0.0))
    s_dot, y_dot, ths_dot = pose_kinematics(f, np.pi / 2, 10.0, 0.0, 0.0)
    assert s_dot == pytest.approx(0.0, abs=1e-12)
    assert y_dot == pytest.approx(10.0, abs=1e-12)
    assert ths_dot == pytest.approx(0.0, abs=1e-12)


def test_pose_kinematics_frenet_yaw_rate():
    surf = flat_turn(kappa=0.02)
    f = frame(surf, SurfaceCoord(80.0, 0.0))
    s_dot, y_dot, ths_dot = pose_kinematics(f, 0.0, 20.0, 0.0, 0.4)
    assert s_dot == pytest.approx(20.0, abs=1e-12)
    assert ths_dot == pytest.approx(0.4 - 0.02 * 20.0, abs=1e-12)


@pytest.mark.parametrize("maker", ALL_TRACKS)
def test_wn_coeffs_match_fd_rotation(maker):
    """wn_coeffs against the finite-difference rotation rate of the
    normalized s-tangent about the normal."""
    surf = maker()
    rng = np.random.default_rng(3)
    s, y = random_points(surf, rng, 20)
    h = 1e-6

    def es_e2(si, yi):
        f = frame(surf, SurfaceCoord(si, yi))
        es = f.tangent_s() / np.linalg.norm(f.tangent_s())
        return es, np.cross(f.normal(), es)

    for si, yi in zip(s, y):
        f = frame(surf, SurfaceCoord(si, yi))
        es0, e20 = es_e2(si, yi)
        # rate about n when moving in s and in y
        es_p, _ = es_e2(si + h, yi)
        es_m, _ = es_e2(si - h, yi)
        c_s = e20 @ (es_p - es_m) / (2 * h)
        es_p, _ = es_e2(si, yi + h)
        es_m, _ = es_e2(si, yi - h)
        c_y = e20 @ (es_p - es_m) / (2 * h)
        assert f.wn_coeffs[0] == pytest.approx(c_s, abs=1e-5)
        assert f.wn_coeffs[1] == pytest.approx(c_y, abs=1e-5)


def test_net_normal_force_flat():
    surf = flat_straight()
    f = frame(surf, SurfaceCoord(10.0, 0.0))
    assert net_normal_force(f, (30.0, 0.0), 1500.0) == pytest.approx(1500 * 9.81, rel=1e-12)


def test_net_normal_force_valley():
    d = TrackDefinition("arc_profile", [Segment(100.0)], 6.0, profile_radius=100.0)
    surf = build_surface(d)
    f = frame(surf, SurfaceCoord(50.0, 0.0))
    # crossing the valley bottom at 20 m/s: N = m (v^2/R + g)
    assert net_normal_force(f, (0.0, 20.0), 1500.0) == pytest.approx(
        1500.0 * (9.81 + 400.0 / 100.0), rel=1e-12
    )


def test_net_normal_force_path_oracle():
    """N/m + g.n equals the normal second derivative of a tangent path."""
    surf = uturn_track()
    rng = np.random.default_rng(5)
    for _ in range(5):
        s0 = rng.uniform(10.0, surf.total_length - 10.0)
        y0 = rng.uniform(-10.0, -2.0)
        u = rng.uniform(-1.0, 1.0, 2) * np.array([20.0, 3.0])
        dt = 1e-5
        pts = world_position_path(
            surf, [[s0 - u[0] * dt, y0 - u[1] * dt], [s0, y0], [s0 + u[0] * dt, y0 + u[1] * dt]]
        )
        acc = (pts[0] - 2 * pts[1] + pts[2]) / dt**2
        f = frame(surf, SurfaceCoord(s0, y0))
        n_acc = acc @ f.normal()  # curvature part of the normal acceleration
        N = net_normal_force(f, tuple(u), 1500.0)
        assert N / 1500.0 + GRAVITY @ f.normal() == pytest.approx(n_acc, abs=1e-3)


def test_tangent_angular_velocity_flat_zero():
    surf = flat_straight()
    f = frame(surf, SurfaceCoord(10.0, 1.0))
    assert np.allclose(tangent_angular_velocity(f, (20.0, 1.0)), 0.0, atol=1e-12)


def test_tangent_angular_velocity_cylinder():
    d = TrackDefinition("arc_profile", [Segment(100.0)], 6.0, profile_radius=50.0)
    surf = build_surface(d)
    f = frame(surf, SurfaceCoord(50.0, 0.0))
    w1, w2 = tangent_angular_velocity(f, (0.0, 10.0), theta_s=0.0)
    assert np.hypot(w1, w2) == pytest.approx(10.0 / 50.0, rel=1e-12)


@pytest.mark.parametrize("maker", ALL_TRACKS)
def test_tangent_angular_velocity_fd(maker):
    surf = maker()
    rng = np.random.default_rng(9)
    s, y = random_points(surf, rng, 10)
    h = 1e-6
    for si, yi in zip(s, y):
        u = rng.uniform(-1.0, 1.0, 2) * np.array([15.0, 2.0])
        f = frame(surf, SurfaceCoord(si, yi))
        n_p = frame(surf, SurfaceCoord(si + u[0] * h, yi + u[1] * h)).normal()
        n_m = frame(surf, SurfaceCoord(si - u[0] * h, yi - u[1] * h)).normal()
        n_dot = (n_p - n_m) / (2 * h)
        omega = np.cross(f.normal(), n_dot)
        w1, w2 = tangent_angular_velocity(f, tuple(u), theta_s=0.0)
        es = f.tangent_s() / np.linalg.norm(f.tangent_s())
        e2 = np.cross(f.normal(), es)
        assert w1 == pytest.approx(omega @ es, abs=1e-5)
        assert w2 == pytest.approx(omega @ e2, abs=1e-5)


def test_compression_property():
    """s-scale factor shrinks toward the inside of a left turn."""
    surf = flat_turn(kappa=0.02)
    sf = lambda y: np.sqrt(frame(surf, SurfaceCoord(80.0, y)).first_form()[0, 0])  # noqa: E731
    assert sf(4.0) < sf(0.0) < sf(-4.0)


def test_flat_reduction_exact():
    surf = flat_turn(kappa=0.0)
    rng = np.random.default_rng(2)
    for _ in range(20):
        ths, v1, v2, w3 = rng.uniform(-1, 1, 4) * [1.0, 30.0, 5.0, 1.0]
        yq = rng.uniform(-5, 5)
        f = frame(surf, SurfaceCoord(60.0, yq))
        s_dot, y_dot, ths_dot = pose_kinematics(f, ths, v1, v2, w3)
        assert s_dot == pytest.approx(v1 * np.cos(ths) - v2 * np.sin(ths), abs=1e-12)
        assert y_dot == pytest.approx(v1 * np.sin(ths) + v2 * np.cos(ths), abs=1e-12)
        assert ths_dot == pytest.approx(w3, abs=1e-12)


def test_world_position_path_consistency():
    surf = chicane_track()
    rng = np.random.default_rng(1)
    s, y = random_points(surf, rng, 50)
    pts = world_position_path(surf, np.column_stack([s, y]))
    for i in range(50):
        assert np.allclose(pts[i], frame(surf, SurfaceCoord(s[i], y[i])).position())


def test_out_of_domain_errors():
    surf = flat_straight(length=100.0)
    with pytest.raises(TrackError):
        frame(surf, SurfaceCoord(150.0, 0.0))
    with pytest.raises(TrackError):
        frame(surf, SurfaceCoord(-1.0, 0.0))


def test_invalid_track_reports():
    with pytest.raises(TrackError, match="length"):
        build_surface(TrackDefinition("flat_frenet", [Segment(-5.0)], 6.0))
    with pytest.raises(TrackError, match="curvature"):
        build_surface(TrackDefinition("flat_frenet", [Segment(10.0, 0.2)], 6.0))
    with pytest.raises(TrackError, match="profile_radius"):
        build_surface(TrackDefinition("arc_profile", [Segment(10.0)], 6.0, profile_radius=3.0))
    with pytest.raises(TrackError, match="kind"):
        build_surface(TrackDefinition("sphere", [Segment(10.0)], 6.0))


def test_mesh_export_flat_and_roundtrip():
    surf = flat_turn()
    mesh = surface_mesh(surf, resolution=5.0)
    verts = np.array(mesh["vertices"])
    sy = np.array(mesh["sy"])
    assert np.allclose(verts[:, 2], 0.0, atol=1e-12)
    redo = world_position_path(surf, sy)
    assert np.allclose(verts, redo, atol=1e-9)
    assert np.array(mesh["faces"]).max() == len(verts) - 1


def test_track_definition_roundtrip():
    d = uturn_track().definition
    d2 = TrackDefinition.from_dict(d.to_dict())
    assert d2.to_dict() == d.to_dict()
    with pytest.raises(TrackError, match="unknown keys"):
        TrackDefinition.from_dict({**d.to_dict(), "bogus": 1})
