"""Raceline solves, time reparameterization and overtaking setup checks."""

import numpy as np
import pytest

from raceopt import ad
from raceopt.collocation import GridSpec, Trajectory
from raceopt.nlpsolver import SolverOptions
from raceopt.racing import (AgentSpec, OvertakeScenario, RacelineProblem,
                            collision_residual, reparam_by_time,
                            solve_raceline)
from raceopt.surfaces import Segment, TrackDefinition, build_surface
from raceopt.vehicles import VehicleParams, kinematic_force_residuals, make_model

TAU3 = np.array([0.15505102572168217, 0.64494897427831777, 1.0])  # Radau d=3


def flat_track(length=200.0, half_width=6.0):
    return build_surface(TrackDefinition("flat_frenet",
                                         [Segment(length)], half_width))


def constant_speed_trajectory(v=20.0, y0=1.5, length=100.0, K=5):
    """Analytic straight-line run at constant speed for spline oracles."""
    s_grid = np.linspace(0.0, length, K + 1)
    h = np.diff(s_grid)
    boundary = np.zeros((K + 1, 5))
    boundary[:, 0] = s_grid
    boundary[:, 1] = y0
    boundary[:, 3] = v
    boundary[:, 4] = s_grid / v
    col_states = np.zeros((K, 3, 5))
    node_s = s_grid[:-1, None] + h[:, None] * TAU3[None, :]
    col_states[:, :, 0] = node_s
    col_states[:, :, 1] = y0
    col_states[:, :, 3] = v
    col_states[:, :, 4] = node_s / v
    return Trajectory(s_grid=s_grid, tau=TAU3, state_names=("s", "y", "theta_s", "v", "t"),
                      input_names=("a", "delta"), boundary_states=boundary,
                      col_states=col_states, col_inputs=np.zeros((K, 3, 2)),
                      model_tag="kinematic")


# ---------------------------------------------------------------------------
# collision residual arithmetic
# ---------------------------------------------------------------------------

def test_collision_residual_examples():
    traj = constant_speed_trajectory()
    spline = reparam_by_time(traj)
    t = 2.0
    s_t = spline.eval_s(t)
    y_t = spline.eval_y(t)
    # coincident circles: maximal violation -(2r)^2
    assert collision_residual(s_t, y_t, t, spline, 1.8) == pytest.approx(
        -(2 * 1.8) ** 2, abs=1e-12)
    # separation exactly 2r: zero margin
    assert collision_residual(s_t + 3.6, y_t, t, spline, 1.8) == pytest.approx(
        0.0, abs=1e-9)
    # 3 m behind, 1 m beside, r = 1: 9 + 1 - 4 = 6
    assert collision_residual(s_t - 3.0, y_t + 1.0, t, spline, 1.0) == \
        pytest.approx(6.0, abs=1e-9)


# ---------------------------------------------------------------------------
# time reparameterization
# ---------------------------------------------------------------------------

def test_spline_reproduces_nodes():
    traj = constant_speed_trajectory()
    spline = reparam_by_time(traj)
    for k in range(traj.n_intervals):
        for j in range(3):
            x = traj.col_states[k, j]
            assert spline.eval_s(x[4]) == pytest.approx(x[0], abs=1e-9)
            assert spline.eval_y(x[4]) == pytest.approx(x[1], abs=1e-9)


def test_spline_constant_speed_is_linear():
    v, y0 = 20.0, 1.5
    spline = reparam_by_time(constant_speed_trajectory(v=v, y0=y0))
    t = np.linspace(0.0, spline.t_end, 200)
    assert np.max(np.abs(spline.eval_s(t) - v * t)) <= 1e-9
    assert np.max(np.abs(spline.eval_y(t) - y0)) <= 1e-9


def test_spline_extrapolation_constant_speed():
    v = 20.0
    spline = reparam_by_time(constant_speed_trajectory(v=v, length=100.0))
    t_end = spline.t_end
    for dt in (0.5, 2.0, 7.0):
        assert spline.eval_s(t_end + dt) == pytest.approx(
            spline.s_end + spline.s_dot_end * dt, rel=1e-9)
        assert spline.eval_y(t_end + dt) == pytest.approx(spline.y_end, abs=1e-12)
    assert spline.s_dot_end == pytest.approx(v, rel=1e-6)
    # the sentinel index selects the extrapolation branch
    idx = spline.locate(np.array([0.0, t_end, t_end + 1.0]))
    assert idx[-1] == spline.n_intervals
    assert idx[1] == spline.n_intervals - 1


def test_spline_eval_supports_duals():
    spline = reparam_by_time(constant_speed_trajectory())
    t0 = 1.3
    idx = spline.locate(t0)
    td = ad.Dual(np.array([t0]), np.array([[1.0]]))
    out = spline.eval_s(td, idx=idx)
    eps = 1e-6
    fd = (spline.eval_s(t0 + eps, idx=idx) - spline.eval_s(t0 - eps, idx=idx)) / (2 * eps)
    assert out.dot[0, 0] == pytest.approx(fd, rel=1e-6)


def test_spline_rejects_nonmonotone_time():
    traj = constant_speed_trajectory()
    traj.col_states[2, 1, 4] = traj.col_states[2, 0, 4] - 1.0
    with pytest.raises(ValueError, match="increasing"):
        reparam_by_time(traj)


# ---------------------------------------------------------------------------
# problem validation
# ---------------------------------------------------------------------------

def test_raceline_problem_validation():
    surf = flat_track()
    grid = GridSpec(0.0, 200.0, 8, 3)
    ok = RacelineProblem(surf, "kinematic", VehicleParams(), grid, y0=0.0, v0=10.0)
    ok.validate()
    with pytest.raises(ValueError, match="lateral"):
        RacelineProblem(surf, "kinematic", VehicleParams(), grid,
                        y0=5.9, v0=10.0).validate()
    with pytest.raises(ValueError, match="speed"):
        RacelineProblem(surf, "kinematic", VehicleParams(), grid,
                        y0=0.0, v0=500.0).validate()
    with pytest.raises(ValueError, match="station"):
        RacelineProblem(surf, "kinematic", VehicleParams(),
                        GridSpec(0.0, 300.0, 8, 3), y0=0.0, v0=10.0).validate()


def test_overtake_scenario_validation():
    track = TrackDefinition("flat_frenet", [Segment(200.0)], 6.0)
    tgt = AgentSpec("kinematic", VehicleParams(), v0=20.0, s0=10.0)
    ego = AgentSpec("kinematic", VehicleParams(), v0=20.0, s0=0.0)
    OvertakeScenario(track, tgt, ego).validate()
    with pytest.raises(ValueError, match="ahead"):
        OvertakeScenario(track, ego, tgt).validate()
    with pytest.raises(ValueError, match="corridor"):
        OvertakeScenario(track, tgt, ego, r=5.5).validate()
    with pytest.raises(ValueError, match="positive"):
        OvertakeScenario(track, tgt, ego, r=-1.0).validate()


def test_scenario_dict_round_trip_and_unknown_keys():
    track = TrackDefinition("flat_frenet", [Segment(200.0)], 6.0)
    tgt = AgentSpec("kinematic", VehicleParams(), v0=20.0, s0=10.0)
    ego = AgentSpec("two_track", VehicleParams(), v0=20.0, s0=0.0)
    sc = OvertakeScenario(track, tgt, ego)
    sc2 = OvertakeScenario.from_dict(sc.to_dict())
    assert sc2.to_dict() == sc.to_dict()
    bad = sc.to_dict()
    bad["mystery"] = 1
    with pytest.raises(ValueError, match="unknown keys"):
        OvertakeScenario.from_dict(bad)
    bad_agent = tgt.to_dict()
    bad_agent["color"] = "red"
    with pytest.raises(ValueError, match="unknown keys"):
        AgentSpec.from_dict(bad_agent)


# ---------------------------------------------------------------------------
# raceline solves against closed-form oracles
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def straight_solution():
    surf = flat_track(length=200.0)
    params = VehicleParams(c_drag=0.0)  # closed form assumes no drag
    p = RacelineProblem(surf, "kinematic", params,
                        GridSpec(0.0, 200.0, 10, 3), y0=0.0, v0=10.0,
                        solver=SolverOptions(tol=1e-6, feas_tol=1e-7))
    return solve_raceline(p), params


def test_straight_line_matches_closed_form(straight_solution):
    sol, params = straight_solution
    assert sol.ok, sol.nlp.message
    a, v0, dist = params.a_max, 10.0, 200.0
    t_exact = (np.sqrt(v0 ** 2 + 2 * a * dist) - v0) / a
    assert sol.final_time == pytest.approx(t_exact, rel=5e-3)


def test_straight_line_solution_sane(straight_solution):
    sol, _ = straight_solution
    traj = sol.trajectory
    times = np.concatenate([[traj.boundary_states[0, 4]],
                            traj.node_states()[:, 4]])
    assert np.all(np.diff(times) > 0.0)
    y = traj.node_states()[:, 1]
    y_lo, y_hi = -6.0, 6.0
    assert np.all((y >= y_lo - 1e-9) & (y <= y_hi + 1e-9))


def test_spline_tracks_solved_trajectory(straight_solution):
    sol, _ = straight_solution
    traj = sol.trajectory
    spline = reparam_by_time(traj)
    errs = []
    for k in range(traj.n_intervals):
        for theta in np.linspace(0.0, 1.0, 9):
            x = traj.interp_state(k, float(theta))
            errs.append(abs(float(spline.eval_s(x[4])) - x[0]))
            errs.append(abs(float(spline.eval_y(x[4])) - x[1]))
    assert max(errs) <= 1e-3


@pytest.fixture(scope="module")
def uturn_solution():
    radius = 30.0
    arc_len = np.pi * radius
    track = TrackDefinition("flat_frenet",
                            [Segment(30.0), Segment(arc_len, 1.0 / radius),
                             Segment(30.0)], 4.0)
    surf = build_surface(track)
    params = VehicleParams()
    p = RacelineProblem(surf, "kinematic", params,
                        GridSpec(0.0, surf.total_length, 18, 3,
                                 joints=tuple(surf.joints[1:-1])),
                        y0=0.0, v0=15.0,
                        solver=SolverOptions(tol=1e-6, feas_tol=1e-6))
    return solve_raceline(p), surf, params


def test_uturn_apex_obeys_steady_cornering_bound(uturn_solution):
    sol, surf, params = uturn_solution
    assert sol.ok, sol.nlp.message
    traj = sol.trajectory
    states = traj.node_states()
    inputs = traj.col_inputs.reshape(-1, 2)
    in_turn = (states[:, 0] > 30.0) & (states[:, 0] < surf.total_length - 30.0)
    apex = np.argmin(np.where(in_turn, states[:, 3], np.inf))

    x, u = states[apex], inputs[apex]
    f = surf.frame_arrays(np.array([x[0]]), np.array([x[1]]))
    n_net, cone = kinematic_force_residuals(
        tuple(np.array([c]) for c in x),
        tuple(np.array([c]) for c in u), f, params)
    cone_scale = (params.c_cone * params.mu * params.m * 9.81) ** 2
    slack = float(np.asarray(ad.value(cone)).ravel()[0]) / cone_scale
    # the friction cone is active at the apex and not violated
    assert slack >= -1e-6
    assert slack <= 1e-3

    # steady-cornering speed bound from the path curvature tan(delta)/L
    kappa_path = abs(np.tan(u[1])) / params.wheelbase
    assert kappa_path > 0.0
    v_bound_sq = params.c_cone * params.mu * 9.81 / kappa_path
    assert x[3] ** 2 <= v_bound_sq * (1.0 + 2e-2)
