"""Raceline and two-vehicle overtaking problems.

A raceline is a minimum-time trajectory for one vehicle between two track
stations.  Overtaking is solved as a three-step leader-follower game: the
leading vehicle (the "target") plans its own raceline ignoring the other
vehicle, the trailing vehicle (the "ego") first plans an unconstrained
raceline as a warmstart and then re-plans subject to a time-indexed
collision-avoidance constraint against the target's fixed trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import ad
from .collocation import (BoundaryConditions, GridSpec, Trajectory, Weights,
                          resample_trajectory, transcribe)
from .nlpsolver import NlpSolution, SolverOptions, solve
from .surfaces import ParametricSurface, TrackDefinition, build_surface
from .vehicles import VehicleParams, make_model

TIE_TOLERANCE = 1.0e-3  # s; finish-time ties this close count as no pass


# ---------------------------------------------------------------------------
# single-vehicle raceline
# ---------------------------------------------------------------------------

@dataclass
class RacelineProblem:
    """Minimum-time problem for one vehicle over a station range."""

    surface: ParametricSurface
    model_tag: str
    params: VehicleParams
    grid: GridSpec
    y0: float
    v0: float
    weights: Weights = field(default_factory=Weights)
    solver: SolverOptions = field(default_factory=SolverOptions)

    def validate(self) -> None:
        self.grid.validate()
        self.params.validate()
        model = make_model(self.model_tag, self.surface, self.params)
        y_lo, y_hi = model.lateral_bounds()
        if not y_lo <= self.y0 <= y_hi:
            raise ValueError(
                f"initial lateral position {self.y0} outside drivable "
                f"range [{y_lo}, {y_hi}]")
        v_lo, v_hi = model.state_bounds()[3]
        if not v_lo <= self.v0 <= v_hi:
            raise ValueError(f"initial speed {self.v0} outside [{v_lo}, {v_hi}]")
        if not 0.0 <= self.grid.s_start < self.grid.s_end <= self.surface.total_length:
            raise ValueError("grid station range outside the track")


@dataclass
class RacelineSolution:
    """Trajectory plus solve diagnostics; usable even when not optimal."""

    trajectory: Trajectory
    nlp: NlpSolution
    problem: object  # TranscribedProblem, kept for re-verification

    @property
    def ok(self) -> bool:
        return self.nlp.ok

    @property
    def final_time(self) -> float:
        return self.trajectory.final_time


def _initial_guess(problem, model, y0, v0):
    """Constant-speed run along y = y0 packed into the variable vector."""
    n_x = model.n_states
    s0 = problem.s_bnd[0]
    B = np.zeros((problem.K + 1, n_x))
    for i, s in enumerate(problem.s_bnd):
        B[i] = model.default_state(s, y0, v0)
        B[i, -1] = (s - s0) / v0
    X = np.zeros((problem.K, problem.d, n_x))
    for i in range(problem.K):
        for j in range(problem.d):
            s = problem._node_s[i, j]
            X[i, j] = model.default_state(s, y0, v0)
            X[i, j, -1] = (s - s0) / v0
    U = np.zeros((problem.K, problem.d, model.n_inputs))
    return problem.pack(B, X, U)


COARSE_START_INTERVALS = 12  # pre-solve grid size for cold fine-grid solves


def solve_raceline(p: RacelineProblem, warmstart: Optional[Trajectory] = None,
                   extra_node_constraints=None) -> RacelineSolution:
    """Transcribe and solve a raceline problem.

    Cold solves on fine grids first solve a coarse-grid version of the
    problem at relaxed tolerances and continue from its interpolant, which
    is much faster than solving the fine grid from a constant-speed guess.
    A non-optimal solver status is returned with diagnostics rather than
    raised; the trajectory is still extractable for inspection.
    """
    p.validate()
    if (warmstart is None and extra_node_constraints is None
            and p.grid.n_intervals > COARSE_START_INTERVALS):
        coarse = replace(
            p,
            grid=replace(p.grid, n_intervals=COARSE_START_INTERVALS),
            solver=replace(p.solver, tol=max(p.solver.tol, 1e-3),
                           feas_tol=max(p.solver.feas_tol, 1e-5)))
        coarse_sol = solve_raceline(coarse)
        if np.all(np.isfinite(coarse_sol.trajectory.boundary_states)):
            warmstart = coarse_sol.trajectory
    model = make_model(p.model_tag, p.surface, p.params)
    x0_state = model.default_state(p.grid.s_start, p.y0, p.v0)
    bc = BoundaryConditions(
        initial={i: float(x0_state[i]) for i in range(1, model.n_states)})
    prob = transcribe(model, p.grid, model.state_bounds(), model.input_bounds(),
                      bc, p.weights, objective_state=model.n_states - 1,
                      extra_node_constraints=extra_node_constraints)
    if warmstart is not None:
        if (warmstart.n_intervals != prob.K
                or warmstart.tau.size != prob.scheme.points.size):
            warmstart = resample_trajectory(warmstart, prob.s_bnd,
                                            prob.scheme.points)
        z0 = prob.pack_trajectory(warmstart)
    else:
        z0 = _initial_guess(prob, model, p.y0, p.v0)
    sol = solve(prob.nlp_problem(z0), p.solver)
    return RacelineSolution(prob.extract(sol.z), sol, prob)


# ---------------------------------------------------------------------------
# time reparameterization of a trajectory
# ---------------------------------------------------------------------------

@dataclass
class TimeSpline:
    """C1 cubic interpolant of (s(t), y(t)) with constant-speed extrapolation.

    Interval ``i`` covers ``[t[i], t[i+1]]`` with local cubic coefficients
    ``c[:, i]`` (highest power first, argument ``t - t[i]``).  The sentinel
    interval index ``n_intervals`` selects the extrapolation branch beyond
    ``t_end``: ``s`` advances at the final centerline speed, ``y`` is held.
    """

    knot_t: np.ndarray
    coeff_s: np.ndarray  # (4, n_intervals)
    coeff_y: np.ndarray
    s_end: float
    y_end: float
    s_dot_end: float

    @property
    def t_end(self) -> float:
        return float(self.knot_t[-1])

    @property
    def n_intervals(self) -> int:
        return self.knot_t.size - 1

    def locate(self, t) -> np.ndarray:
        """Interval index for each time; ``n_intervals`` marks extrapolation."""
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.knot_t, t, side="right") - 1,
                      0, self.n_intervals - 1)
        return np.where(t > self.t_end, self.n_intervals, idx)

    def _eval(self, t, idx, coeff, v_end, rate):
        safe = np.minimum(idx, self.n_intervals - 1)
        x = t - self.knot_t[safe]
        c0, c1, c2, c3 = (coeff[m][safe] for m in range(4))
        poly = ((c0 * x + c1) * x + c2) * x + c3
        extrap = v_end + rate * (t - self.t_end)
        mask = (idx >= self.n_intervals).astype(float)
        return poly * (1.0 - mask) + extrap * mask

    def eval_s(self, t, idx=None):
        if idx is None:
            idx = self.locate(ad.value(t))
        return self._eval(t, np.asarray(idx), self.coeff_s, self.s_end,
                          self.s_dot_end)

    def eval_y(self, t, idx=None):
        if idx is None:
            idx = self.locate(ad.value(t))
        return self._eval(t, np.asarray(idx), self.coeff_y, self.y_end, 0.0)


def reparam_by_time(traj: Trajectory, interior_samples: int = 4) -> TimeSpline:
    """Fit a time-indexed spline through a solved trajectory.

    Samples every collocation node plus ``interior_samples`` interior
    polynomial evaluations per interval, then interpolates s(t) and y(t)
    with shape-preserving cubics (C1, monotonicity-preserving in s).
    """
    thetas = np.unique(np.concatenate(
        [[0.0], traj.tau, np.linspace(0.0, 1.0, interior_samples + 2)[1:-1]]))
    t_idx = traj.time_index
    ts, ss, ys = [], [], []
    for k in range(traj.n_intervals):
        for theta in thetas:
            if k > 0 and theta == 0.0:
                continue  # boundary point equals the previous interval's end
            x = traj.interp_state(k, float(theta))
            ts.append(x[t_idx])
            ss.append(x[0])
            ys.append(x[1])
    t = np.asarray(ts)
    if np.any(np.diff(t) <= 0.0):
        raise ValueError("trajectory time is not strictly increasing")
    s_of_t = PchipInterpolator(t, np.asarray(ss))
    y_of_t = PchipInterpolator(t, np.asarray(ys))
    ds_end = float(s_of_t.derivative()(t[-1]))
    return TimeSpline(knot_t=t, coeff_s=s_of_t.c, coeff_y=y_of_t.c,
                      s_end=float(ss[-1]), y_end=float(ys[-1]),
                      s_dot_end=ds_end)


def collision_residual(ego_s, ego_y, ego_t, spline: TimeSpline, r: float,
                       idx=None):
    """Squared parameter-space separation margin against the spline.

    Returns ``(ego_s - s_T(t))^2 + (ego_y - y_T(t))^2 - (2r)^2``; non-overlap
    requires this to be >= 0.  Accepts scalars, arrays, or AD duals; ``idx``
    freezes the spline interval selection for use inside an NLP.
    """
    ds = ego_s - spline.eval_s(ego_t, idx)
    dy = ego_y - spline.eval_y(ego_t, idx)
    return ds * ds + dy * dy - (2.0 * r) ** 2


# ---------------------------------------------------------------------------
# overtaking game
# ---------------------------------------------------------------------------

@dataclass
class AgentSpec:
    """One vehicle's model, parameters and start state."""

    model: str
    params: VehicleParams = field(default_factory=VehicleParams)
    v0: float = 20.0
    s0: float = 0.0
    y0: float = 0.0

    def to_dict(self) -> dict:
        return {"model": self.model, "params": self.params.to_dict(),
                "v0": self.v0, "s0": self.s0, "y0": self.y0}

    @classmethod
    def from_dict(cls, d: dict) -> "AgentSpec":
        known = {"model", "params", "v0", "s0", "y0"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"invalid-agent: unknown keys {sorted(unknown)}")
        return cls(model=d["model"],
                   params=VehicleParams.from_dict(d.get("params", {})),
                   v0=float(d.get("v0", 20.0)), s0=float(d.get("s0", 0.0)),
                   y0=float(d.get("y0", 0.0)))


@dataclass
class OvertakeScenario:
    """Leader-follower overtaking setup on one track."""

    track: TrackDefinition
    target: AgentSpec
    ego: AgentSpec
    r: float = 1.8
    n_intervals: int = 40
    degree: int = 3
    weights: Weights = field(default_factory=Weights)
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(
        tol=1e-6, feas_tol=1e-6))

    def validate(self) -> None:
        self.track.validate()
        if self.target.s0 <= self.ego.s0:
            raise ValueError("target must start ahead of the ego vehicle")
        if self.r <= 0.0:
            raise ValueError("collision radius must be positive")
        for agent in (self.target, self.ego):
            agent.params.validate()
            if agent.model not in ("kinematic", "two_track"):
                raise ValueError(f"unknown model {agent.model!r}")
        inset = max(self.target.params.body_radius, self.ego.params.body_radius)
        corridor = 2.0 * self.track.half_width - 2.0 * inset
        if 2.0 * self.r >= corridor:
            raise ValueError(
                f"collision diameter {2 * self.r} leaves no passing corridor "
                f"on a drivable width of {corridor}")
        if self.n_intervals < 2:
            raise ValueError("need at least two collocation intervals")

    def to_dict(self) -> dict:
        return {
            "track": self.track.to_dict(),
            "target": self.target.to_dict(),
            "ego": self.ego.to_dict(),
            "r": self.r,
            "n_intervals": self.n_intervals,
            "degree": self.degree,
            "weights": {"w_u": self.weights.w_u, "w_du": self.weights.w_du},
            "solver": {"tol": self.solver.tol, "feas_tol": self.solver.feas_tol,
                       "backend": self.solver.backend,
                       "inner_max_iter": self.solver.inner_max_iter},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OvertakeScenario":
        known = {"track", "target", "ego", "r", "n_intervals", "degree",
                 "weights", "solver"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"invalid-scenario: unknown keys {sorted(unknown)}")
        w = d.get("weights", {})
        sv = d.get("solver", {})
        sc = cls(
            track=TrackDefinition.from_dict(d["track"]),
            target=AgentSpec.from_dict(d["target"]),
            ego=AgentSpec.from_dict(d["ego"]),
            r=float(d.get("r", 1.8)),
            n_intervals=int(d.get("n_intervals", 40)),
            degree=int(d.get("degree", 3)),
            weights=Weights(w_u=float(w.get("w_u", 1e-4)),
                            w_du=float(w.get("w_du", 1e-3))),
            solver=SolverOptions(tol=float(sv.get("tol", 1e-6)),
                                 feas_tol=float(sv.get("feas_tol", 1e-6)),
                                 backend=sv.get("backend", "auto"),
                                 inner_max_iter=int(sv.get("inner_max_iter",
                                                           3000))),
        )
        sc.validate()
        return sc


@dataclass
class OvertakeResult:
    """All three trajectories of the game plus outcome diagnostics."""

    target: RacelineSolution
    ego_warmstart: RacelineSolution
    ego: RacelineSolution
    spline: TimeSpline
    min_param_separation: float
    target_finish_time: float
    ego_finish_time: float
    overtaken: bool
    knot_assignment_iterations: int
    knots_converged: bool

    @property
    def ok(self) -> bool:
        return (self.target.ok and self.ego_warmstart.ok and self.ego.ok
                and self.knots_converged)


def _raceline_problem(surface, agent: AgentSpec, sc: OvertakeScenario):
    joints = tuple(j for j in surface.joints
                   if agent.s0 < j < surface.total_length)
    grid = GridSpec(agent.s0, surface.total_length, sc.n_intervals, sc.degree,
                    joints=joints)
    return RacelineProblem(surface, agent.model, agent.params, grid,
                           y0=agent.y0, v0=agent.v0, weights=sc.weights,
                           solver=sc.solver)


def _node_times(traj: Trajectory) -> np.ndarray:
    return traj.col_states[:, :, traj.time_index]


def solve_overtake(sc: OvertakeScenario,
                   surface: Optional[ParametricSurface] = None,
                   max_knot_iterations: int = 5) -> OvertakeResult:
    """Run the three-step overtaking game.

    1. The target solves its raceline, ignoring the ego vehicle.
    2. The ego solves its raceline ignoring the target (warmstart only).
    3. The ego re-solves with the collision constraint against the target's
       time spline, warmstarted from step 2.  Spline-interval assignments
       are frozen per node during each solve and updated in a fixed-point
       loop (at most ``max_knot_iterations`` rounds).
    """
    sc.validate()
    if surface is None:
        surface = build_surface(sc.track)

    target_sol = solve_raceline(_raceline_problem(surface, sc.target, sc))
    ego_problem = _raceline_problem(surface, sc.ego, sc)
    warm_sol = solve_raceline(ego_problem)

    spline = reparam_by_time(target_sol.trajectory)
    r = sc.r
    idx = spline.locate(_node_times(warm_sol.trajectory))
    t_state = warm_sol.trajectory.time_index
    # per-node row scaling: the squared-distance residual grows without
    # bound for nodes far from the target, and so does its gradient;
    # scaling each row by its warmstart magnitude keeps the constraint
    # Jacobian conditioned while leaving the constraint set unchanged
    warm_cs = warm_sol.trajectory.col_states
    res_warm = collision_residual(warm_cs[:, :, 0], warm_cs[:, :, 1],
                                  warm_cs[:, :, t_state], spline, r, idx=idx)
    scale = np.maximum((2.0 * r) ** 2, np.abs(res_warm))

    ego_sol = warm_sol
    warm = warm_sol.trajectory
    converged = False
    iteration = 0
    for iteration in range(1, max_knot_iterations + 1):
        frozen = idx.copy()

        def avoid_target(x_cols, u_cols, extras):
            res = collision_residual(x_cols[0], x_cols[1], x_cols[t_state],
                                     spline, r, idx=frozen)
            return [(res, 0.0, np.inf, scale, "collision")]

        ego_sol = solve_raceline(ego_problem, warmstart=warm,
                                 extra_node_constraints=avoid_target)
        warm = ego_sol.trajectory
        new_idx = spline.locate(_node_times(ego_sol.trajectory))
        if np.array_equal(new_idx, frozen):
            converged = True
            break
        idx = new_idx

    times = _node_times(ego_sol.trajectory)
    res = collision_residual(ego_sol.trajectory.col_states[:, :, 0],
                             ego_sol.trajectory.col_states[:, :, 1],
                             times, spline, r)
    min_sep = float(np.sqrt(max(float(np.min(res)) + (2.0 * r) ** 2, 0.0)))

    t_target = target_sol.final_time
    t_ego = ego_sol.final_time
    return OvertakeResult(
        target=target_sol, ego_warmstart=warm_sol, ego=ego_sol, spline=spline,
        min_param_separation=min_sep,
        target_finish_time=t_target, ego_finish_time=t_ego,
        overtaken=bool(t_ego < t_target - TIE_TOLERANCE),
        knot_assignment_iterations=iteration, knots_converged=converged,
    )


# ---------------------------------------------------------------------------
# post-hoc verification
# ---------------------------------------------------------------------------

@dataclass
class VerificationReport:
    """Dense re-check of an overtake result, independent of the solver."""

    param_min: float
    euclid_min: float
    body_diameter: float
    collision: bool          # true world-frame overlap detected
    ego_time_monotone: bool
    ego_within_track: bool
    n_samples: int


def verify_result(res: OvertakeResult, surface: ParametricSurface,
                  samples_per_interval: int = 20) -> VerificationReport:
    """Densely sample both vehicles over the ego's horizon and measure true
    separations; parameter-space distance can overstate world distance on
    the compressed (inner) side of a turn, so the world-frame minimum is
    the authoritative collision check."""
    traj = res.ego.trajectory
    t_idx = traj.time_index
    thetas = np.linspace(0.0, 1.0, samples_per_interval, endpoint=False)
    rows = []
    for k in range(traj.n_intervals):
        for theta in thetas:
            x = traj.interp_state(k, float(theta))
            rows.append((x[t_idx], x[0], x[1]))
    rows.append((traj.boundary_states[-1, t_idx],
                 traj.boundary_states[-1, 0], traj.boundary_states[-1, 1]))
    t_e, s_e, y_e = np.asarray(rows).T

    s_t = np.clip(res.spline.eval_s(t_e), 0.0, surface.total_length)
    y_lo, y_hi = surface.y_bounds
    y_t = np.clip(res.spline.eval_y(t_e), y_lo, y_hi)

    param_sep = np.hypot(s_e - s_t, y_e - y_t)
    p_ego = surface.frame_arrays(s_e, y_e).position()
    p_tgt = surface.frame_arrays(s_t, y_t).position()
    euclid = np.linalg.norm(p_ego - p_tgt, axis=-1)

    body_d = 2.0 * _body_radius_of(res)
    return VerificationReport(
        param_min=float(param_sep.min()),
        euclid_min=float(euclid.min()),
        body_diameter=body_d,
        collision=bool(euclid.min() < body_d),
        ego_time_monotone=bool(np.all(np.diff(t_e) > 0.0)),
        ego_within_track=bool(np.all((y_e >= y_lo) & (y_e <= y_hi))),
        n_samples=t_e.size,
    )


def _body_radius_of(res: OvertakeResult) -> float:
    """Circumscribing footprint radius recorded with the solved problem."""
    return float(res.ego.problem.model.params.circumscribing_radius)
