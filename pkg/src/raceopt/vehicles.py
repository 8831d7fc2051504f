"""Vehicle dynamics on a parametric road surface.

Two models are provided:

* a kinematic bicycle with a derated friction-cone limit on the net
  tangential force and a bound on the net normal force, and
* a two-track model with quasi-static per-tire normal forces and a
  combined-slip magic-formula tire at each corner.

All functions evaluate on plain floats, numpy batches or
:class:`raceopt.ad.Dual` columns, which is what lets the transcriber
differentiate the dynamics exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ad
from .ad import value
from .surfaces import (
    GRAVITY,
    FrameData,
    ParametricSurface,
    _body_axes,
    net_normal_force,
    pose_kinematics,
)

SLIP_SMOOTHING = 0.1  # m/s, removes the standstill singularity in slip angles


@dataclass
class PacejkaParams:
    """Combined-slip magic formula coefficients (peak D = mu * N)."""

    b_x: float = 12.0
    c_x: float = 1.65
    e_x: float = -0.3
    b_y: float = 9.0
    c_y: float = 1.55
    e_y: float = -1.0
    b_x1: float = 13.0  # lateral-slip weighting on Fx
    b_y1: float = 10.0  # longitudinal-slip weighting on Fy

    def validate(self) -> None:
        for name in ("b_x", "c_x", "b_y", "c_y"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.c_x >= 2.5 or self.c_y >= 2.5:
            raise ValueError("shape factors must be below 2.5")
        if self.e_x >= 1.0 or self.e_y >= 1.0:
            raise ValueError("curvature factors must be below 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("b_x", "c_x", "e_x", "b_y", "c_y", "e_y", "b_x1", "b_y1")}

    @classmethod
    def from_dict(cls, d: dict) -> "PacejkaParams":
        p = cls(**{k: float(v) for k, v in d.items()})
        p.validate()
        return p


@dataclass
class VehicleParams:
    """Chassis, tire and limit parameters shared by both models."""

    m: float = 1500.0
    l_f: float = 1.5
    l_r: float = 1.5
    t_f: float = 0.8
    t_r: float = 0.8
    h: float = 0.4
    i_zz: float = 2250.0
    mu: float = 1.0
    tire: PacejkaParams = field(default_factory=PacejkaParams)
    c_drag: float = 0.7
    chi: float = 0.55          # front share of lateral load transfer
    a_max: float = 6.0
    a_min: float = -12.0
    delta_max: float = 0.5
    slip_max: float = 0.15
    n_wheel_max: float = 1.5 * 1500.0 * 9.81 / 4.0 * 2.0
    n_wheel_min: float = 0.0
    c_cone: float = 1.0 / np.sqrt(2.0)  # kinematic friction-cone derating

    def validate(self) -> None:
        for name in ("m", "i_zz", "l_f", "l_r", "t_f", "t_r", "h"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.mu <= 3.0:
            raise ValueError("mu must lie in (0, 3]")
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError("chi must lie in [0, 1]")
        if not 0.0 < self.c_cone <= 1.0:
            raise ValueError("c_cone must lie in (0, 1]")
        self.tire.validate()

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    @property
    def footprint_length(self) -> float:
        return self.wheelbase + 1.5  # body overhang beyond the axles

    @property
    def footprint_width(self) -> float:
        return 2.0 * self.t_f + 0.4

    @property
    def body_radius(self) -> float:
        """Inscribed footprint radius: separation below twice this value is a
        guaranteed overlap regardless of heading."""
        return 0.5 * self.footprint_width

    @property
    def circumscribing_radius(self) -> float:
        return 0.5 * float(np.hypot(self.footprint_length, self.footprint_width))

    def to_dict(self) -> dict:
        keys = ("m", "l_f", "l_r", "t_f", "t_r", "h", "i_zz", "mu", "c_drag",
                "chi", "a_max", "a_min", "delta_max", "slip_max",
                "n_wheel_max", "n_wheel_min", "c_cone")
        d = {k: getattr(self, k) for k in keys}
        d["tire"] = self.tire.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        d = dict(d)
        tire = PacejkaParams.from_dict(d.pop("tire", {}))
        p = cls(tire=tire, **{k: float(v) for k, v in d.items()})
        p.validate()
        return p


def _magic(slip, b, c, e):
    """sin(C atan(B k - E (B k - atan(B k)))) without the peak factor."""
    bk = b * slip
    return ad.sin(c * ad.atan(bk - e * (bk - ad.atan(bk))))


def _pacejka_raw(kappa, alpha, n_force, tire, mu):
    fx0 = mu * n_force * _magic(kappa, tire.b_x, tire.c_x, tire.e_x)
    fy0 = mu * n_force * _magic(alpha, tire.b_y, tire.c_y, tire.e_y)
    fx = fx0 * ad.cos(ad.atan(tire.b_x1 * alpha))
    fy = fy0 * ad.cos(ad.atan(tire.b_y1 * kappa))
    return fx, fy


def pacejka_combined(kappa, alpha, n_force, tire: PacejkaParams, mu: float):
    """Combined-slip tire forces (Fx, Fy) in the tire frame.

    Pure-slip magic formula curves weighted down by the opposing slip
    channel; the peak factor is mu * N.
    """
    if np.any(value(n_force) < 0):
        raise ValueError("negative normal force")
    return _pacejka_raw(kappa, alpha, n_force, tire, mu)


def distribute_normal(n_net, a1, a2, p: VehicleParams):
    """Quasi-static per-tire normal forces (fl, fr, rl, rr).

    Static axle shares, longitudinal transfer m*a1*h/(2L) and lateral
    transfer m*a2*h/2 split chi/(1-chi) between the axles.  The four
    outputs always sum to ``n_net`` exactly.
    """
    length = p.wheelbase
    n_front = n_net * (p.l_r / length)
    n_rear = n_net * (p.l_f / length)
    dn_long = p.m * a1 * p.h / (2.0 * length)
    f_lat = p.chi * p.m * a2 * p.h / (2.0 * p.t_f)
    r_lat = (1.0 - p.chi) * p.m * a2 * p.h / (2.0 * p.t_r)
    n_fl = 0.5 * n_front - dn_long - f_lat
    n_fr = 0.5 * n_front - dn_long + f_lat
    n_rl = 0.5 * n_rear + dn_long - r_lat
    n_rr = 0.5 * n_rear + dn_long + r_lat
    return n_fl, n_fr, n_rl, n_rr


def _gravity_tangent(f: FrameData, theta_s):
    """Gravity components along the yawed body tangent axes."""
    b1, b2 = _body_axes(f, theta_s)
    g1 = GRAVITY[0] * b1[0] + GRAVITY[1] * b1[1] + GRAVITY[2] * b1[2]
    g2 = GRAVITY[0] * b2[0] + GRAVITY[1] * b2[1] + GRAVITY[2] * b2[2]
    return g1, g2


# ---------------------------------------------------------------------------
# kinematic bicycle
# ---------------------------------------------------------------------------

KINEMATIC_STATES = ("s", "y", "theta_s", "v", "t")
KINEMATIC_INPUTS = ("a", "delta")


def kinematic_rhs(x, u, f: FrameData, p: VehicleParams):
    """Time derivative of the kinematic-bicycle state (s, y, theta_s, v, t).

    Returns (xdot, extras); extras carries intermediate quantities reused
    by the force residuals.
    """
    _, _, ths, v, _ = x
    a_cmd, delta = u
    tan_d = ad.tan(delta)
    w3 = v * tan_d / p.wheelbase
    v2 = v * tan_d * (p.l_r / p.wheelbase)
    s_dot, y_dot, ths_dot = pose_kinematics(f, ths, v, v2, w3)
    g1, g2 = _gravity_tangent(f, ths)
    v_dot = a_cmd + g1 - p.c_drag * v * v / p.m
    one = v * 0.0 + 1.0
    xdot = (s_dot, y_dot, ths_dot, v_dot, one)
    extras = {"v1": v, "v2": v2, "w3": w3, "v_dot": v_dot,
              "g1": g1, "g2": g2, "s_dot": s_dot, "y_dot": y_dot}
    return xdot, extras


def kinematic_force_residuals(x, u, f: FrameData, p: VehicleParams, extras=None):
    """Net normal force and friction-cone slack for the kinematic model.

    F_req is the tangential force the tires must supply: body acceleration
    of the contact point minus tangential gravity.  The cone slack
    (c_cone mu N)^2 - |F_req|^2 is constrained nonnegative by the
    transcriber.
    """
    if extras is None:
        _, extras = kinematic_rhs(x, u, f, p)
    _, delta = u
    n_net = net_normal_force(f, (extras["s_dot"], extras["y_dot"]), p.m)
    v_dot = extras["v_dot"]
    v2_dot = v_dot * ad.tan(delta) * (p.l_r / p.wheelbase)
    a1 = v_dot - extras["w3"] * extras["v2"]
    a2 = v2_dot + extras["w3"] * extras["v1"]
    f1 = p.m * (a1 - extras["g1"])
    f2 = p.m * (a2 - extras["g2"])
    cone_slack = (p.c_cone * p.mu * n_net) ** 2 - (f1 * f1 + f2 * f2)
    return n_net, cone_slack


# ---------------------------------------------------------------------------
# two-track model
# ---------------------------------------------------------------------------

TWO_TRACK_STATES = ("s", "y", "theta_s", "v1", "v2", "omega3", "t")
TWO_TRACK_INPUTS = ("delta", "kappa_f", "kappa_r")


def _two_track_forces(x, u, f: FrameData, p: VehicleParams):
    """Per-tire forces and normal loads for the two-track model.

    The load-transfer/tire-force algebraic loop is cut with one fixed-point
    sweep: tire forces are first evaluated at the static+geometric
    distribution, the resulting accelerations redistribute the load once,
    and the forces are re-evaluated.
    """
    _, _, ths, v1, v2, w3, _ = x
    delta, kap_f, kap_r = u
    s_dot, y_dot, ths_dot = pose_kinematics(f, ths, v1, v2, w3)
    n_net = net_normal_force(f, (s_dot, y_dot), p.m)
    g1, g2 = _gravity_tangent(f, ths)

    eps = SLIP_SMOOTHING
    def smooth(vx):
        return ad.sqrt(vx * vx + eps * eps)

    alpha_fl = delta - ad.atan((v2 + w3 * p.l_f) / smooth(v1 - w3 * p.t_f))
    alpha_fr = delta - ad.atan((v2 + w3 * p.l_f) / smooth(v1 + w3 * p.t_f))
    alpha_rl = -ad.atan((v2 - w3 * p.l_r) / smooth(v1 - w3 * p.t_r))
    alpha_rr = -ad.atan((v2 - w3 * p.l_r) / smooth(v1 + w3 * p.t_r))
    slips = (kap_f, kap_f, kap_r, kap_r)
    alphas = (alpha_fl, alpha_fr, alpha_rl, alpha_rr)

    drag = p.c_drag * v1 * v1

    def body_forces(n_each):
        fx_tot, fy_tot = 0.0, 0.0
        per_tire = []
        cd, sd = ad.cos(delta), ad.sin(delta)
        for i, (kap, alp, n_i) in enumerate(zip(slips, alphas, n_each)):
            fx_t, fy_t = _pacejka_raw(kap, alp, n_i, p.tire, p.mu)
            if i < 2:  # front wheels rotate with steering
                fx_b = fx_t * cd - fy_t * sd
                fy_b = fx_t * sd + fy_t * cd
            else:
                fx_b, fy_b = fx_t, fy_t
            per_tire.append((fx_b, fy_b))
            fx_tot = fx_tot + fx_b
            fy_tot = fy_tot + fy_b
        return fx_tot, fy_tot, per_tire

    n0 = distribute_normal(n_net, 0.0, 0.0, p)
    fx0, fy0, _ = body_forces(n0)
    a1 = (fx0 - drag) / p.m
    a2 = fy0 / p.m
    n_each = distribute_normal(n_net, a1, a2, p)
    fx_tot, fy_tot, per_tire = body_forces(n_each)
    return {
        "n_net": n_net, "n_each": n_each, "per_tire": per_tire,
        "fx_tot": fx_tot, "fy_tot": fy_tot, "drag": drag,
        "g1": g1, "g2": g2, "pose": (s_dot, y_dot, ths_dot),
        "alphas": alphas,
    }


def two_track_rhs(x, u, f: FrameData, p: VehicleParams):
    """Time derivative of the two-track state (s, y, theta_s, v1, v2, w3, t)."""
    _, _, _, v1, v2, w3, _ = x
    q = _two_track_forces(x, u, f, p)
    s_dot, y_dot, ths_dot = q["pose"]
    v1_dot = (q["fx_tot"] - q["drag"]) / p.m + q["g1"] + w3 * v2
    v2_dot = q["fy_tot"] / p.m + q["g2"] - w3 * v1
    (fx_fl, fy_fl), (fx_fr, fy_fr), (fx_rl, fy_rl), (fx_rr, fy_rr) = q["per_tire"]
    # wheel positions: fl (+lf, +tf), fr (+lf, -tf), rl (-lr, +tr), rr (-lr, -tr)
    moment = (
        p.l_f * (fy_fl + fy_fr) - p.l_r * (fy_rl + fy_rr)
        - p.t_f * fx_fl + p.t_f * fx_fr - p.t_r * fx_rl + p.t_r * fx_rr
    )
    w3_dot = moment / p.i_zz
    one = v1 * 0.0 + 1.0
    xdot = (s_dot, y_dot, ths_dot, v1_dot, v2_dot, w3_dot, one)
    return xdot, q


def two_track_constraint_residuals(x, u, f: FrameData, p: VehicleParams, extras=None):
    """Per-tire normal forces and their cap slacks."""
    if extras is None:
        extras = _two_track_forces(x, u, f, p)
    n_each = extras["n_each"]
    return tuple(n_each), tuple(p.n_wheel_max - n for n in n_each)


# ---------------------------------------------------------------------------
# collocation adapters
# ---------------------------------------------------------------------------

V_MAX = 120.0  # m/s, used for scaling
S_DOT_MIN = 1.0  # m/s floor keeping the spatial transform bounded


class VehicleModel:
    """Common adapter turning a time-domain RHS into the spatial form used
    by the transcriber (first state is s with ds/ds = 1)."""

    name: str
    state_names: tuple
    input_names: tuple
    pinned_state = 0  # s is the independent variable

    def __init__(self, surface: ParametricSurface, params: VehicleParams):
        params.validate()
        self.surface = surface
        self.params = params

    @property
    def n_states(self):
        return len(self.state_names)

    @property
    def n_inputs(self):
        return len(self.input_names)

    def spatial_rhs(self, x, u):
        xdot, extras = self._rhs(x, u)
        inv = 1.0 / xdot[0]
        out = tuple(d * inv for d in xdot)
        return out, extras

    def lateral_bounds(self):
        """Track edges inset by half the vehicle footprint width."""
        y_lo, y_hi = self.surface.y_bounds
        inset = self.params.body_radius
        if y_hi - inset <= y_lo + inset:
            raise ValueError("vehicle wider than the road")
        return y_lo + inset, y_hi - inset

    def node_constraints(self, x, u, extras):
        """List of (value, lb, ub, scale, name) enforced at collocation
        points, in addition to simple variable bounds."""
        raise NotImplementedError

    def _rhs(self, x, u):
        raise NotImplementedError


class KinematicBicycleModel(VehicleModel):
    name = "kinematic"
    state_names = KINEMATIC_STATES
    input_names = KINEMATIC_INPUTS

    def _rhs(self, x, u):
        f = self.surface.frame_arrays(x[0], x[1])
        xdot, extras = kinematic_rhs(x, u, f, self.params)
        extras["frame"] = f
        return xdot, extras

    def state_bounds(self):
        y_lo, y_hi = self.lateral_bounds()
        return [
            (0.0, self.surface.total_length),
            (y_lo, y_hi),
            (-1.4, 1.4),
            (0.8, V_MAX),
            (0.0, 2.0 * self.surface.total_length),
        ]

    def input_bounds(self):
        p = self.params
        return [(p.a_min, p.a_max), (-p.delta_max, p.delta_max)]

    def state_scales(self):
        return np.array([self.surface.total_length, 10.0, 1.0, V_MAX,
                         self.surface.total_length / 30.0])

    def input_scales(self):
        p = self.params
        return np.array([max(p.a_max, -p.a_min), p.delta_max])

    def node_constraints(self, x, u, extras):
        p = self.params
        f = extras["frame"]
        n_net, cone = kinematic_force_residuals(x, u, f, p, extras)
        n_scale = p.m * 9.81
        cone_scale = (p.c_cone * p.mu * n_scale) ** 2
        return [
            (extras["s_dot"], S_DOT_MIN, np.inf, V_MAX, "s_dot_floor"),
            (n_net, 0.0, 4.0 * p.n_wheel_max, n_scale, "net_normal"),
            (cone, 0.0, np.inf, cone_scale, "friction_cone"),
        ]

    def default_state(self, s, y, v):
        return np.array([s, y, 0.0, v, 0.0])


class TwoTrackModel(VehicleModel):
    name = "two_track"
    state_names = TWO_TRACK_STATES
    input_names = TWO_TRACK_INPUTS

    def _rhs(self, x, u):
        f = self.surface.frame_arrays(x[0], x[1])
        xdot, extras = two_track_rhs(x, u, f, self.params)
        extras["frame"] = f
        extras["s_dot"] = xdot[0]
        return xdot, extras

    def state_bounds(self):
        y_lo, y_hi = self.lateral_bounds()
        return [
            (0.0, self.surface.total_length),
            (y_lo, y_hi),
            (-1.4, 1.4),
            (0.8, V_MAX),
            (-15.0, 15.0),
            (-3.0, 3.0),
            (0.0, 2.0 * self.surface.total_length),
        ]

    def input_bounds(self):
        p = self.params
        return [(-p.delta_max, p.delta_max), (-p.slip_max, p.slip_max),
                (-p.slip_max, p.slip_max)]

    def state_scales(self):
        return np.array([self.surface.total_length, 10.0, 1.0, V_MAX, 10.0, 2.0,
                         self.surface.total_length / 30.0])

    def input_scales(self):
        p = self.params
        return np.array([p.delta_max, p.slip_max, p.slip_max])

    def node_constraints(self, x, u, extras):
        p = self.params
        n_scale = p.m * 9.81 / 4.0
        cons = [(extras["s_dot"], S_DOT_MIN, np.inf, V_MAX, "s_dot_floor")]
        for tag, n_i in zip(("fl", "fr", "rl", "rr"), extras["n_each"]):
            cons.append((n_i, p.n_wheel_min, p.n_wheel_max, n_scale, f"tire_normal_{tag}"))
        return cons

    def default_state(self, s, y, v):
        return np.array([s, y, 0.0, v, 0.0, 0.0, 0.0])


MODEL_CLASSES = {"kinematic": KinematicBicycleModel, "two_track": TwoTrackModel}


def make_model(tag: str, surface: ParametricSurface, params: VehicleParams) -> VehicleModel:
    if tag not in MODEL_CLASSES:
        raise ValueError(f"unknown model {tag!r}")
    return MODEL_CLASSES[tag](surface, params)
