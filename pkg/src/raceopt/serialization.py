"""Canonical JSON persistence for scenarios and solve results.

Scenario and result documents are written with sorted keys and fixed
17-significant-digit float formatting so that load → re-serialize is
byte-identical and files diff cleanly across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .collocation import GridSpec, Trajectory, Weights
from .nlpsolver import SolverOptions
from .racing import AgentSpec, OvertakeResult, OvertakeScenario, VerificationReport
from .surfaces import ParametricSurface, TrackDefinition, build_surface
from .vehicles import make_model

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# canonical JSON formatting
# ---------------------------------------------------------------------------

def _format_scalar(obj) -> str:
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r} cannot be serialized")
        return "%.17g" % x
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    raise TypeError(f"unsupported JSON scalar type {type(obj).__name__}")


def _canonical_lines(obj, indent: str) -> str:
    pad = indent + "  "
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for key in sorted(obj):
            if not isinstance(key, str):
                raise TypeError("JSON object keys must be strings")
            items.append(f"{pad}{json.dumps(key)}: "
                         f"{_canonical_lines(obj[key], pad)}")
        return "{\n" + ",\n".join(items) + "\n" + indent + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = [f"{pad}{_canonical_lines(v, pad)}" for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + indent + "]"
    return _format_scalar(obj)


def dumps_canonical(obj) -> str:
    """Serialize to deterministic, human-diffable JSON text."""
    return _canonical_lines(obj, "") + "\n"


def write_canonical(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(obj))


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def _reject_unknown(d: dict, known, what: str) -> None:
    unknown = set(d) - set(known)
    if unknown:
        raise ValueError(f"invalid-{what}: unknown keys {sorted(unknown)}")


def _solver_to_dict(sv: SolverOptions) -> dict:
    return {"tol": sv.tol, "feas_tol": sv.feas_tol, "backend": sv.backend,
            "inner_max_iter": sv.inner_max_iter, "max_outer": sv.max_outer}


def _solver_from_dict(d: dict) -> SolverOptions:
    _reject_unknown(d, {"tol", "feas_tol", "backend", "inner_max_iter",
                        "max_outer"}, "solver")
    return SolverOptions(tol=float(d.get("tol", 1e-6)),
                         feas_tol=float(d.get("feas_tol", 1e-6)),
                         backend=str(d.get("backend", "auto")),
                         inner_max_iter=int(d.get("inner_max_iter", 3000)),
                         max_outer=int(d.get("max_outer", 60)))


@dataclass
class ScenarioFile:
    """On-disk description of a raceline or overtaking computation."""

    mode: str                       # "raceline" | "overtake"
    track: TrackDefinition
    agents: List[AgentSpec]
    n_intervals: int = 40
    degree: int = 3
    r: float = 1.8
    weights: Weights = field(default_factory=Weights)
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(
        tol=1e-6, feas_tol=1e-6))

    def validate(self) -> None:
        if self.mode not in ("raceline", "overtake"):
            raise ValueError(f"unknown mode {self.mode!r}")
        n_agents = {"raceline": 1, "overtake": 2}[self.mode]
        if len(self.agents) != n_agents:
            raise ValueError(f"mode {self.mode!r} needs exactly {n_agents} "
                             f"agent(s), got {len(self.agents)}")
        if self.mode == "overtake":
            self.to_overtake_scenario().validate()
        else:
            self.track.validate()
            agent = self.agents[0]
            agent.params.validate()
            y_lo, y_hi = self.track.y_bounds
            inset = agent.params.body_radius
            if not y_lo + inset <= agent.y0 <= y_hi - inset:
                raise ValueError(
                    f"initial lateral offset {agent.y0} is off-track for "
                    f"drivable bounds [{y_lo + inset}, {y_hi - inset}]")
        if self.n_intervals < 2:
            raise ValueError("need at least two collocation intervals")
        if self.degree < 1:
            raise ValueError("collocation degree must be at least 1")

    def to_overtake_scenario(self) -> OvertakeScenario:
        if len(self.agents) != 2:
            raise ValueError("overtake mode needs exactly two agents")
        # the leader (larger s0) is the target, the follower is the ego
        target, ego = sorted(self.agents, key=lambda a: -a.s0)
        return OvertakeScenario(track=self.track, target=target, ego=ego,
                                r=self.r, n_intervals=self.n_intervals,
                                degree=self.degree, weights=self.weights,
                                solver=self.solver)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "track": self.track.to_dict(),
            "agents": [a.to_dict() for a in self.agents],
            "grid": {"n_intervals": self.n_intervals, "degree": self.degree},
            "collision": {"r": self.r},
            "weights": {"w_u": self.weights.w_u, "w_du": self.weights.w_du},
            "solver": _solver_to_dict(self.solver),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioFile":
        _reject_unknown(d, {"schema_version", "mode", "track", "agents",
                            "grid", "collision", "weights", "solver"},
                        "scenario")
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {version!r}")
        grid = d.get("grid", {})
        _reject_unknown(grid, {"n_intervals", "degree"}, "grid")
        collision = d.get("collision", {})
        _reject_unknown(collision, {"r"}, "collision")
        weights = d.get("weights", {})
        _reject_unknown(weights, {"w_u", "w_du"}, "weights")
        sf = cls(
            mode=d["mode"],
            track=TrackDefinition.from_dict(d["track"]),
            agents=[AgentSpec.from_dict(a) for a in d["agents"]],
            n_intervals=int(grid.get("n_intervals", 40)),
            degree=int(grid.get("degree", 3)),
            r=float(collision.get("r", 1.8)),
            weights=Weights(w_u=float(weights.get("w_u", 1e-4)),
                            w_du=float(weights.get("w_du", 1e-3))),
            solver=_solver_from_dict(d.get("solver", {})),
        )
        sf.validate()
        return sf


def load_scenario(path) -> ScenarioFile:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid-json: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("invalid-scenario: top level must be an object")
    return ScenarioFile.from_dict(doc)


def save_scenario(path, sf: ScenarioFile) -> None:
    write_canonical(path, sf.to_dict())


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------

def trajectory_samples(traj: Trajectory, surface: ParametricSurface,
                       params) -> dict:
    """Node-wise samples of one trajectory with world positions.

    Returns columns for every state and input at the initial boundary plus
    all collocation nodes, together with ``pos3d`` rows recomputable from
    ``(s, y)`` through the track definition, and planar speed.  Two-track
    rows additionally carry the four tire normal loads.
    """
    states = np.vstack([traj.boundary_states[0][None, :], traj.node_states()])
    inputs = np.vstack([traj.interp_input(0, 0.0)[None, :],
                        traj.col_inputs.reshape(-1, len(traj.input_names))])
    pos = surface.frame_arrays(states[:, 0], states[:, 1]).position()
    out = {name: states[:, i].tolist()
           for i, name in enumerate(traj.state_names)}
    out["inputs"] = {name: inputs[:, i].tolist()
                     for i, name in enumerate(traj.input_names)}
    out["pos3d"] = np.asarray(pos, dtype=float).tolist()
    if "v1" in traj.state_names:
        v1 = states[:, traj.state_names.index("v1")]
        v2 = states[:, traj.state_names.index("v2")]
        out["speed"] = np.hypot(v1, v2).tolist()
        model = make_model(traj.model_tag or "two_track", surface, params)
        n_rows = []
        for x, u in zip(states, inputs):
            _, extras = model._rhs(x, u)
            n_rows.append([float(n) for n in extras["n_each"]])
        out["n_tires"] = n_rows
    else:
        out["speed"] = states[:, traj.state_names.index("v")].tolist()
    out["trajectory"] = traj.to_dict()
    return out


def _report_dict(res: OvertakeResult, report: VerificationReport) -> dict:
    return {
        "overtaken": bool(res.overtaken),
        "finish_time_target": res.target_finish_time,
        "finish_time_ego": res.ego_finish_time,
        "finish_time_ego_warmstart": res.ego_warmstart.final_time,
        "min_param_separation": res.min_param_separation,
        "min_param_separation_dense": report.param_min,
        "min_world_separation_dense": report.euclid_min,
        "required_separation": report.body_diameter,
        "collision_free": bool(not report.collision),
        "knot_assignment_iterations": res.knot_assignment_iterations,
        "knots_converged": bool(res.knots_converged),
        "solver": {
            "target": _nlp_stats(res.target),
            "ego_warmstart": _nlp_stats(res.ego_warmstart),
            "ego": _nlp_stats(res.ego),
        },
    }


def _nlp_stats(sol) -> dict:
    return {"status": sol.nlp.status, "kkt": sol.nlp.kkt,
            "violation": sol.nlp.violation, "n_outer": sol.nlp.n_outer,
            "objective": sol.nlp.f, "final_time": sol.final_time}


def overtake_result_dict(sf: ScenarioFile, res: OvertakeResult,
                         report: VerificationReport,
                         surface: ParametricSurface,
                         mesh_reference: str = "") -> dict:
    sc = sf.to_overtake_scenario()
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": sf.to_dict(),
        "agents": {
            "target": trajectory_samples(res.target.trajectory, surface,
                                         sc.target.params),
            "ego_warmstart": trajectory_samples(res.ego_warmstart.trajectory,
                                                surface, sc.ego.params),
            "ego": trajectory_samples(res.ego.trajectory, surface,
                                      sc.ego.params),
        },
        "report": _report_dict(res, report),
        "mesh": mesh_reference,
    }


def raceline_result_dict(sf: ScenarioFile, sol, surface: ParametricSurface,
                         mesh_reference: str = "") -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": sf.to_dict(),
        "agents": {
            "ego": trajectory_samples(sol.trajectory, surface,
                                      sf.agents[0].params),
        },
        "report": {"finish_time_ego": sol.final_time,
                   "solver": {"ego": _nlp_stats(sol)}},
        "mesh": mesh_reference,
    }
