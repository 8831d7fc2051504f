"""Minimum-time racelines and overtaking maneuvers on nonplanar road
surfaces: parametric track geometry, vehicle dynamics, spatial collocation,
NLP solving, and a two-vehicle leader-follower overtaking game."""

from .collocation import GridSpec, Trajectory, Weights
from .nlpsolver import NlpProblem, NlpSolution, SolverOptions, solve
from .racing import (AgentSpec, OvertakeResult, OvertakeScenario,
                     RacelineProblem, RacelineSolution, reparam_by_time,
                     solve_overtake, solve_raceline, verify_result)
from .serialization import ScenarioFile, dumps_canonical, load_scenario, save_scenario
from .surfaces import (ParametricSurface, Segment, SurfaceCoord,
                       TrackDefinition, TrackError, build_surface,
                       surface_mesh)
from .vehicles import VehicleParams, make_model

__version__ = "1.0.0"

__all__ = [
    "AgentSpec", "GridSpec", "NlpProblem", "NlpSolution", "OvertakeResult",
    "OvertakeScenario", "ParametricSurface", "RacelineProblem",
    "RacelineSolution", "ScenarioFile", "Segment", "SolverOptions",
    "SurfaceCoord", "TrackDefinition", "TrackError", "Trajectory",
    "VehicleParams", "Weights", "build_surface", "dumps_canonical",
    "load_scenario", "make_model", "reparam_by_time", "save_scenario",
    "solve", "solve_overtake", "solve_raceline", "surface_mesh",
    "verify_result",
]
