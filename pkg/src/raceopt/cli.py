"""Command-line entry points for raceline and overtaking computations.

Exit codes: 0 success, 1 invalid input, 2 solver finished without an
optimality certificate, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
from pathlib import Path

import numpy as np

from . import serialization
from .collocation import GridSpec
from .nlpsolver import SolverError
from .racing import RacelineProblem, solve_overtake, solve_raceline, verify_result
from .serialization import ScenarioFile, load_scenario, write_canonical
from .surfaces import TrackError, build_surface, surface_mesh

EXIT_OK = 0
EXIT_INVALID_INPUT = 1
EXIT_NOT_OPTIMAL = 2
EXIT_INTERNAL = 3

log = logging.getLogger("raceopt")


class _WallClockExceeded(Exception):
    pass


def _alarm_handler(signum, frame):
    raise _WallClockExceeded()


def _apply_thread_cap() -> None:
    """Cap numerical-library parallelism from RACE_OPT_THREADS.

    Best-effort: BLAS pools created before this call keep their size.
    """
    cap = os.environ.get("RACE_OPT_THREADS")
    if not cap:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise ValueError(f"RACE_OPT_THREADS must be a positive integer, "
                         f"got {cap!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _load(args) -> ScenarioFile:
    sf = load_scenario(args.scenario)
    if args.solver_backend is not None:
        sf.solver.backend = args.solver_backend
    return sf


def _mesh_path(out: Path) -> Path:
    return out.with_name(out.stem + "_mesh.json")


def _write_mesh(surface, out: Path, resolution: float = 2.0) -> Path:
    mesh = surface_mesh(surface, resolution)
    path = _mesh_path(out)
    write_canonical(path, mesh)
    return path


def _raceline_problem(sf: ScenarioFile, surface) -> RacelineProblem:
    agent = sf.agents[0]
    joints = tuple(j for j in surface.joints
                   if agent.s0 < j < surface.total_length)
    return RacelineProblem(
        surface=surface, model_tag=agent.model, params=agent.params,
        grid=GridSpec(agent.s0, surface.total_length, sf.n_intervals,
                      sf.degree, joints=joints),
        y0=agent.y0, v0=agent.v0, weights=sf.weights, solver=sf.solver)


def cmd_raceline(args) -> int:
    sf = _load(args)
    if sf.mode != "raceline":
        raise ValueError(f"expected a raceline scenario, got mode {sf.mode!r}")
    surface = build_surface(sf.track)
    sol = solve_raceline(_raceline_problem(sf, surface))
    out = Path(args.out)
    mesh_path = _write_mesh(surface, out)
    doc = serialization.raceline_result_dict(sf, sol, surface, mesh_path.name)
    write_canonical(out, doc)
    log.info("raceline: status=%s T=%.6f -> %s", sol.nlp.status,
             sol.final_time, out)
    print(f"raceline status={sol.nlp.status} final_time={sol.final_time:.6f} "
          f"kkt={sol.nlp.kkt:.2e} out={out}")
    return EXIT_OK if sol.ok else EXIT_NOT_OPTIMAL


def cmd_overtake(args) -> int:
    sf = _load(args)
    if sf.mode != "overtake":
        raise ValueError(f"expected an overtake scenario, got mode {sf.mode!r}")
    sc = sf.to_overtake_scenario()
    surface = build_surface(sf.track)
    res = solve_overtake(sc, surface=surface)
    report = verify_result(res, surface)
    out = Path(args.out)
    mesh_path = _write_mesh(surface, out)
    doc = serialization.overtake_result_dict(sf, res, report, surface,
                                             mesh_path.name)
    write_canonical(out, doc)
    print(f"overtaken={res.overtaken} "
          f"t_ego={res.ego_finish_time:.3f} t_target={res.target_finish_time:.3f} "
          f"min_sep_param={res.min_param_separation:.3f} "
          f"min_sep_world={report.euclid_min:.3f} out={out}")
    return EXIT_OK if res.ok and res.knots_converged else EXIT_NOT_OPTIMAL


def cmd_validate(args) -> int:
    sf = load_scenario(args.scenario)
    sf.validate()
    print(f"valid {sf.mode} scenario: {args.scenario}")
    return EXIT_OK


def cmd_export_mesh(args) -> int:
    sf = load_scenario(args.scenario)
    surface = build_surface(sf.track)
    mesh = surface_mesh(surface, args.resolution)
    write_canonical(args.out, mesh)
    print(f"mesh: {len(mesh['vertices'])} vertices, "
          f"{len(mesh['faces'])} faces -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="raceopt",
        description="Minimum-time racelines and overtaking maneuvers on "
                    "nonplanar road surfaces.")
    ap.add_argument("--log-level", default="warning",
                    choices=["debug", "info", "warning", "error"])
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--scenario", required=True, help="scenario JSON path")
        if needs_out:
            p.add_argument("--out", required=True, help="result JSON path")
        p.add_argument("--max-time", type=float, default=None,
                       help="wall-clock limit in seconds")
        p.add_argument("--solver-backend", default=None,
                       help="override the scenario's solver backend")

    p = sub.add_parser("raceline", help="single-vehicle minimum-time raceline")
    add_common(p)
    p.set_defaults(func=cmd_raceline)

    p = sub.add_parser("overtake", help="two-vehicle overtaking game")
    add_common(p)
    p.set_defaults(func=cmd_overtake)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate, max_time=None)

    p = sub.add_parser("export-mesh", help="write the road surface mesh")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=float, default=2.0)
    p.set_defaults(func=cmd_export_mesh, max_time=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_thread_cap()
        if args.max_time is not None:
            if args.max_time <= 0:
                raise ValueError("--max-time must be positive")
            signal.signal(signal.SIGALRM, _alarm_handler)
            signal.alarm(int(np.ceil(args.max_time)))
        try:
            return args.func(args)
        finally:
            if args.max_time is not None:
                signal.alarm(0)
    except _WallClockExceeded:
        print("aborted: wall-clock limit exceeded", file=sys.stderr)
        return EXIT_NOT_OPTIMAL
    except (ValueError, TrackError, SolverError, OSError, KeyError,
            TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
