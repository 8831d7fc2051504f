"""Shipped track and scenario builders.

Two road surfaces are provided: a U-turn whose cross-section is a circular
arc (the road is a band on a cylinder-like surface), and a banked chicane
with two opposing bends.  Scenario builders pair them with vehicle setups:
a symmetric matchup (both vehicles use the kinematic model) and an
asymmetric one (two-track ego versus kinematic target).
"""

from __future__ import annotations

import numpy as np

from .racing import AgentSpec, OvertakeScenario
from .surfaces import Segment, TrackDefinition
from .vehicles import VehicleParams

U_TURN_RADIUS = 60.0       # m, centerline radius of the 180-degree arc
U_TURN_STRAIGHT = 150.0    # m, entry and exit straights
U_TURN_HALF_WIDTH = 6.0    # m
U_TURN_PROFILE_R = 120.0   # m, cross-section arc radius

CHICANE_BEND_RADIUS = 25.0    # m
CHICANE_BEND_ANGLE = np.pi / 4.0
CHICANE_HALF_WIDTH = 4.5      # m
CHICANE_BANK_MAX = 0.35       # rad


def uturn_track() -> TrackDefinition:
    """180-degree left U-turn with an arc cross-section profile.

    The lateral datum is shifted so the parameter axis y = 0 runs along the
    inner edge of the turn: parameter-space distances then understate true
    distances least where the collision constraint matters most.
    """
    arc_len = np.pi * U_TURN_RADIUS
    return TrackDefinition(
        kind="arc_profile",
        segments=[Segment(U_TURN_STRAIGHT),
                  Segment(arc_len, 1.0 / U_TURN_RADIUS),
                  Segment(U_TURN_STRAIGHT)],
        half_width=U_TURN_HALF_WIDTH,
        profile_radius=U_TURN_PROFILE_R,
        centerline_offset=-U_TURN_HALF_WIDTH,
    )


def chicane_track() -> TrackDefinition:
    """Two opposing 45-degree bends with linear banking into each bend.

    Banking cannot favor the inner edge of both bends at once, so the
    lateral datum stays at the road center.
    """
    bend = CHICANE_BEND_RADIUS * CHICANE_BEND_ANGLE
    kappa = 1.0 / CHICANE_BEND_RADIUS
    s0, s1 = 30.0, 30.0 + bend            # first bend
    s2 = s1 + 20.0                        # middle straight
    s3 = s2 + bend                        # second bend
    total = s3 + 30.0
    return TrackDefinition(
        kind="banked_frenet",
        segments=[Segment(30.0), Segment(bend, kappa), Segment(20.0),
                  Segment(bend, -kappa), Segment(30.0)],
        half_width=CHICANE_HALF_WIDTH,
        banking=[(0.0, 0.0), (s0, 0.0), (0.5 * (s0 + s1), CHICANE_BANK_MAX),
                 (s1, CHICANE_BANK_MAX), (s2, -CHICANE_BANK_MAX),
                 (0.5 * (s2 + s3), -CHICANE_BANK_MAX), (s3, 0.0),
                 (total, 0.0)],
    )


def _agents(symmetric: bool, v0: float, gap: float, y0: float):
    target = AgentSpec(model="kinematic", params=VehicleParams(),
                       v0=v0, s0=gap, y0=y0)
    ego_model = "kinematic" if symmetric else "two_track"
    ego = AgentSpec(model=ego_model, params=VehicleParams(),
                    v0=v0, s0=0.0, y0=y0)
    return target, ego


def uturn_scenario(symmetric: bool = False, n_intervals: int = 48) -> OvertakeScenario:
    """U-turn matchup: both vehicles at 40 m/s, target 10 m ahead."""
    track = uturn_track()
    target, ego = _agents(symmetric, v0=40.0, gap=10.0,
                          y0=track.centerline_offset)
    sc = OvertakeScenario(track=track, target=target, ego=ego,
                          n_intervals=n_intervals)
    sc.validate()
    return sc


def chicane_scenario(symmetric: bool = False, n_intervals: int = 40) -> OvertakeScenario:
    """Chicane matchup: both vehicles at 10 m/s, target 5 m ahead."""
    track = chicane_track()
    target, ego = _agents(symmetric, v0=10.0, gap=5.0, y0=0.0)
    sc = OvertakeScenario(track=track, target=target, ego=ego,
                          n_intervals=n_intervals)
    sc.validate()
    return sc


SCENARIO_BUILDERS = {
    "uturn_overtake": lambda: uturn_scenario(symmetric=False),
    "uturn_symmetric": lambda: uturn_scenario(symmetric=True),
    "chicane_overtake": lambda: chicane_scenario(symmetric=False),
    "chicane_symmetric": lambda: chicane_scenario(symmetric=True),
}
