"""Parametric road surfaces and tangent-contact differential geometry.

A track is a centerline of piecewise constant-curvature planar segments
dressed with a cross-section profile: flat, banked (piecewise-linear bank
angle) or a circular arc of fixed radius.  The surface map is

    p(s, y) = c(s) + A(s, y) * e_y(s) + Z(s, y) * e_z

with ``c`` the planar centerline, ``e_y`` its left normal and ``(A, Z)``
the cross-section curve, parameterized so that ``y`` is arc length across
the road.  All frame quantities (tangent basis, unit normal, fundamental
forms) are closed-form and evaluate on plain arrays or on
:class:`raceopt.ad.Dual` batches, so NLP constraints can differentiate
through the geometry exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ad
from .ad import value

GRAVITY = np.array([0.0, 0.0, -9.81])

_KINDS = ("flat_frenet", "banked_frenet", "arc_profile")


class TrackError(ValueError):
    """Invalid track definition or out-of-domain query."""


@dataclass(frozen=True)
class SurfaceCoord:
    """Point in surface parameters: arc length along the reference line and
    lateral arc length across the cross-section."""

    s: float
    y: float


@dataclass(frozen=True)
class Segment:
    """Centerline piece of constant curvature."""

    length: float
    curvature: float = 0.0


@dataclass
class TrackDefinition:
    """Declarative description of a road surface.

    ``centerline_offset`` places the road center at ``y = centerline_offset``
    so the parameter axis ``y = 0`` can sit at an edge of the pavement
    (used to keep the collision constraint conservative on turns).
    """

    kind: str
    segments: list[Segment]
    half_width: float
    banking: list[tuple[float, float]] = field(default_factory=list)  # (s, beta)
    profile_radius: float = 0.0
    centerline_offset: float = 0.0

    @property
    def total_length(self) -> float:
        return float(sum(seg.length for seg in self.segments))

    @property
    def y_bounds(self) -> tuple[float, float]:
        return (self.centerline_offset - self.half_width,
                self.centerline_offset + self.half_width)

    def validate(self) -> None:
        if self.kind not in _KINDS:
            raise TrackError(f"invalid-track: unknown kind {self.kind!r}")
        if not self.segments:
            raise TrackError("invalid-track: no centerline segments")
        for i, seg in enumerate(self.segments):
            if seg.length <= 0:
                raise TrackError(f"invalid-track: segment {i} has length {seg.length}")
        if self.half_width <= 0:
            raise TrackError("invalid-track: half_width must be positive")
        reach = self.half_width + abs(self.centerline_offset)
        for i, seg in enumerate(self.segments):
            if abs(seg.curvature) * reach >= 1.0:
                raise TrackError(
                    f"invalid-track: segment {i} curvature {seg.curvature} degenerates "
                    f"the metric within lateral reach {reach}"
                )
        if self.kind == "arc_profile":
            if self.profile_radius <= self.half_width:
                raise TrackError("invalid-track: profile_radius must exceed half_width")
        if self.kind == "banked_frenet":
            if len(self.banking) < 2:
                raise TrackError("invalid-track: banked_frenet needs a banking profile")
            ss = [b[0] for b in self.banking]
            if any(b <= a for a, b in zip(ss[:-1], ss[1:])):
                raise TrackError("invalid-track: banking breakpoints must increase")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "segments": [{"length": s.length, "curvature": s.curvature}
                         for s in self.segments],
            "half_width": self.half_width,
            "banking": [[s, b] for s, b in self.banking],
            "profile_radius": self.profile_radius,
            "centerline_offset": self.centerline_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrackDefinition":
        known = {"kind", "segments", "half_width", "banking", "profile_radius",
                 "centerline_offset"}
        unknown = set(d) - known
        if unknown:
            raise TrackError(f"invalid-track: unknown keys {sorted(unknown)}")
        return cls(
            kind=d["kind"],
            segments=[Segment(float(s["length"]), float(s.get("curvature", 0.0)))
                      for s in d["segments"]],
            half_width=float(d["half_width"]),
            banking=[(float(s), float(b)) for s, b in d.get("banking", [])],
            profile_radius=float(d.get("profile_radius", 0.0)),
            centerline_offset=float(d.get("centerline_offset", 0.0)),
        )


class FrameData:
    """Surface frame at one or many (s, y): position, tangent basis,
    unit normal, fundamental forms and the in-plane rotation-rate
    coefficients.

    Vector quantities are stored as component tuples so the same object
    works for scalar queries, vectorized batches and Dual numbers.
    """

    __slots__ = ("p", "xs", "xy", "n", "I", "II", "wn_coeffs")

    def __init__(self, p, xs, xy, n, I, II, wn_coeffs):
        self.p = p          # (px, py, pz)
        self.xs = xs        # dp/ds components
        self.xy = xy        # dp/dy components
        self.n = n          # unit normal components
        self.I = I          # (I_ss, I_sy, I_yy)
        self.II = II        # (II_ss, II_sy, II_yy)
        self.wn_coeffs = wn_coeffs  # (c_s, c_y)

    def position(self):
        return np.stack([value(c) for c in self.p], axis=-1)

    def tangent_s(self):
        return np.stack([value(c) for c in self.xs], axis=-1)

    def tangent_y(self):
        return np.stack([value(c) for c in self.xy], axis=-1)

    def normal(self):
        return np.stack([value(c) for c in self.n], axis=-1)

    def first_form(self):
        a, b, c = (value(v) for v in self.I)
        return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)

    def second_form(self):
        a, b, c = (value(v) for v in self.II)
        return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)

    def metric_det(self):
        return self.I[0] * self.I[2] - self.I[1] * self.I[1]


def _dot3(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _cross3(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


class ParametricSurface:
    """Realized road surface with exact frames.

    Instances are immutable after construction and all queries are pure,
    so they are safe to share across threads.
    """

    def __init__(self, definition: TrackDefinition):
        definition.validate()
        self.definition = definition
        segs = definition.segments
        lengths = np.array([seg.length for seg in segs])
        self._s_break = np.concatenate([[0.0], np.cumsum(lengths)])
        self._kappa = np.array([seg.curvature for seg in segs])
        # start pose of each segment
        psi = np.zeros(len(segs) + 1)
        x = np.zeros(len(segs) + 1)
        y = np.zeros(len(segs) + 1)
        for i, seg in enumerate(segs):
            k = seg.curvature
            if abs(k) < 1e-14:
                psi[i + 1] = psi[i]
                x[i + 1] = x[i] + seg.length * np.cos(psi[i])
                y[i + 1] = y[i] + seg.length * np.sin(psi[i])
            else:
                psi[i + 1] = psi[i] + k * seg.length
                x[i + 1] = x[i] + (np.sin(psi[i + 1]) - np.sin(psi[i])) / k
                y[i + 1] = y[i] - (np.cos(psi[i + 1]) - np.cos(psi[i])) / k
        self._psi0, self._x0, self._y0 = psi[:-1], x[:-1], y[:-1]

        if definition.kind == "banked_frenet":
            bs = np.array([b[0] for b in definition.banking])
            bb = np.array([b[1] for b in definition.banking])
            if bs[0] > 0.0:
                bs = np.concatenate([[0.0], bs])
                bb = np.concatenate([[bb[0]], bb])
            if bs[-1] < definition.total_length:
                bs = np.concatenate([bs, [definition.total_length]])
                bb = np.concatenate([bb, [bb[-1]]])
            self._bank_s = bs
            self._bank_b = bb
            self._bank_slope = np.diff(bb) / np.diff(bs)
        else:
            self._bank_s = np.array([0.0, definition.total_length])
            self._bank_b = np.zeros(2)
            self._bank_slope = np.zeros(1)

        joints = set(np.round(self._s_break[1:-1], 9))
        joints |= set(np.round(self._bank_s[1:-1], 9))
        self.joints = np.array(sorted(joints))

    # -- basic properties ---------------------------------------------
    @property
    def total_length(self) -> float:
        return float(self._s_break[-1])

    @property
    def y_bounds(self) -> tuple[float, float]:
        return self.definition.y_bounds

    def _check_domain(self, s):
        sv = np.atleast_1d(value(s))
        # relative slack: optimizer iterates can overshoot variable bounds
        # by rounding error of order eps * total_length
        tol = 1e-6 * (1.0 + self.total_length)
        if np.any(sv < -tol) or np.any(sv > self.total_length + tol):
            raise TrackError(
                f"out-of-domain s: range [{sv.min()}, {sv.max()}] vs "
                f"[0, {self.total_length}]"
            )

    # -- centerline ----------------------------------------------------
    def _centerline(self, s):
        """Heading, curvature and position of the reference line at s."""
        sv = np.atleast_1d(value(s))
        # nudge left so a query exactly on a joint resolves to the segment
        # whose interval it terminates (collocation endpoints sit on joints)
        idx = np.clip(np.searchsorted(self._s_break, sv - 1e-9, side="right") - 1,
                      0, len(self._kappa) - 1)
        k = self._kappa[idx]
        psi0 = self._psi0[idx]
        ds = s - self._s_break[idx]
        psi = psi0 + k * ds
        straight = np.abs(k) < 1e-14
        ksafe = np.where(straight, 1.0, k)
        cx = ad.where(
            straight,
            self._x0[idx] + ds * np.cos(psi0),
            self._x0[idx] + (ad.sin(psi) - np.sin(psi0)) / ksafe,
        )
        cy = ad.where(
            straight,
            self._y0[idx] + ds * np.sin(psi0),
            self._y0[idx] - (ad.cos(psi) - np.cos(psi0)) / ksafe,
        )
        return psi, k, cx, cy

    def _bank(self, s):
        sv = np.atleast_1d(value(s))
        idx = np.clip(np.searchsorted(self._bank_s, sv - 1e-9, side="right") - 1,
                      0, len(self._bank_slope) - 1)
        slope = self._bank_slope[idx]
        beta = self._bank_b[idx] + slope * (s - self._bank_s[idx])
        return beta, slope

    def _cross_section(self, s, y):
        """Cross-section displacement (A, Z) and its partials."""
        zeros = y * 0.0
        kind = self.definition.kind
        if kind == "flat_frenet":
            return {
                "A": y + zeros, "A_s": zeros, "A_y": zeros + 1.0,
                "A_ss": zeros, "A_sy": zeros, "A_yy": zeros,
                "Z": zeros, "Z_s": zeros, "Z_y": zeros,
                "Z_ss": zeros, "Z_sy": zeros, "Z_yy": zeros,
            }
        if kind == "banked_frenet":
            beta, m = self._bank(s)
            cb, sb = ad.cos(beta), ad.sin(beta)
            return {
                "A": y * cb, "A_s": -y * m * sb, "A_y": cb,
                "A_ss": -y * m * m * cb, "A_sy": -m * sb, "A_yy": zeros,
                "Z": y * sb, "Z_s": y * m * cb, "Z_y": sb,
                "Z_ss": -y * m * m * sb, "Z_sy": m * cb, "Z_yy": zeros,
            }
        # arc_profile: circular arc of radius R, lowest point at the road
        # center, anchored so the reference line (y = 0) stays on the arc.
        R = self.definition.profile_radius
        o = self.definition.centerline_offset
        u = (y - o) / R
        u0 = -o / R
        su, cu = ad.sin(u), ad.cos(u)
        return {
            "A": R * (su - np.sin(u0)), "A_s": zeros, "A_y": cu,
            "A_ss": zeros, "A_sy": zeros, "A_yy": -su / R,
            "Z": R * (np.cos(u0) - cu), "Z_s": zeros, "Z_y": su,
            "Z_ss": zeros, "Z_sy": zeros, "Z_yy": cu / R,
        }

    # -- frames ----------------------------------------------------------
    def frame_arrays(self, s, y) -> FrameData:
        """Frame quantities for batched (and Dual) surface coordinates."""
        self._check_domain(s)
        psi, k, cx, cy = self._centerline(s)
        cpsi, spsi = ad.cos(psi), ad.sin(psi)
        q = self._cross_section(s, y)
        A, Z = q["A"], q["Z"]

        # world components; T = (cpsi, spsi, 0), e_y = (-spsi, cpsi, 0)
        p = (cx - A * spsi, cy + A * cpsi, Z + 0.0 * cx)
        one_m_kA = 1.0 - k * A
        xs = (
            one_m_kA * cpsi - q["A_s"] * spsi,
            one_m_kA * spsi + q["A_s"] * cpsi,
            q["Z_s"],
        )
        xy = (-q["A_y"] * spsi, q["A_y"] * cpsi, q["Z_y"])
        e_y_coef_ss = k * one_m_kA + q["A_ss"]
        p_ss = (
            -2.0 * k * q["A_s"] * cpsi - e_y_coef_ss * spsi,
            -2.0 * k * q["A_s"] * spsi + e_y_coef_ss * cpsi,
            q["Z_ss"],
        )
        p_sy = (
            -k * q["A_y"] * cpsi - q["A_sy"] * spsi,
            -k * q["A_y"] * spsi + q["A_sy"] * cpsi,
            q["Z_sy"],
        )
        p_yy = (-q["A_yy"] * spsi, q["A_yy"] * cpsi, q["Z_yy"])

        nr = _cross3(xs, xy)
        nn = ad.sqrt(_dot3(nr, nr))
        n = (nr[0] / nn, nr[1] / nn, nr[2] / nn)

        I = (_dot3(xs, xs), _dot3(xs, xy), _dot3(xy, xy))
        II = (_dot3(p_ss, n), _dot3(p_sy, n), _dot3(p_yy, n))

        # rotation rate of the normalized s-tangent about n
        inv_len = 1.0 / ad.sqrt(I[0])
        es = (xs[0] * inv_len, xs[1] * inv_len, xs[2] * inv_len)
        e2 = _cross3(n, es)
        wn = (_dot3(e2, p_ss) * inv_len, _dot3(e2, p_sy) * inv_len)
        return FrameData(p, xs, xy, n, I, II, wn)

    def frame(self, q: SurfaceCoord) -> FrameData:
        """Frame at a single surface coordinate."""
        f = self.frame_arrays(np.atleast_1d(float(q.s)), np.atleast_1d(float(q.y)))
        squeeze = lambda t: tuple(np.asarray(c)[0] for c in t)  # noqa: E731
        return FrameData(squeeze(f.p), squeeze(f.xs), squeeze(f.xy), squeeze(f.n),
                         squeeze(f.I), squeeze(f.II), squeeze(f.wn_coeffs))


def build_surface(definition: TrackDefinition) -> ParametricSurface:
    """Validate a track definition and realize its surface."""
    return ParametricSurface(definition)


def frame(surface: ParametricSurface, q: SurfaceCoord) -> FrameData:
    return surface.frame(q)


def _body_axes(f: FrameData, theta_s):
    """Unit body tangent axes at relative yaw theta_s."""
    inv_len = 1.0 / ad.sqrt(f.I[0])
    es = tuple(c * inv_len for c in f.xs)
    e2 = _cross3(f.n, es)
    ct, st = ad.cos(theta_s), ad.sin(theta_s)
    b1 = tuple(ct * a + st * b for a, b in zip(es, e2))
    b2 = tuple(-st * a + ct * b for a, b in zip(es, e2))
    return b1, b2


def pose_kinematics(f: FrameData, theta_s, v1, v2, omega3, det_eps=1e-12):
    """Surface-coordinate velocities of a tangent-contact body.

    Solves I (s', y')^T = (xs . v_t, xy . v_t) for the parameter rates and
    converts the yaw rate about the normal into the relative-yaw rate.
    """
    det = f.metric_det()
    if np.any(value(det) <= det_eps):
        raise TrackError("degenerate metric: det I <= 0")
    b1, b2 = _body_axes(f, theta_s)
    vt = tuple(v1 * a + v2 * b for a, b in zip(b1, b2))
    r1 = _dot3(f.xs, vt)
    r2 = _dot3(f.xy, vt)
    iss, isy, iyy = f.I
    s_dot = (iyy * r1 - isy * r2) / det
    y_dot = (iss * r2 - isy * r1) / det
    ths_dot = omega3 - (f.wn_coeffs[0] * s_dot + f.wn_coeffs[1] * y_dot)
    return s_dot, y_dot, ths_dot


def net_normal_force(f: FrameData, u_dot, mass, gravity=GRAVITY):
    """Normal force keeping a point mass in tangent contact.

    N = m * (II(u', u') - g . n); negative values mean the surface would
    have to pull on the vehicle.
    """
    s_dot, y_dot = u_dot
    ii_ss, ii_sy, ii_yy = f.II
    quad = ii_ss * s_dot * s_dot + 2.0 * ii_sy * s_dot * y_dot + ii_yy * y_dot * y_dot
    g_n = gravity[0] * f.n[0] + gravity[1] * f.n[1] + gravity[2] * f.n[2]
    return mass * (quad - g_n)


def tangent_angular_velocity(f: FrameData, u_dot, theta_s=0.0, det_eps=1e-12):
    """Kinematically forced roll/pitch rates of a tangent-constrained body.

    Uses the Weingarten map: dn/dt = -(xs, xy) . (I^-1 II) u', then
    omega_t = n x dn/dt expressed in body axes.
    """
    det = f.metric_det()
    if np.any(value(det) <= det_eps):
        raise TrackError("degenerate metric: det I <= 0")
    s_dot, y_dot = u_dot
    iss, isy, iyy = f.I
    ii_ss, ii_sy, ii_yy = f.II
    # S = I^-1 II (shape operator), columns act on (s', y')
    s11 = (iyy * ii_ss - isy * ii_sy) / det
    s12 = (iyy * ii_sy - isy * ii_yy) / det
    s21 = (iss * ii_sy - isy * ii_ss) / det
    s22 = (iss * ii_yy - isy * ii_sy) / det
    a = s11 * s_dot + s12 * y_dot
    b = s21 * s_dot + s22 * y_dot
    n_dot = tuple(-(a * xs_c + b * xy_c) for xs_c, xy_c in zip(f.xs, f.xy))
    omega = _cross3(f.n, n_dot)
    b1, b2 = _body_axes(f, theta_s)
    return _dot3(omega, b1), _dot3(omega, b2)


def world_position_path(surface: ParametricSurface, coords) -> np.ndarray:
    """Map (s, y) samples to world positions, shape (N, 3)."""
    coords = np.asarray(coords, dtype=float)
    f = surface.frame_arrays(coords[:, 0], coords[:, 1])
    return f.position()


def surface_mesh(surface: ParametricSurface, resolution: float = 2.0) -> dict:
    """Triangle mesh of the road for export: vertices, faces and the
    (s, y) parameters of each vertex."""
    if resolution <= 0:
        raise TrackError("resolution must be positive")
    s_vals = np.linspace(0.0, surface.total_length,
                         max(int(np.ceil(surface.total_length / resolution)) + 1, 2))
    # keep joints in the grid so C1-only creases land on mesh edges
    s_vals = np.unique(np.concatenate([s_vals, surface.joints]))
    y_lo, y_hi = surface.y_bounds
    ny = max(int(np.ceil((y_hi - y_lo) / resolution)) + 1, 2)
    y_vals = np.linspace(y_lo, y_hi, ny)
    ss, yy = np.meshgrid(s_vals, y_vals, indexing="ij")
    pos = world_position_path(surface, np.column_stack([ss.ravel(), yy.ravel()]))
    nv = len(y_vals)
    faces = []
    for i in range(len(s_vals) - 1):
        for j in range(nv - 1):
            a = i * nv + j
            faces.append([a, a + nv, a + 1])
            faces.append([a + 1, a + nv, a + nv + 1])
    return {
        "vertices": pos.tolist(),
        "faces": faces,
        "sy": np.column_stack([ss.ravel(), yy.ravel()]).tolist(),
    }
