"""Direct collocation on a spatial grid.

Dynamics are transcribed with Radau collocation (points in (0, 1] with the
right endpoint included) over a near-uniform grid in track progress s.
Interval boundaries are augmented so that every surface joint (segment or
banking breakpoint) coincides with a boundary, keeping each interval's
dynamics smooth.  Time is carried as a state with dt/ds = 1/s_dot, so
minimum time is simply the final value of one variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre
from scipy import sparse

from . import ad
from .ad import value
from .nlpsolver import NlpProblem


def radau_points(d: int) -> np.ndarray:
    """Radau collocation points τ_1..τ_d on (0, 1] with τ_d = 1.

    Roots of P_{d-1}(x) + P_d(x) mapped by τ = (1 - x)/2.
    """
    if d not in (1, 2, 3, 4):
        raise ValueError(f"unsupported collocation degree {d}")
    if d == 1:
        return np.array([1.0])
    coeff = np.zeros(d + 1)
    coeff[d - 1] = 1.0
    coeff[d] = 1.0
    x = legendre.legroots(coeff)
    tau = np.sort((1.0 - x) / 2.0)
    tau[-1] = 1.0  # the exact root at x = -1
    return tau


def differentiation_matrix(nodes) -> np.ndarray:
    """D[j, k] = dL_j/dθ at τ_k for the Lagrange basis on ``nodes``.

    ``nodes`` must be distinct and include the base point 0; the derivative
    is evaluated at the collocation points nodes[1:].
    """
    t = np.asarray(nodes, dtype=float)
    n = t.size
    diff = t[:, None] - t[None, :]
    if np.any(np.abs(diff + np.eye(n)) < 1e-12 * (1 + np.eye(n))):
        raise ValueError("duplicate nodes")
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / diff.prod(axis=1)  # barycentric weights
    full = np.zeros((n, n))
    for k in range(n):
        for j in range(n):
            if j != k:
                full[k, j] = (w[j] / w[k]) / (t[k] - t[j])
        full[k, k] = -full[k].sum()
    return full[1:, :].T  # (n, n-1): basis j, evaluation point k


def _quadrature_weights(tau: np.ndarray) -> np.ndarray:
    """Weights integrating the Lagrange basis on ``tau`` over [0, 1]."""
    d = tau.size
    vander = np.vander(tau, increasing=True).T
    return np.linalg.solve(vander, 1.0 / np.arange(1, d + 1))


@dataclass
class CollocationScheme:
    degree: int
    points: np.ndarray = field(init=False)
    D: np.ndarray = field(init=False)
    w_quad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.points = radau_points(self.degree)
        self.D = differentiation_matrix(np.concatenate([[0.0], self.points]))
        self.w_quad = _quadrature_weights(self.points)


@dataclass
class GridSpec:
    """Near-uniform spatial grid with joint-aligned interval boundaries."""

    s_start: float
    s_end: float
    n_intervals: int
    degree: int = 3
    joints: tuple = ()

    def validate(self) -> None:
        if self.n_intervals < 2:
            raise ValueError("need at least 2 intervals")
        if self.degree not in (2, 3, 4):
            raise ValueError("degree must be 2, 3 or 4")
        if not self.s_end > self.s_start:
            raise ValueError("s_end must exceed s_start")

    def boundaries(self) -> np.ndarray:
        """Uniform boundaries plus every joint strictly inside the span."""
        self.validate()
        base = np.linspace(self.s_start, self.s_end, self.n_intervals + 1)
        tol = 1e-9 * (self.s_end - self.s_start)
        inner = [j for j in self.joints if self.s_start + tol < j < self.s_end - tol]
        merged = np.sort(np.concatenate([base, np.asarray(inner, dtype=float)]))
        keep = np.concatenate([[True], np.diff(merged) > tol])
        return merged[keep]


def lagrange_basis(nodes: np.ndarray, theta: float) -> np.ndarray:
    """Values of the Lagrange basis on ``nodes`` at ``theta``."""
    n = nodes.size
    out = np.ones(n)
    for j in range(n):
        for i in range(n):
            if i != j:
                out[j] *= (theta - nodes[i]) / (nodes[j] - nodes[i])
    return out


@dataclass
class Trajectory:
    """Piecewise-polynomial collocation solution.

    State within interval k is the degree-d Lagrange interpolant through
    the boundary state (θ = 0) and the d collocation states; inputs
    interpolate over the collocation points only.
    """

    s_grid: np.ndarray            # interval boundaries, shape (K+1,)
    tau: np.ndarray               # collocation points in (0, 1]
    state_names: tuple
    input_names: tuple
    boundary_states: np.ndarray   # (K+1, n_x)
    col_states: np.ndarray        # (K, d, n_x)
    col_inputs: np.ndarray        # (K, d, n_u)
    model_tag: str = ""

    @property
    def n_intervals(self) -> int:
        return self.s_grid.size - 1

    @property
    def time_index(self) -> int:
        return self.state_names.index("t") if "t" in self.state_names \
            else len(self.state_names) - 1

    @property
    def final_time(self) -> float:
        return float(self.boundary_states[-1, self.time_index])

    def interp_state(self, k: int, theta: float) -> np.ndarray:
        if not 0.0 <= theta <= 1.0:
            raise ValueError("theta outside [0, 1]")
        nodes = np.concatenate([[0.0], self.tau])
        vals = np.concatenate([self.boundary_states[k][None, :], self.col_states[k]])
        return lagrange_basis(nodes, theta) @ vals

    def interp_input(self, k: int, theta: float) -> np.ndarray:
        if not 0.0 <= theta <= 1.0:
            raise ValueError("theta outside [0, 1]")
        return lagrange_basis(self.tau, theta) @ self.col_inputs[k]

    def state_at_s(self, s: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.s_grid, s) - 1, 0, self.n_intervals - 1))
        h = self.s_grid[k + 1] - self.s_grid[k]
        return self.interp_state(k, float(np.clip((s - self.s_grid[k]) / h, 0.0, 1.0)))

    def time_at(self, k: int, j: int) -> float:
        return float(self.col_states[k, j, self.time_index])

    def node_states(self) -> np.ndarray:
        return self.col_states.reshape(-1, len(self.state_names))

    def node_s(self) -> np.ndarray:
        h = np.diff(self.s_grid)
        return (self.s_grid[:-1, None] + h[:, None] * self.tau[None, :]).ravel()

    def to_dict(self) -> dict:
        return {
            "s_grid": self.s_grid.tolist(),
            "tau": self.tau.tolist(),
            "state_names": list(self.state_names),
            "input_names": list(self.input_names),
            "boundary_states": self.boundary_states.tolist(),
            "col_states": self.col_states.tolist(),
            "col_inputs": self.col_inputs.tolist(),
            "model_tag": self.model_tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            s_grid=np.asarray(d["s_grid"], dtype=float),
            tau=np.asarray(d["tau"], dtype=float),
            state_names=tuple(d["state_names"]),
            input_names=tuple(d["input_names"]),
            boundary_states=np.asarray(d["boundary_states"], dtype=float),
            col_states=np.asarray(d["col_states"], dtype=float),
            col_inputs=np.asarray(d["col_inputs"], dtype=float),
            model_tag=d.get("model_tag", ""),
        )


def resample_trajectory(traj: Trajectory, s_grid, tau) -> Trajectory:
    """Re-interpolate a trajectory onto a different collocation grid.

    States use the piecewise interpolant of the source trajectory; inputs
    interpolate over its collocation points (evaluation at θ = 0 is a
    short extrapolation since Radau points exclude the interval start).
    """
    s_grid = np.asarray(s_grid, dtype=float)
    tau = np.asarray(tau, dtype=float)

    def locate(s):
        k = int(np.clip(np.searchsorted(traj.s_grid, s) - 1, 0,
                        traj.n_intervals - 1))
        h = traj.s_grid[k + 1] - traj.s_grid[k]
        return k, float(np.clip((s - traj.s_grid[k]) / h, 0.0, 1.0))

    B = np.stack([traj.interp_state(*locate(s)) for s in s_grid])
    h = np.diff(s_grid)
    node_s = s_grid[:-1, None] + h[:, None] * tau[None, :]
    X = np.stack([[traj.interp_state(*locate(s)) for s in row]
                  for row in node_s])
    U = np.stack([[traj.interp_input(*locate(s)) for s in row]
                  for row in node_s])
    return Trajectory(
        s_grid=s_grid.copy(), tau=tau.copy(),
        state_names=traj.state_names, input_names=traj.input_names,
        boundary_states=B, col_states=X, col_inputs=U,
        model_tag=traj.model_tag)


@dataclass
class BoundaryConditions:
    """State pins at the grid endpoints, by state index."""

    initial: dict
    final: dict = field(default_factory=dict)


@dataclass
class Weights:
    """Objective regularization: input magnitude and input rate."""

    w_u: float = 1e-4
    w_du: float = 1e-3


def _dot_or_zero(v, shape, m):
    if isinstance(v, ad.Dual):
        return np.broadcast_to(v.dot, shape + (m,))
    return np.zeros(shape + (m,))


class TranscribedProblem:
    """Collocation NLP over scaled variables.

    Variable layout: interval boundary states B_0..B_K followed by, per
    interval, the collocation states (d, n_x) and inputs (d, n_u), all
    row-major.  Defect, continuity and per-node path constraints are
    assembled with a fixed block-banded sparsity pattern.
    """

    def __init__(self, model, grid: GridSpec, x_bounds, u_bounds,
                 bc: BoundaryConditions, weights: Optional[Weights] = None,
                 objective_state: Optional[int] = None,
                 extra_node_constraints: Optional[Callable] = None):
        self.model = model
        self.grid = grid
        self.scheme = CollocationScheme(grid.degree)
        self.s_bnd = grid.boundaries()
        self.h = np.diff(self.s_bnd)
        self.K = self.h.size
        self.d = grid.degree
        self.n_x = model.n_states
        self.n_u = model.n_inputs
        self.weights = weights or Weights()
        self.objective_state = objective_state
        self.extra_node_constraints = extra_node_constraints

        self.x_scale = np.asarray(model.state_scales(), dtype=float)
        self.u_scale = np.asarray(model.input_scales(), dtype=float)
        self.n_z = (self.K + 1) * self.n_x + self.K * self.d * (self.n_x + self.n_u)
        self._node_s = (self.s_bnd[:-1, None]
                        + self.h[:, None] * self.scheme.points[None, :])

        self._build_bounds(x_bounds, u_bounds, bc)
        self._build_pattern()

    # -- layout --------------------------------------------------------
    def _b_idx(self, i):
        return np.arange(i * self.n_x, (i + 1) * self.n_x)

    def _x_idx(self, i, k):
        base = (self.K + 1) * self.n_x + i * self.d * (self.n_x + self.n_u) + k * self.n_x
        return np.arange(base, base + self.n_x)

    def _u_idx(self, i, k):
        base = ((self.K + 1) * self.n_x + i * self.d * (self.n_x + self.n_u)
                + self.d * self.n_x + k * self.n_u)
        return np.arange(base, base + self.n_u)

    def unpack(self, z_scaled):
        """Physical boundary states, collocation states and inputs."""
        z = np.asarray(z_scaled, dtype=float)
        nb = (self.K + 1) * self.n_x
        B = z[:nb].reshape(self.K + 1, self.n_x) * self.x_scale
        rest = z[nb:].reshape(self.K, self.d * (self.n_x + self.n_u))
        X = rest[:, : self.d * self.n_x].reshape(self.K, self.d, self.n_x) * self.x_scale
        U = rest[:, self.d * self.n_x:].reshape(self.K, self.d, self.n_u) * self.u_scale
        return B, X, U

    def pack(self, B, X, U) -> np.ndarray:
        z = np.empty(self.n_z)
        nb = (self.K + 1) * self.n_x
        z[:nb] = (B / self.x_scale).ravel()
        rest = z[nb:].reshape(self.K, self.d * (self.n_x + self.n_u))
        rest[:, : self.d * self.n_x] = (X / self.x_scale).reshape(self.K, -1)
        rest[:, self.d * self.n_x:] = (U / self.u_scale).reshape(self.K, -1)
        return z

    def extract(self, z_scaled) -> Trajectory:
        B, X, U = self.unpack(z_scaled)
        return Trajectory(
            s_grid=self.s_bnd.copy(), tau=self.scheme.points.copy(),
            state_names=tuple(self.model.state_names),
            input_names=tuple(self.model.input_names),
            boundary_states=B, col_states=X, col_inputs=U,
            model_tag=getattr(self.model, "name", ""),
        )

    def pack_trajectory(self, traj: Trajectory) -> np.ndarray:
        if traj.n_intervals != self.K or traj.tau.size != self.d:
            raise ValueError("trajectory grid does not match the transcription")
        return self.pack(traj.boundary_states, traj.col_states, traj.col_inputs)

    # -- bounds --------------------------------------------------------
    def _build_bounds(self, x_bounds, u_bounds, bc: BoundaryConditions):
        pinned = getattr(self.model, "pinned_state", None)
        x_lo = np.array([b[0] for b in x_bounds], dtype=float)
        x_hi = np.array([b[1] for b in x_bounds], dtype=float)
        u_lo = np.array([b[0] for b in u_bounds], dtype=float)
        u_hi = np.array([b[1] for b in u_bounds], dtype=float)
        if np.any(x_lo > x_hi) or np.any(u_lo > u_hi):
            raise ValueError("infeasible variable bounds")

        lb = np.empty(self.n_z)
        ub = np.empty(self.n_z)
        for i in range(self.K + 1):
            lb[self._b_idx(i)], ub[self._b_idx(i)] = x_lo, x_hi
        for i in range(self.K):
            for k in range(self.d):
                lb[self._x_idx(i, k)], ub[self._x_idx(i, k)] = x_lo, x_hi
                lb[self._u_idx(i, k)], ub[self._u_idx(i, k)] = u_lo, u_hi

        # pin the independent variable to the grid
        if pinned is not None:
            for i in range(self.K + 1):
                j = self._b_idx(i)[pinned]
                lb[j] = ub[j] = self.s_bnd[i]
            for i in range(self.K):
                for k in range(self.d):
                    j = self._x_idx(i, k)[pinned]
                    lb[j] = ub[j] = self._node_s[i, k]

        for idx, val in bc.initial.items():
            if not x_lo[idx] - 1e-12 <= val <= x_hi[idx] + 1e-12:
                raise ValueError(
                    f"initial value {val} for state {idx} violates its bounds")
            j = self._b_idx(0)[idx]
            lb[j] = ub[j] = val
        for idx, val in bc.final.items():
            if not x_lo[idx] - 1e-12 <= val <= x_hi[idx] + 1e-12:
                raise ValueError(
                    f"final value {val} for state {idx} violates its bounds")
            j = self._b_idx(self.K)[idx]
            lb[j] = ub[j] = val

        scale = np.empty(self.n_z)
        for i in range(self.K + 1):
            scale[self._b_idx(i)] = self.x_scale
        for i in range(self.K):
            for k in range(self.d):
                scale[self._x_idx(i, k)] = self.x_scale
                scale[self._u_idx(i, k)] = self.u_scale
        self.var_scale = scale
        self.lb = lb / scale
        self.ub = ub / scale

    # -- constraint pattern --------------------------------------------
    def _build_pattern(self):
        K, d, n_x, n_u = self.K, self.d, self.n_x, self.n_u
        D = self.scheme.D
        rows_lin, cols_lin, data_lin = [], [], []
        row = 0

        # defect rows: (i, k, state j); linear part is the D-combination,
        # which has unit-free entries after row/column scaling cancels
        self._defect_row0 = row
        for i in range(K):
            bcols = self._b_idx(i)
            xcols = [self._x_idx(i, l) for l in range(d)]
            for k in range(d):
                for j in range(n_x):
                    r = row + k * n_x + j
                    rows_lin.append(r)
                    cols_lin.append(bcols[j])
                    data_lin.append(D[0, k])
                    for l in range(d):
                        rows_lin.append(r)
                        cols_lin.append(xcols[l][j])
                        data_lin.append(D[l + 1, k])
            row += d * n_x
        self._n_defect = row

        # continuity rows: X[i, d-1] == B[i+1]
        self._cont_row0 = row
        for i in range(K):
            xe = self._x_idx(i, d - 1)
            bn = self._b_idx(i + 1)
            for j in range(n_x):
                rows_lin.extend([row, row])
                cols_lin.extend([xe[j], bn[j]])
                data_lin.extend([1.0, -1.0])
                row += 1
        self._n_lin_rows = row

        # nonlinear columns for each node: its state and input variables
        node_cols = np.empty((K, d, n_x + n_u), dtype=int)
        for i in range(K):
            for k in range(d):
                node_cols[i, k, :n_x] = self._x_idx(i, k)
                node_cols[i, k, n_x:] = self._u_idx(i, k)
        self._node_cols = node_cols

        # defect nonlinear entries: rows (i,k,j) x cols (i,k,m)
        m = n_x + n_u
        r = (self._defect_row0
             + (np.arange(K)[:, None, None, None] * d * n_x)
             + (np.arange(d)[None, :, None, None] * n_x)
             + np.arange(n_x)[None, None, :, None]
             + np.zeros((1, 1, 1, m), dtype=int))
        c = np.broadcast_to(node_cols[:, :, None, :], (K, d, n_x, m))
        self._defect_nl_rows = r.ravel()
        self._defect_nl_cols = c.ravel()

        self._lin_part = sparse.coo_matrix(
            (np.asarray(data_lin), (np.asarray(rows_lin), np.asarray(cols_lin))),
            shape=(self._n_lin_rows, self.n_z)).tocsr()

        # constraint bounds for the fixed rows
        self._cl_fixed = np.zeros(self._n_lin_rows)
        self._cu_fixed = np.zeros(self._n_lin_rows)

        # node constraint count discovered on the first evaluation
        self._node_con_meta = None

    def _eval_nodes(self, X, U):
        """Batched AD evaluation of the model at all collocation nodes."""
        n_x, n_u = self.n_x, self.n_u
        cols = ad.seed_columns([X[:, :, j] for j in range(n_x)]
                               + [U[:, :, j] for j in range(n_u)])
        x_cols = tuple(cols[:n_x])
        u_cols = tuple(cols[n_x:])
        f_spatial, extras = self.model.spatial_rhs(x_cols, u_cols)
        node_cons = []
        if hasattr(self.model, "node_constraints"):
            node_cons.extend(self.model.node_constraints(x_cols, u_cols, extras))
        if self.extra_node_constraints is not None:
            node_cons.extend(self.extra_node_constraints(x_cols, u_cols, extras))
        return f_spatial, node_cons

    def constraints(self, z_scaled):
        B, X, U = self.unpack(z_scaled)
        K, d, n_x = self.K, self.d, self.n_x
        m = n_x + self.n_u
        f_spatial, node_cons = self._eval_nodes(X, U)

        # nonlinear defect part: -h_i f_j(i,k), row-scaled; the D-combination
        # and the continuity rows live in the precomputed linear part
        fvals = np.stack([value(fj) for fj in f_spatial], axis=-1)  # (K, d, n_x)
        defect = -self.h[:, None, None] * fvals / self.x_scale
        fdots = np.stack(
            [_dot_or_zero(fj, (K, d), m) for fj in f_spatial], axis=2)  # (K,d,n_x,m)
        defect_data = (-self.h[:, None, None, None] * fdots
                       / self.x_scale[None, None, :, None]
                       * self.var_scale[self._node_cols][:, :, None, :])

        vals = [defect.ravel(), np.zeros(self._n_lin_rows - self._n_defect)]
        rows = [self._defect_nl_rows]
        cols = [self._defect_nl_cols]
        data = [defect_data.ravel()]

        row = self._n_lin_rows
        meta = []
        for cv, lo, hi, cs, name in node_cons:
            v = value(cv)
            v = np.broadcast_to(v, (K, d))
            # cs, lo, hi may be scalars or per-node (K, d) arrays
            cs_a = np.broadcast_to(np.asarray(cs, dtype=float), (K, d))
            dots = _dot_or_zero(cv, (K, d), m)
            vals.append((v / cs_a).ravel())
            r = row + np.arange(K * d)
            rows.append(np.repeat(r, m))
            cols.append(self._node_cols.reshape(K * d, m).ravel())
            data.append((dots / cs_a[:, :, None]
                         * self.var_scale[self._node_cols]).ravel())
            with np.errstate(invalid="ignore"):
                lo_a = np.broadcast_to(np.asarray(lo, dtype=float), (K, d)) / cs_a
                hi_a = np.broadcast_to(np.asarray(hi, dtype=float), (K, d)) / cs_a
            meta.append((name, lo_a.ravel().copy(), hi_a.ravel().copy()))
            row += K * d
        if self._node_con_meta is None:
            self._node_con_meta = meta
            self._n_rows = row

        g = np.concatenate(vals)
        g[: self._n_lin_rows] += self._lin_part @ np.asarray(z_scaled, dtype=float)
        jac = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(row, self.n_z)).tocsr()
        jac = jac + sparse.vstack(
            [self._lin_part,
             sparse.csr_matrix((row - self._n_lin_rows, self.n_z))]).tocsr()
        return g, jac

    def constraint_bounds(self):
        if self._node_con_meta is None:
            z0 = np.clip(np.zeros(self.n_z), self.lb, self.ub)
            self.constraints(z0)
        n_eq = self._n_lin_rows
        cl = [np.zeros(n_eq)]
        cu = [np.zeros(n_eq)]
        for _, lo, hi in self._node_con_meta:
            cl.append(lo)
            cu.append(hi)
        return np.concatenate(cl), np.concatenate(cu)

    def constraint_names(self):
        names = ["defect"] * self._n_defect
        names += ["continuity"] * (self._n_lin_rows - self._n_defect)
        for name, _, _ in self._node_con_meta or []:
            names += [name] * (self.K * self.d)
        return names

    # -- objective -----------------------------------------------------
    def objective(self, z_scaled):
        z = np.asarray(z_scaled, dtype=float)
        f = 0.0
        grad = np.zeros(self.n_z)
        if self.objective_state is not None:
            j = self._b_idx(self.K)[self.objective_state]
            f += z[j] * self.var_scale[j]
            grad[j] += self.var_scale[j]

        w = self.weights
        span = self.s_bnd[-1] - self.s_bnd[0]
        if w.w_u > 0.0:
            for i in range(self.K):
                hw = w.w_u * self.h[i] / span * self.scheme.w_quad
                for k in range(self.d):
                    idx = self._u_idx(i, k)
                    f += hw[k] * float(z[idx] @ z[idx])
                    grad[idx] += 2.0 * hw[k] * z[idx]
        if w.w_du > 0.0:
            prev = None
            for i in range(self.K):
                for k in range(self.d):
                    cur = self._u_idx(i, k)
                    if prev is not None:
                        du = z[cur] - z[prev]
                        f += w.w_du * float(du @ du)
                        grad[cur] += 2.0 * w.w_du * du
                        grad[prev] -= 2.0 * w.w_du * du
                    prev = cur
        return float(f), grad

    def nlp_problem(self, x0: np.ndarray) -> NlpProblem:
        cl, cu = self.constraint_bounds()
        return NlpProblem(
            n=self.n_z, objective=self.objective, constraints=self.constraints,
            lb=self.lb, ub=self.ub, cl=cl, cu=cu,
            x0=np.clip(np.asarray(x0, dtype=float), self.lb, self.ub),
        )


def transcribe(model, grid: GridSpec, x_bounds, u_bounds, bc: BoundaryConditions,
               weights: Optional[Weights] = None,
               objective_state: Optional[int] = None,
               extra_node_constraints: Optional[Callable] = None) -> TranscribedProblem:
    """Build the collocation NLP for a model on a spatial grid."""
    return TranscribedProblem(model, grid, x_bounds, u_bounds, bc, weights,
                              objective_state, extra_node_constraints)
