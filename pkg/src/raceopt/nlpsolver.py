"""Sparse nonlinear programming with general constraints.

Problems are stated as

    minimize    f(z)
    subject to  cl <= g(z) <= cu,   lb <= z <= ub

with callables returning exact gradients and sparse constraint Jacobians.
The default ``"auto"`` backend runs the augmented-Lagrangian method and,
when it stalls near a feasible point, certifies with a short warm-started
interior-point pass.  The
``"interior"`` backend wraps scipy's ``trust-constr`` interior-point method,
which exploits the exact sparse Jacobian and certifies stationarity even
on problems with little curvature along the feasible set.  A self-contained
augmented-Lagrangian backend (slack variables plus bound-constrained
L-BFGS-B inner solves) is registered as ``"auglag"``; further backends can
be added to :data:`SOLVER_BACKENDS`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import linalg as sparse_linalg


class SolverError(Exception):
    """Raised for malformed problems or unknown backends."""


@dataclass
class NlpProblem:
    """Smooth NLP with exact first-order information.

    ``objective(z) -> (f, grad)``; ``constraints(z) -> (g, jac)`` with a
    scipy sparse ``jac`` of shape ``(m, n)``, or ``None`` when the problem
    has only bound constraints.
    """

    n: int
    objective: Callable
    lb: np.ndarray
    ub: np.ndarray
    x0: np.ndarray
    constraints: Optional[Callable] = None
    cl: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam0: Optional[np.ndarray] = None  # warm-start constraint multipliers

    def validate(self) -> None:
        lb, ub = np.asarray(self.lb), np.asarray(self.ub)
        if lb.shape != (self.n,) or ub.shape != (self.n,) or self.x0.shape != (self.n,):
            raise SolverError("bounds and start point must have length n")
        if np.any(lb > ub):
            raise SolverError("lb > ub")
        if (self.constraints is None) != (len(self.cl) == 0):
            raise SolverError("constraint bounds must match the constraint callable")
        if np.any(np.asarray(self.cl) > np.asarray(self.cu)):
            raise SolverError("cl > cu")


@dataclass
class SolverOptions:
    backend: str = "auto"
    max_outer: int = 60
    inner_max_iter: int = 3000
    tol: float = 1e-8
    feas_tol: float = 1e-8
    inner_ftol: float = 1e-16  # near-disabled so the gradient test governs
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8
    verbose: bool = False


@dataclass
class NlpSolution:
    z: np.ndarray
    f: float
    status: str  # optimal | max_iter | infeasible | numerical_error
    kkt: float
    violation: float
    multipliers: np.ndarray
    n_outer: int
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def kkt_residual(problem: NlpProblem, z: np.ndarray, lam: np.ndarray) -> float:
    """Max of stationarity, feasibility and complementarity residuals.

    Bound multipliers are eliminated at their stationarity-optimal values
    ``zeta_lb = max(gl, 0)``, ``zeta_ub = max(-gl, 0)`` with
    ``gl = grad f + J^T lam``, which zeroes the bound-stationarity rows and
    moves their error into the complementarity products
    ``zeta * min(1, distance to bound)``.  This stays accurate for interior
    iterates that approach an active bound without landing on it exactly.
    """
    _, grad = problem.objective(z)
    gl = np.asarray(grad, dtype=float).copy()
    feas = 0.0
    comp = 0.0
    if problem.constraints is not None:
        g, jac = problem.constraints(z)
        gl = gl + jac.T @ lam
        cl = np.asarray(problem.cl, dtype=float)
        cu = np.asarray(problem.cu, dtype=float)
        feas = float(np.maximum(np.maximum(cl - g, g - cu), 0.0).max(initial=0.0))
        # complementarity applies to inequality rows only; equality rows are
        # covered by the feasibility term
        ineq = cu > cl
        gap = np.minimum(g[ineq] - cl[ineq], cu[ineq] - g[ineq])
        comp = float(np.abs(lam[ineq] * np.clip(gap, 0.0, 1.0)).max(initial=0.0))
    d_lo = np.minimum(z - problem.lb, 1.0)
    d_hi = np.minimum(problem.ub - z, 1.0)
    stat = float(np.maximum(np.maximum(gl, 0.0) * d_lo,
                            np.maximum(-gl, 0.0) * d_hi).max(initial=0.0))
    return max(stat, feas, comp)


def least_squares_multipliers(problem: NlpProblem, z: np.ndarray) -> np.ndarray:
    """Recover multipliers minimizing the stationarity residual at ``z``.

    First-order updates ``lam += rho * r`` amplify constraint-residual noise
    by ``rho``, which makes the KKT residual uncertifiable at large
    penalties even when the iterate itself has converged.  This solves the
    least-squares problem ``min ||grad f + J^T lam||`` over the rows active
    at ``z`` (inactive inequality rows get ``lam = 0`` for complementarity),
    restricted to coordinates away from their variable bounds (bound
    multipliers absorb the rest).  Sign-infeasible multipliers on one-sided
    active rows are zeroed, so a wrong active-set guess degrades the
    residual rather than falsely certifying optimality.
    """
    _, grad = problem.objective(z)
    g, jac = problem.constraints(z)
    cl = np.asarray(problem.cl, dtype=float)
    cu = np.asarray(problem.cu, dtype=float)
    lam = np.zeros(cl.size)
    delta = 1e-6 * (1.0 + np.abs(g))
    lo_active = g - cl <= delta
    hi_active = cu - g <= delta
    active = lo_active | hi_active
    if not np.any(active):
        return lam
    free = (z - problem.lb > 1e-8) & (problem.ub - z > 1e-8)
    A = sparse.csr_matrix(jac)[active][:, free].T
    rhs = -np.asarray(grad, dtype=float)[free]
    lam_active = sparse_linalg.lsqr(A, rhs, atol=1e-14, btol=1e-14)[0]
    lam[active] = lam_active
    # sign conditions: lower-active rows need lam <= 0, upper-active >= 0,
    # equality rows are unrestricted
    ineq = cu > cl
    lam[ineq & lo_active & ~hi_active & (lam > 0.0)] = 0.0
    lam[ineq & hi_active & ~lo_active & (lam < 0.0)] = 0.0
    return lam


def _bb_polish(fun, w, lb, ub, iters=80):
    """Projected Barzilai-Borwein descent keeping the best projected-gradient
    iterate.  Line-search-free, so it refines past the function-value noise
    floor where quasi-Newton with a Wolfe search stalls."""
    _, g = fun(w)

    def pg_norm(wv, gv):
        return float(np.abs(np.clip(wv - gv, lb, ub) - wv).max(initial=0.0))

    best_w, best_pg = w.copy(), pg_norm(w, g)
    alpha = 1e-4
    for _ in range(iters):
        w_new = np.clip(w - alpha * g, lb, ub)
        step = w_new - w
        if not np.all(np.isfinite(w_new)) or np.abs(step).max(initial=0.0) == 0.0:
            break
        _, g_new = fun(w_new)
        dg = g_new - g
        denom = step @ dg
        alpha = (step @ step) / denom if denom > 0 else 1e-4
        alpha = float(np.clip(alpha, 1e-12, 1e4))
        w, g = w_new, g_new
        pg = pg_norm(w, g)
        if pg < best_pg:
            best_pg, best_w = pg, w.copy()
    return best_w


def _solve_bound_only(problem: NlpProblem, opts: SolverOptions) -> NlpSolution:
    res = optimize.minimize(
        problem.objective, problem.x0, jac=True, method="L-BFGS-B",
        bounds=list(zip(problem.lb, problem.ub)),
        options={"maxiter": opts.inner_max_iter, "ftol": opts.inner_ftol,
                 "gtol": 0.1 * opts.tol},
    )
    z = _bb_polish(problem.objective, res.x, problem.lb, problem.ub)
    if not np.all(np.isfinite(z)):
        return NlpSolution(z, np.nan, "numerical_error", np.inf, 0.0, np.zeros(0), 1,
                           "non-finite iterate")
    lam = np.zeros(0)
    kkt = kkt_residual(problem, z, lam)
    status = "optimal" if kkt <= opts.tol else "max_iter"
    f_final = problem.objective(z)[0]
    return NlpSolution(z, float(f_final), status, kkt, 0.0, lam, 1, res.message)


def _solve_auglag(problem: NlpProblem, opts: SolverOptions) -> NlpSolution:
    if problem.constraints is None:
        return _solve_bound_only(problem, opts)

    cl = np.asarray(problem.cl, dtype=float)
    cu = np.asarray(problem.cu, dtype=float)
    m = cl.size
    z = np.clip(problem.x0, problem.lb, problem.ub)
    g0, _ = problem.constraints(z)
    sl = np.clip(g0, cl, cu)
    lam = np.zeros(m) if problem.lam0 is None else np.asarray(problem.lam0, float).copy()
    rho = opts.penalty_init
    bounds = list(zip(problem.lb, problem.ub)) + list(zip(cl, cu))

    def merit(w):
        zz, ss = w[: problem.n], w[problem.n:]
        f, gf = problem.objective(zz)
        g, jac = problem.constraints(zz)
        r = g - ss
        y = lam + rho * r
        val = f + lam @ r + 0.5 * rho * (r @ r)
        grad = np.concatenate([np.asarray(gf) + jac.T @ y, -y])
        return val, grad

    lb_w = np.concatenate([problem.lb, cl])
    ub_w = np.concatenate([problem.ub, cu])
    prev_viol = np.inf
    best_kkt_feas = np.inf
    stagnant = 0
    status, message = "max_iter", ""
    viol = np.inf
    best = None  # (kkt, z, lam, viol, outer)
    # inner-tolerance continuation: early outer iterations only need a
    # rough minimizer of the merit function, so their L-BFGS-B target
    # tightens with the measured KKT residual instead of burning the full
    # inner budget on an out-of-date multiplier estimate
    gtol_inner = 1e-2
    for outer in range(1, opts.max_outer + 1):
        # early outers work with rough multiplier estimates, so an exact
        # inner minimization there is wasted effort; the budget grows as
        # the multipliers settle
        res = optimize.minimize(
            merit, np.concatenate([z, sl]), jac=True, method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": min(opts.inner_max_iter, 300 * outer),
                     "ftol": opts.inner_ftol, "maxcor": 30,
                     "gtol": max(gtol_inner, 0.1 * opts.tol)},
        )
        if not np.all(np.isfinite(res.x)) or not np.isfinite(res.fun):
            status, message = "numerical_error", "non-finite iterate"
            break
        w = _bb_polish(merit, res.x, lb_w, ub_w)
        z, sl = w[: problem.n], w[problem.n:]
        g, _ = problem.constraints(z)
        r = g - sl
        viol = float(np.abs(r).max(initial=0.0))
        lam = lam + rho * r
        kkt = kkt_residual(problem, z, lam)
        f_cur = float(problem.objective(z)[0])
        if viol <= opts.feas_tol and kkt > opts.tol:
            # the first-order update scales residual noise by rho; recovered
            # least-squares multipliers certify converged iterates instead
            lam_ls = least_squares_multipliers(problem, z)
            kkt_ls = kkt_residual(problem, z, lam_ls)
            if kkt_ls < kkt:
                kkt = kkt_ls
                lam = lam_ls
        if opts.verbose:
            print(f"  outer {outer:3d}  rho {rho:8.1e}  f {f_cur:13.6e}  "
                  f"viol {viol:9.2e}  kkt {kkt:9.2e}")
        if best is None or (viol <= opts.feas_tol and kkt < best[0]) or \
                (best[3] > opts.feas_tol and viol < best[3]):
            best = (kkt, z.copy(), lam.copy(), viol, outer)
        if kkt <= opts.tol and viol <= opts.feas_tol:
            status, message = "optimal", f"converged in {outer} outer iterations"
            return NlpSolution(z, f_cur, status, kkt, viol, lam, outer, message)
        # once feasible, a stationarity residual that stops halving means the
        # penalty conditioning is throttling the inner solver; stop and let
        # the caller hand the warm point to a second-order method
        if viol <= opts.feas_tol and kkt > opts.tol:
            if kkt > 0.5 * best_kkt_feas:
                stagnant += 1
                if stagnant >= 4:
                    status, message = "max_iter", "feasible with stalled stationarity"
                    break
            else:
                stagnant = 0
            best_kkt_feas = min(best_kkt_feas, kkt)
        else:
            stagnant = 0
        gtol_inner = min(0.3 * gtol_inner, 0.1 * kkt)
        if viol > opts.feas_tol and viol > prev_viol / 4.0:
            if rho >= opts.penalty_max and viol > max(opts.feas_tol, 1e3 * opts.tol):
                status, message = "infeasible", "penalty at cap with stagnant violation"
                break
            rho = min(rho * opts.penalty_growth, opts.penalty_max)
        elif viol <= 0.1 * opts.feas_tol and rho > 1e4:
            # feasibility has margin: relax the penalty to restore inner
            # conditioning (at large rho the line search fails before the
            # stationarity target is reached)
            rho /= opts.penalty_growth
        prev_viol = min(prev_viol, viol)

    if best is not None and status != "numerical_error":
        kkt, z, lam, viol, n_outer = best
    else:
        kkt = kkt_residual(problem, z, lam)
        n_outer = min(outer, opts.max_outer)
    f_final = problem.objective(z)[0]
    return NlpSolution(z, float(f_final), status, kkt, viol, lam, n_outer, message)


def _restore_feasibility(problem: NlpProblem, cl, cu, z, opts: SolverOptions):
    """Polish feasibility by minimizing the squared constraint violation.

    A bound-constrained quasi-Newton descent on ``0.5 * ||c(z)||^2`` from a
    near-feasible point converges into the nearby feasible set while moving
    the point (and hence the objective) only by the order of the violation.
    """
    def infeas(zz):
        g, J = problem.constraints(zz)
        c = g - np.clip(g, cl, cu)
        return 0.5 * float(c @ c), J.T @ c

    bounds = optimize.Bounds(problem.lb, problem.ub)
    viol = np.inf
    for _ in range(6):
        r = optimize.minimize(infeas, z, jac=True, method="L-BFGS-B",
                              bounds=bounds,
                              options={"maxiter": 500, "maxcor": 30,
                                       "ftol": 0.0, "gtol": 1e-16})
        z = np.asarray(r.x, dtype=float)
        g, _ = problem.constraints(z)
        viol = float(np.maximum(np.maximum(cl - g, g - cu),
                                0.0).max(initial=0.0))
        if viol <= 0.3 * opts.feas_tol or r.nit < 500:
            break
    return z, viol


def _solve_interior(problem: NlpProblem, opts: SolverOptions) -> NlpSolution:
    if problem.constraints is None:
        return _solve_bound_only(problem, opts)

    cl = np.asarray(problem.cl, dtype=float)
    cu = np.asarray(problem.cu, dtype=float)
    # trial steps may leave the variable box, where callbacks can be
    # undefined (e.g. surface parametrization domains); evaluating at the
    # box projection keeps them valid, and the trust region rejects any
    # step the projected model mispredicts
    box = lambda z: np.clip(z, problem.lb, problem.ub)
    nlc = optimize.NonlinearConstraint(
        lambda z: problem.constraints(box(z))[0], cl, cu,
        jac=lambda z: problem.constraints(box(z))[1],
    )
    # the stationarity target is not loosened past 1e-5 even for loose tol:
    # the multipliers taken from the barrier run certify the polished point,
    # and their quality follows the stationarity reached here
    gtol = min(max(0.1 * opts.tol, 1e-12), 1e-5)
    scipy_opts = {"gtol": gtol, "xtol": 1e-14,
                  "maxiter": opts.inner_max_iter,
                  "verbose": 2 if opts.verbose else 0}
    # the built-in stop test also demands constraint violation below gtol,
    # which the barrier method grinds down very slowly; stationarity and the
    # objective converge far earlier, and the cheap feasibility polish below
    # finishes the violation, so stop as soon as stationarity is reached at a
    # small barrier parameter
    stop_viol = max(100.0 * opts.feas_tol, 1e-4)
    stop_mu = max(0.01 * gtol, 1e-9)

    def _early_stop(xk, state):
        return bool(state.optimality < gtol
                    and state.barrier_parameter < stop_mu
                    and state.constr_violation < stop_viol)
    # a warm, near-feasible start does not need the default wide barrier
    # (0.1); starting the continuation lower saves a large fraction of the
    # barrier-reduction iterations without hurting robustness
    g0, _ = problem.constraints(np.clip(problem.x0, problem.lb, problem.ub))
    viol0 = float(np.maximum(np.maximum(cl - g0, g0 - cu), 0.0).max(initial=0.0))
    if viol0 <= max(100.0 * opts.feas_tol, 1e-3):
        scipy_opts["initial_barrier_parameter"] = 1e-4
    # the barrier method exits on the Lagrangian gradient test, which can
    # leave inequality and bound complementarity at the size of the final
    # barrier parameter; restarting with a tiny barrier tightens active gaps
    n_rounds = 6
    x = np.clip(problem.x0, problem.lb, problem.ub)
    best = None  # (score, z, lam, f, kkt, viol, message)
    n_outer = 0
    prev_score = np.inf
    for _ in range(n_rounds):
        with warnings.catch_warnings():
            # linear constraint rows make the quasi-Newton constraint-Hessian
            # update degenerate (delta_grad == 0); the zero update is correct
            warnings.filterwarnings("ignore", message="delta_grad == 0.0")
            res = optimize.minimize(
                lambda z: problem.objective(box(z)), x, jac=True,
                method="trust-constr",
                bounds=optimize.Bounds(problem.lb, problem.ub),
                constraints=[nlc], options=scipy_opts, callback=_early_stop,
            )
        n_outer += 1
        x = box(np.asarray(res.x, dtype=float))
        lam = np.asarray(res.v[0], dtype=float)
        if not (np.all(np.isfinite(x)) and np.isfinite(res.fun)):
            return NlpSolution(x, np.nan, "numerical_error", np.inf, np.inf,
                               lam, n_outer, "non-finite iterate")
        viol = float(res.constr_violation)
        if viol > opts.feas_tol:
            x, viol = _restore_feasibility(problem, cl, cu, x, opts)
        kkt = kkt_residual(problem, x, lam)
        f = float(problem.objective(x)[0])
        score = max(kkt, viol / max(opts.feas_tol, 1e-300))
        if best is None or score < best[0]:
            best = (score, x.copy(), lam.copy(), f, kkt, viol,
                    str(res.message))
        if kkt <= opts.tol and viol <= opts.feas_tol:
            break
        if score >= 0.5 * prev_score:  # restarts have stopped helping
            break
        prev_score = score
        # restart rounds: tiny gtol so the barrier continuation actually runs
        # instead of exiting on the already-small Lagrangian gradient, and a
        # modest iteration cap since they start from a near-solution
        mu = float(np.clip(0.01 * kkt, 1e-16, 1e-6))
        scipy_opts = dict(scipy_opts, gtol=1e-14, xtol=1e-16,
                          maxiter=min(opts.inner_max_iter, 200),
                          initial_barrier_parameter=mu,
                          initial_barrier_tolerance=1e-14,
                          barrier_tol=1e-16)
    _, z, lam, f, kkt, viol, message = best
    if kkt <= opts.tol and viol <= opts.feas_tol:
        status = "optimal"
    elif res.status in (1, 2) and viol > opts.feas_tol:
        status = "infeasible"
    else:
        status = "max_iter"
    return NlpSolution(z, f, status, kkt, viol, lam, n_outer, message)


def _better(a: NlpSolution, b: NlpSolution, opts: SolverOptions) -> bool:
    """Order candidates: finite, then feasible, then objective, then KKT."""
    fin_a = bool(np.all(np.isfinite(a.z)) and np.isfinite(a.f))
    fin_b = bool(np.all(np.isfinite(b.z)) and np.isfinite(b.f))
    if fin_a != fin_b:
        return fin_a
    if not fin_a:
        return False
    feas_a = a.violation <= opts.feas_tol
    feas_b = b.violation <= opts.feas_tol
    if feas_a != feas_b:
        return feas_a
    if feas_a:
        return (a.f, a.kkt) < (b.f, b.kkt)
    return (a.violation, a.f) < (b.violation, b.f)


def _solve_auto(problem: NlpProblem, opts: SolverOptions) -> NlpSolution:
    """Augmented-Lagrangian solve finished by a warm interior-point pass.

    The augmented-Lagrangian backend makes fast global progress on the
    discretized optimal-control problems this library produces (where the
    interior-point method diverges from cold starts), but large penalties
    eventually break its line search while a descent direction remains.
    From the near-feasible point it leaves, the interior-point method
    converges reliably.  Problems known to suit the interior-point method
    from cold starts (near-linear active sets) should request
    ``backend="interior"`` directly.
    """
    if problem.constraints is None:
        return _solve_bound_only(problem, opts)
    polish_opts = replace(opts, inner_max_iter=max(opts.inner_max_iter, 2000))
    # near-feasible start points (warm starts from a previous solution) go
    # straight to the interior-point method, which converges reliably from
    # them; a cold penalty phase would first drift away from feasibility
    g0, _ = problem.constraints(np.clip(problem.x0, problem.lb, problem.ub))
    viol0 = float(np.maximum(np.maximum(problem.cl - g0, g0 - problem.cu),
                             0.0).max(initial=0.0))
    if viol0 <= max(100.0 * opts.feas_tol, 1e-3):
        cand = _solve_interior(problem, polish_opts)
        if cand.ok:
            return cand
    # the penalty phase only needs to deliver a near-feasible warm point;
    # past a dozen outer iterations its objective progress per second is
    # far below what the warm interior-point pass achieves
    best = _solve_auglag(problem, replace(opts, max_outer=min(opts.max_outer, 12)))
    if best.ok or not np.all(np.isfinite(best.z)):
        return best
    # the penalty method stalls with a genuine descent direction left when
    # large penalties break its line search; the interior-point method
    # finishes the job reliably from the near-feasible warm point it leaves
    cand = _solve_interior(replace(problem, x0=best.z), polish_opts)
    return cand if _better(cand, best, opts) else best


SOLVER_BACKENDS = {
    "auto": _solve_auto,
    "interior": _solve_interior,
    "auglag": _solve_auglag,
}


def solve(problem: NlpProblem, options: Optional[SolverOptions] = None) -> NlpSolution:
    """Solve an :class:`NlpProblem` with the selected backend."""
    opts = options or SolverOptions()
    problem.validate()
    if opts.backend not in SOLVER_BACKENDS:
        raise SolverError(f"unknown solver backend {opts.backend!r}")
    return SOLVER_BACKENDS[opts.backend](problem, opts)


def backend_seam(problem: NlpProblem, options: Optional[SolverOptions],
                 external: Callable) -> NlpSolution:
    """Run an external solver honoring the :class:`NlpSolution` contract."""
    problem.validate()
    return external(problem, options or SolverOptions())


def dense_jacobian(jac) -> np.ndarray:
    return jac.toarray() if sparse.issparse(jac) else np.asarray(jac)
