"""Constrained NLP solver: augmented Lagrangian outer loop with
trust-region Gauss-Newton inner solves.

Problems are expressed as *blocks*: a block evaluates the same small
callback at many slices of the decision vector simultaneously (one row
per instance, one column per local variable).  Cost blocks return
least-squares residuals (the objective is the sum of their squares);
equality blocks target zero; inequality blocks target <= 0.  All
callbacks must be dual-evaluable so the solver gets exact derivatives.

Each outer iteration minimizes the augmented Lagrangian

    sum ||r_cost||^2 + rho/2 ||c_eq + lam/rho||^2
                     + rho/2 ||max(0, c_ineq + mu/rho)||^2

which is itself a bound-constrained nonlinear least-squares problem;
the inner solver is scipy's trust-region reflective method fed with the
exact block-sparse Jacobian.  Variables with equal lower and upper
bounds are eliminated from the inner problem.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import least_squares

from . import autodiff as ad

__all__ = [
    "Block",
    "NlpProblem",
    "NlpSolution",
    "SolverOpts",
    "KktResidual",
    "solve",
    "kkt_residual",
    "warm_start_chain",
    "WarmStartError",
]


@dataclass
class Block:
    """A batched callback over slices of the decision vector.

    ``fun`` receives one entry per local variable (column of ``indices``),
    each a float array of shape (batch,) or a Dual with batched value, and
    returns ``n_out`` outputs of the same batch shape.
    """

    name: str
    fun: Callable
    indices: np.ndarray  # (batch, k) int
    n_out: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        if self.indices.ndim != 2:
            raise ValueError(f"block {self.name}: indices must be 2-D")

    @property
    def batch(self):
        return self.indices.shape[0]

    @property
    def size(self):
        return self.batch * self.n_out


@dataclass
class NlpProblem:
    n_vars: int
    lower: np.ndarray
    upper: np.ndarray
    cost_blocks: list
    eq_blocks: list
    ineq_blocks: list
    layout: Any = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("need lower <= upper elementwise")

    @property
    def n_eq(self):
        return sum(b.size for b in self.eq_blocks)

    @property
    def n_ineq(self):
        return sum(b.size for b in self.ineq_blocks)


@dataclass
class KktResidual:
    stationarity: float
    eq_viol: float
    ineq_viol: float
    comp_slackness: float


@dataclass
class NlpSolution:
    x: np.ndarray
    multipliers_eq: np.ndarray
    multipliers_ineq: np.ndarray
    objective_value: float
    kkt: KktResidual
    iterations: int
    inner_iterations: int
    wall_time: float
    status: str  # converged | max_iter | infeasible


@dataclass
class SolverOpts:
    tol_eq: float = 1e-6
    tol_ineq: float = 1e-6
    tol_stat: float = 1e-4
    max_outer: int = 60
    max_inner: int = 200
    rho0: float = 10.0
    rho_max: float = 1e8
    rho_factor: float = 10.0
    viol_drop_factor: float = 4.0
    inner_gtol: float = 1e-9
    # penalty level anchoring the iterate after a restoration phase
    rho_restore: float = 1e5
    stall_limit: int = 5
    # feasible iterates whose objective stops moving are accepted even if
    # the stationarity measure stays noisy (large ill-conditioned problems)
    obj_stall_rtol: float = 1e-4
    obj_stall_iters: int = 3
    verbose: bool = False

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


# -- block evaluation -------------------------------------------------------


def _outputs_to_arrays(outs, batch):
    cols = []
    for y in outs:
        v = np.asarray(ad.value_of(y), dtype=float)
        cols.append(np.broadcast_to(v, (batch,)))
    return np.column_stack(cols) if cols else np.zeros((batch, 0))


def block_values(block: Block, x):
    vars_ = [x[block.indices[:, j]] for j in range(block.indices.shape[1])]
    outs = block.fun(vars_)
    return _outputs_to_arrays(outs, block.batch)


def block_values_and_jac(block: Block, x):
    """Values (batch, m) and local jacobian (batch, m, k) in one pass."""
    local = x[block.indices]
    duals = ad.seed_batch(local)
    outs = block.fun(duals)
    batch, k = local.shape
    values = _outputs_to_arrays(outs, batch)
    jac = np.zeros((batch, block.n_out, k))
    for i, y in enumerate(outs):
        if isinstance(y, ad.Dual):
            jac[:, i, :] = np.broadcast_to(y.derivs, (batch, k))
    return values, jac


def eval_constraints(blocks, x):
    if not blocks:
        return np.zeros(0)
    return np.concatenate([block_values(b, x).ravel() for b in blocks])


def eval_objective(problem: NlpProblem, x):
    """Sum of squared cost-block residuals."""
    return float(
        sum(np.sum(block_values(b, x) ** 2) for b in problem.cost_blocks)
    )


def objective_gradient(problem: NlpProblem, x):
    grad = np.zeros(problem.n_vars)
    for b in problem.cost_blocks:
        vals, jac = block_values_and_jac(b, x)
        grad += _scatter(jac, 2.0 * vals, b.indices, problem.n_vars)
    return grad


def constraint_jacobian_t_vec(blocks, x, w):
    """J(x)^T w accumulated over blocks; w is a stacked row weighting."""
    grad = np.zeros(x.size)
    offset = 0
    for b in blocks:
        wb = w[offset : offset + b.size].reshape(b.batch, b.n_out)
        _, jac = block_values_and_jac(b, x)
        grad += _scatter(jac, wb, b.indices, x.size)
        offset += b.size
    return grad


def _scatter(jac, w, indices, n):
    out = np.zeros(n)
    np.add.at(out, indices, np.einsum("bmk,bm->bk", jac, w))
    return out


def _block_triplets(block, jac, row_offset, scale=None):
    """COO triplets for a block jacobian placed at row_offset."""
    batch, m, k = jac.shape
    rows = row_offset + (
        np.arange(batch)[:, None, None] * m + np.arange(m)[None, :, None]
    )
    rows = np.broadcast_to(rows, (batch, m, k))
    cols = np.broadcast_to(block.indices[:, None, :], (batch, m, k))
    data = jac if scale is None else jac * scale[:, :, None]
    return rows.ravel(), cols.ravel(), data.ravel()


# -- KKT --------------------------------------------------------------------


def kkt_residual(problem: NlpProblem, x, multipliers_eq, multipliers_ineq):
    """Infinity norms of the standard KKT residual blocks.

    Stationarity is measured as the projected gradient of the Lagrangian
    onto the box constraints.
    """
    x = np.asarray(x, dtype=float)
    grad = objective_gradient(problem, x)
    ceq = eval_constraints(problem.eq_blocks, x)
    cineq = eval_constraints(problem.ineq_blocks, x)
    if len(multipliers_eq):
        grad += constraint_jacobian_t_vec(problem.eq_blocks, x, multipliers_eq)
    if len(multipliers_ineq):
        grad += constraint_jacobian_t_vec(problem.ineq_blocks, x, multipliers_ineq)
    proj = x - np.clip(x - grad, problem.lower, problem.upper)
    return KktResidual(
        stationarity=float(np.max(np.abs(proj), initial=0.0)),
        eq_viol=float(np.max(np.abs(ceq), initial=0.0)),
        ineq_viol=float(np.max(np.clip(cineq, 0.0, None), initial=0.0)),
        comp_slackness=float(
            np.max(np.abs(multipliers_ineq * cineq), initial=0.0)
        ) if len(multipliers_ineq) else 0.0,
    )


# -- augmented Lagrangian ---------------------------------------------------


def _al_value_and_grad(problem, x, lam, mu, rho):
    """Augmented-Lagrangian value and gradient (reference implementation)."""
    f = 0.0
    grad = np.zeros(problem.n_vars)
    for b in problem.cost_blocks:
        vals, jac = block_values_and_jac(b, x)
        f += float(np.sum(vals * vals))
        grad += _scatter(jac, 2.0 * vals, b.indices, problem.n_vars)
    off = 0
    for b in problem.eq_blocks:
        vals, jac = block_values_and_jac(b, x)
        lb = lam[off : off + b.size].reshape(b.batch, b.n_out)
        f += float(np.sum(lb * vals) + 0.5 * rho * np.sum(vals * vals))
        grad += _scatter(jac, lb + rho * vals, b.indices, problem.n_vars)
        off += b.size
    off = 0
    for b in problem.ineq_blocks:
        vals, jac = block_values_and_jac(b, x)
        mb = mu[off : off + b.size].reshape(b.batch, b.n_out)
        active = np.clip(mb + rho * vals, 0.0, None)
        f += float(np.sum(active * active - mb * mb) / (2.0 * rho))
        grad += _scatter(jac, active, b.indices, problem.n_vars)
        off += b.size
    return f, grad


class _AlResiduals:
    """Stacked least-squares form of the AL subproblem on free variables.

    Residuals: [cost residuals; sqrt(rho/2)(c_eq + lam/rho);
    sqrt(rho/2) max(0, c_ineq + mu/rho)].  Fixed variables (equal
    bounds) are substituted and removed from the column space.
    """

    def __init__(self, problem, lam, mu, rho, free, x_template):
        self.problem = problem
        self.lam = lam
        self.mu = mu
        self.rho = rho
        self.free = free
        self.template = x_template
        self.n_res = (
            sum(b.size for b in problem.cost_blocks)
            + problem.n_eq
            + problem.n_ineq
        )
        self._cache_key = None
        self._cache = None

    def full_x(self, z):
        x = self.template.copy()
        x[self.free] = z
        return x

    def _evaluate(self, z):
        key = z.tobytes()
        if self._cache_key == key:
            return self._cache
        x = self.full_x(z)
        p = self.problem
        sq = np.sqrt(self.rho / 2.0)
        res_parts, trip_r, trip_c, trip_d = [], [], [], []
        row = 0
        for b in p.cost_blocks:
            vals, jac = block_values_and_jac(b, x)
            res_parts.append(vals.ravel())
            r, c, d = _block_triplets(b, jac, row)
            trip_r.append(r); trip_c.append(c); trip_d.append(d)
            row += b.size
        off = 0
        for b in p.eq_blocks:
            vals, jac = block_values_and_jac(b, x)
            lb = self.lam[off : off + b.size].reshape(b.batch, b.n_out)
            res_parts.append((sq * (vals + lb / self.rho)).ravel())
            r, c, d = _block_triplets(b, jac * sq, row)
            trip_r.append(r); trip_c.append(c); trip_d.append(d)
            row += b.size
            off += b.size
        off = 0
        for b in p.ineq_blocks:
            vals, jac = block_values_and_jac(b, x)
            mb = self.mu[off : off + b.size].reshape(b.batch, b.n_out)
            shifted = vals + mb / self.rho
            active = (shifted > 0).astype(float)
            res_parts.append((sq * np.clip(shifted, 0.0, None)).ravel())
            r, c, d = _block_triplets(b, jac * sq, row, scale=active)
            trip_r.append(r); trip_c.append(c); trip_d.append(d)
            row += b.size
            off += b.size
        res = (np.concatenate(res_parts) if res_parts else np.zeros(0))
        if trip_r:
            J = sp.coo_matrix(
                (np.concatenate(trip_d),
                 (np.concatenate(trip_r), np.concatenate(trip_c))),
                shape=(self.n_res, p.n_vars),
            ).tocsc()[:, self.free].tocsr()
        else:
            J = sp.csr_matrix((self.n_res, int(np.sum(self.free))))
        self._cache_key = key
        self._cache = (res, J)
        return self._cache

    def residuals(self, z):
        return self._evaluate(z)[0].copy()

    def jac(self, z):
        return self._evaluate(z)[1]


def _bounded_lm(helper, z0, lb, ub, max_iter, gtol):
    """Projected Levenberg-Marquardt on a bound-constrained least-squares.

    Normal equations with adaptive diagonal damping, solved by sparse LU;
    variables pinned to an active bound with an outward gradient are
    frozen for the step, and trial points are projected back into the box.
    Deterministic.
    """
    z = np.clip(z0, lb, ub)
    r = helper.residuals(z)
    J = helper.jac(z)
    nfev = 1
    f = float(r @ r)
    sigma = 1e-5
    for _ in range(max_iter):
        g = 2.0 * (J.T @ r)
        pg = z - np.clip(z - g, lb, ub)
        if np.max(np.abs(pg), initial=0.0) < gtol * (1.0 + abs(f)):
            break
        on_lb = (z <= lb + 1e-14) & (g > 0)
        on_ub = (z >= ub - 1e-14) & (g < 0)
        free = ~(on_lb | on_ub)
        if not np.any(free):
            break
        Jf = J.tocsc()[:, free]
        A = (Jf.T @ Jf).tocsc()
        d = np.maximum(A.diagonal(), 1e-10)
        rhs = -(Jf.T @ r)
        accepted = False
        for _trial in range(30):
            try:
                p = spla.factorized((A + sp.diags(sigma * d)).tocsc())(rhs)
            except RuntimeError:
                sigma *= 10.0
                continue
            step = np.zeros_like(z)
            step[free] = p
            zt = np.clip(z + step, lb, ub)
            rt = helper.residuals(zt)
            nfev += 1
            ft = float(rt @ rt)
            lin = r + J @ (zt - z)
            predicted = f - float(lin @ lin)
            if ft < f and predicted > 0:
                ratio = (f - ft) / predicted
                z, f, r = zt, ft, rt
                J = helper.jac(z)
                if ratio > 0.75:
                    sigma = max(sigma / 5.0, 1e-14)
                elif ratio < 0.25:
                    sigma *= 2.0
                accepted = True
                break
            sigma *= 5.0
        if not accepted:
            break
    return z, nfev


def _inner_solve(problem, x, lam, mu, rho, opts):
    """One bound-constrained Gauss-Newton minimization of the AL."""
    free = problem.lower < problem.upper
    template = x.copy()
    template[~free] = problem.lower[~free]
    if not np.any(free):
        return template, 0
    helper = _AlResiduals(problem, lam, mu, rho, free, template)
    z, nfev = _bounded_lm(
        helper, x[free], problem.lower[free], problem.upper[free],
        opts.max_inner, opts.inner_gtol,
    )
    return helper.full_x(z), nfev


def _violation(problem, x):
    ceq = eval_constraints(problem.eq_blocks, x)
    cineq = eval_constraints(problem.ineq_blocks, x)
    return max(
        float(np.max(np.abs(ceq), initial=0.0)),
        float(np.max(np.clip(cineq, 0.0, None), initial=0.0)),
    )


def _restoration(problem, x, opts):
    """Drive constraint violation down with the objective switched off.

    Minimizing ||c_eq||^2 + ||max(0, c_ineq)||^2 over the bounds pulls the
    iterate (near) the feasible manifold; used before the first outer
    iteration and as stall recovery, mirroring the restoration phases of
    interior-point practice.
    """
    free = problem.lower < problem.upper
    if not np.any(free) or (problem.n_eq + problem.n_ineq) == 0:
        return x, 0
    feas = NlpProblem(
        n_vars=problem.n_vars,
        lower=problem.lower,
        upper=problem.upper,
        cost_blocks=[],
        eq_blocks=problem.eq_blocks,
        ineq_blocks=problem.ineq_blocks,
    )
    helper = _AlResiduals(
        feas, np.zeros(problem.n_eq), np.zeros(problem.n_ineq), 2.0, free,
        x.copy(),
    )
    # variables no constraint touches cannot help; freeze them so the
    # trust-region column scaling stays finite
    J0 = helper.jac(x[free])
    touched = np.asarray((J0 != 0).sum(axis=0)).ravel() > 0
    if not np.all(touched):
        sub = free.copy()
        sub[np.where(free)[0][~touched]] = False
        free = sub
        helper = _AlResiduals(
            feas, np.zeros(problem.n_eq), np.zeros(problem.n_ineq), 2.0,
            free, x.copy(),
        )
    if not np.any(free):
        return x, 0
    # trust-region reflective handles bound-trapped feasibility searches
    # better than clipped LM steps
    def trf(z0, scale, budget):
        return least_squares(
            helper.residuals,
            z0,
            jac=helper.jac,
            bounds=(problem.lower[free], problem.upper[free]),
            method="trf",
            tr_solver="lsmr",
            x_scale=scale,
            max_nfev=budget,
            xtol=1e-14,
            ftol=1e-14,
            gtol=1e-14,
        )

    tol = max(opts.tol_eq, opts.tol_ineq)
    # per-column ("jac") scaling is best when variables have very different
    # magnitudes but assigns huge trust regions to weakly-coupled variables
    # (e.g. impact forces acting through a millisecond interval), where unit
    # scaling is stable; try the former, fall back to the latter
    res = trf(x[free], "jac", 2 * opts.max_inner)
    best_z, nfev = res.x, res.nfev
    best_viol = _violation(problem, helper.full_x(best_z))
    if best_viol > 10.0 * tol:
        # restart from the caller's point: the first phase may have moved
        # into a worse basin than the (possibly warm-started) input
        res = trf(x[free], 1.0, 2 * opts.max_inner)
        nfev += res.nfev
        # lsmr's inexact steps leave a slow tail that exact
        # normal-equation LM solves clean up quickly
        z, lm_iters = _bounded_lm(
            helper, res.x, problem.lower[free], problem.upper[free],
            3 * opts.max_inner, 1e-12,
        )
        nfev += lm_iters
        if _violation(problem, helper.full_x(z)) < best_viol:
            best_z = z
            best_viol = _violation(problem, helper.full_x(z))
    x_new = helper.full_x(best_z)
    if best_viol < _violation(problem, x):
        return x_new, nfev
    return x, nfev


def solve(problem: NlpProblem, x0, opts: SolverOpts = None) -> NlpSolution:
    """Augmented-Lagrangian solve with bound-constrained inner iterations.

    Deterministic: identical (problem, x0, opts) produce identical
    iterate sequences.
    """
    opts = opts if opts is not None else SolverOpts()
    t_start = time.perf_counter()
    x = np.clip(np.asarray(x0, dtype=float), problem.lower, problem.upper)
    if x.size != problem.n_vars:
        raise ValueError("x0 has wrong dimension")
    lam = np.zeros(problem.n_eq)
    mu = np.zeros(problem.n_ineq)
    rho = opts.rho0
    prev_viol = np.inf
    prev_obj = None
    obj_stall = 0
    stall = 0
    status = "max_iter"
    inner_total = 0
    outer_done = 0
    best = None
    kkt = None
    restored = False

    if _violation(problem, x) > 10.0 * max(opts.tol_eq, opts.tol_ineq):
        x, nfev = _restoration(problem, x, opts)
        inner_total += nfev
        restored = True
        rho = max(rho, opts.rho_restore)

    for outer in range(opts.max_outer):
        x, nfev = _inner_solve(problem, x, lam, mu, rho, opts)
        inner_total += nfev
        outer_done = outer + 1
        ceq = eval_constraints(problem.eq_blocks, x)
        cineq = eval_constraints(problem.ineq_blocks, x)
        lam = lam + rho * ceq
        mu = np.clip(mu + rho * cineq, 0.0, None)
        eq_viol = float(np.max(np.abs(ceq), initial=0.0))
        ineq_viol = float(np.max(np.clip(cineq, 0.0, None), initial=0.0))
        viol = max(eq_viol, ineq_viol)
        kkt = kkt_residual(problem, x, lam, mu)
        obj = eval_objective(problem, x)
        if opts.verbose:
            print(
                f"  outer {outer_done:3d}: obj {obj:12.5f}"
                f"  viol {viol:9.2e}  stat {kkt.stationarity:9.2e}"
                f"  rho {rho:8.1e}  inner {nfev}",
                flush=True,
            )
        if best is None or viol <= best[0]:
            best = (viol, x.copy(), lam.copy(), mu.copy(), kkt)
        feasible = eq_viol <= opts.tol_eq and ineq_viol <= opts.tol_ineq
        if feasible and kkt.stationarity <= opts.tol_stat:
            status = "converged"
            break
        if (feasible and prev_obj is not None
                and abs(obj - prev_obj) <= opts.obj_stall_rtol * max(1.0, abs(obj))):
            obj_stall += 1
            if obj_stall >= opts.obj_stall_iters:
                status = "converged"
                break
        else:
            obj_stall = 0
        prev_obj = obj if feasible else None
        if viol > prev_viol / opts.viol_drop_factor:
            rho = min(rho * opts.rho_factor, opts.rho_max)
        if rho >= opts.rho_max and viol > max(opts.tol_eq, opts.tol_ineq):
            stall += 1
            if stall == 1 and not restored:
                x, nfev = _restoration(problem, x, opts)
                inner_total += nfev
                restored = True
                # multipliers accumulated off-manifold are stale
                lam = np.zeros(problem.n_eq)
                mu = np.zeros(problem.n_ineq)
            if stall >= opts.stall_limit:
                status = "infeasible"
                break
        else:
            stall = 0
        prev_viol = viol

    if status != "converged" and best is not None:
        _, x, lam, mu, kkt = best
    return NlpSolution(
        x=x,
        multipliers_eq=lam,
        multipliers_ineq=mu,
        objective_value=eval_objective(problem, x),
        kkt=kkt,
        iterations=outer_done,
        inner_iterations=inner_total,
        wall_time=time.perf_counter() - t_start,
        status=status,
    )


class WarmStartError(RuntimeError):
    def __init__(self, stage_index, solution):
        super().__init__(
            f"warm-start chain stage {stage_index} ended with status "
            f"'{solution.status}'"
        )
        self.stage_index = stage_index
        self.solution = solution


def warm_start_chain(stages, x0, opts: SolverOpts = None) -> NlpSolution:
    """Solve a sequence of problems, threading each solution into the next.

    ``stages`` is a list of (problem, transfer) pairs; ``transfer`` maps
    the previous stage's solution vector (or ``x0`` for the first stage)
    to this stage's initial vector, with ``None`` meaning identity.
    Reported wall time is cumulative over all stages.
    """
    x_prev = np.asarray(x0, dtype=float)
    total_time = 0.0
    sol = None
    for idx, (problem, transfer) in enumerate(stages):
        x_init = transfer(x_prev) if transfer is not None else x_prev
        sol = solve(problem, x_init, opts)
        total_time += sol.wall_time
        if sol.status != "converged":
            sol.wall_time = total_time
            raise WarmStartError(idx, sol)
        x_prev = sol.x
    if sol is None:
        raise ValueError("warm_start_chain requires at least one stage")
    sol.wall_time = total_time
    return sol
