"""Augmented-Lagrangian solver on small problems with known solutions."""

import numpy as np
import pytest

from branchopt import autodiff as ad
from branchopt import nlp


def _problem(n, cost=(), eq=(), ineq=(), lower=None, upper=None):
    return nlp.NlpProblem(
        n_vars=n,
        lower=np.full(n, -np.inf) if lower is None else np.asarray(lower, float),
        upper=np.full(n, np.inf) if upper is None else np.asarray(upper, float),
        cost_blocks=list(cost),
        eq_blocks=list(eq),
        ineq_blocks=list(ineq),
    )


def _block(name, fun, indices, n_out):
    return nlp.Block(name, fun, np.asarray(indices, dtype=int), n_out)


def test_equality_constrained_quadratic_kkt_oracle():
    # min x^2 + y^2  s.t. x + y = 1.
    # Oracle (Lagrangian stationarity, derived by hand, not quoted):
    #   2x + lam = 0, 2y + lam = 0, x + y = 1  =>  x = y = 1/2, lam = -1.
    cost = _block("r", lambda v: [v[0], v[1]], [[0, 1]], 2)
    eq = _block("c", lambda v: [v[0] + v[1] - 1.0], [[0, 1]], 1)
    p = _problem(2, cost=[cost], eq=[eq])
    sol = nlp.solve(p, np.array([3.0, -2.0]))
    assert sol.status == "converged"
    assert sol.x == pytest.approx([0.5, 0.5], abs=1e-6)
    assert sol.multipliers_eq[0] == pytest.approx(-1.0, abs=1e-4)
    assert sol.objective_value == pytest.approx(0.5, abs=1e-5)


def test_kkt_residual_zero_at_optimum():
    cost = _block("r", lambda v: [v[0], v[1]], [[0, 1]], 2)
    eq = _block("c", lambda v: [v[0] + v[1] - 1.0], [[0, 1]], 1)
    p = _problem(2, cost=[cost], eq=[eq])
    kkt = nlp.kkt_residual(p, np.array([0.5, 0.5]), np.array([-1.0]),
                           np.zeros(0))
    assert kkt.stationarity == pytest.approx(0.0, abs=1e-10)
    assert kkt.eq_viol == pytest.approx(0.0, abs=1e-12)


def test_inequality_active_at_solution():
    # min (x-2)^2 s.t. x <= 1 -> x* = 1, mu* = 2(2-1) = 2
    cost = _block("r", lambda v: [v[0] - 2.0], [[0]], 1)
    ineq = _block("g", lambda v: [v[0] - 1.0], [[0]], 1)
    p = _problem(1, cost=[cost], ineq=[ineq])
    sol = nlp.solve(p, np.array([5.0]))
    assert sol.status == "converged"
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.multipliers_ineq[0] == pytest.approx(2.0, abs=1e-3)


def test_inactive_inequality_has_zero_multiplier():
    cost = _block("r", lambda v: [v[0] - 0.25], [[0]], 1)
    ineq = _block("g", lambda v: [v[0] - 1.0], [[0]], 1)
    p = _problem(1, cost=[cost], ineq=[ineq])
    sol = nlp.solve(p, np.array([0.9]))
    assert sol.status == "converged"
    assert sol.x[0] == pytest.approx(0.25, abs=1e-6)
    assert sol.multipliers_ineq[0] == pytest.approx(0.0, abs=1e-6)


def test_bounds_are_respected():
    # min (x+3)^2 with x in [-1, 5]
    cost = _block("r", lambda v: [v[0] + 3.0], [[0]], 1)
    p = _problem(1, cost=[cost], lower=[-1.0], upper=[5.0])
    sol = nlp.solve(p, np.array([4.0]))
    assert sol.x[0] == pytest.approx(-1.0, abs=1e-8)


def test_fixed_variables_are_pinned():
    cost = _block("r", lambda v: [v[0] - 7.0, v[1]], [[0, 1]], 2)
    p = _problem(2, cost=[cost], lower=[2.0, -10], upper=[2.0, 10])
    sol = nlp.solve(p, np.array([2.0, 5.0]))
    assert sol.x[0] == 2.0
    assert sol.x[1] == pytest.approx(0.0, abs=1e-8)


def test_rosenbrock_valley_unconstrained():
    def rb(v):
        return [10.0 * (v[1] - v[0] * v[0]), 1.0 - v[0]]

    cost = _block("r", rb, [[0, 1]], 2)
    p = _problem(2, cost=[cost])
    sol = nlp.solve(p, np.array([-1.2, 1.0]))
    assert sol.x == pytest.approx([1.0, 1.0], abs=1e-6)


def test_batched_block_matches_loop():
    # sum_i (x_i - i)^2 with one batched block
    n = 6
    idx = np.arange(n).reshape(-1, 1)
    target = np.arange(n, dtype=float)
    cost = _block("r", lambda v: [v[0] - target], idx, 1)
    p = _problem(n, cost=[cost])
    sol = nlp.solve(p, np.zeros(n))
    assert sol.x == pytest.approx(target, abs=1e-8)


def test_nonconvex_equality_circle():
    # min (x-2)^2 + y^2 s.t. x^2 + y^2 = 1 -> (1, 0)
    cost = _block("r", lambda v: [v[0] - 2.0, v[1]], [[0, 1]], 2)
    eq = _block("c", lambda v: [v[0] * v[0] + v[1] * v[1] - 1.0], [[0, 1]], 1)
    p = _problem(2, cost=[cost], eq=[eq])
    sol = nlp.solve(p, np.array([0.1, 0.9]))
    assert sol.status == "converged"
    assert sol.x == pytest.approx([1.0, 0.0], abs=1e-5)


def test_infeasible_problem_reports_infeasible():
    eq1 = _block("a", lambda v: [v[0] - 1.0], [[0]], 1)
    eq2 = _block("b", lambda v: [v[0] + 1.0], [[0]], 1)
    p = _problem(1, eq=[eq1, eq2])
    sol = nlp.solve(p, np.array([0.0]), nlp.SolverOpts(max_outer=20))
    assert sol.status != "converged"
    assert max(sol.kkt.eq_viol, 0.0) > 1e-3


def test_solution_reports_iteration_and_time():
    cost = _block("r", lambda v: [v[0]], [[0]], 1)
    p = _problem(1, cost=[cost])
    sol = nlp.solve(p, np.array([1.0]))
    assert sol.iterations >= 1
    assert sol.wall_time >= 0.0


def test_deterministic_iterates():
    def rb(v):
        return [10.0 * (v[1] - v[0] * v[0]), 1.0 - v[0]]

    cost = _block("r", rb, [[0, 1]], 2)
    eq = _block("c", lambda v: [v[0] + v[1] - 1.5], [[0, 1]], 1)
    p = _problem(2, cost=[cost], eq=[eq])
    a = nlp.solve(p, np.array([-1.0, 2.0]))
    b = nlp.solve(p, np.array([-1.0, 2.0]))
    assert np.array_equal(a.x, b.x)
    assert a.objective_value == b.objective_value


def test_warm_start_chain_threads_stages():
    # stage 1: pin x to 1; stage 2: reuse it for min (x-1)^2 + (y-x)^2
    c1 = _block("r1", lambda v: [v[0] - 1.0], [[0]], 1)
    p1 = _problem(1, cost=[c1])
    c2 = _block("r2", lambda v: [v[0] - 1.0, v[1] - v[0]], [[0, 1]], 2)
    p2 = _problem(2, cost=[c2])

    def transfer(x1):
        return np.array([x1[0], 0.0])

    sol = nlp.warm_start_chain([(p1, None), (p2, transfer)], np.array([9.0]))
    assert sol.status == "converged"
    assert sol.x == pytest.approx([1.0, 1.0], abs=1e-6)


def test_warm_start_chain_raises_on_stage_failure():
    eq1 = _block("a", lambda v: [v[0] - 1.0], [[0]], 1)
    eq2 = _block("b", lambda v: [v[0] + 1.0], [[0]], 1)
    bad = _problem(1, eq=[eq1, eq2])
    ok = _problem(1, cost=[_block("r", lambda v: [v[0]], [[0]], 1)])
    with pytest.raises(nlp.WarmStartError) as exc:
        nlp.warm_start_chain(
            [(bad, None), (ok, lambda x: x)], np.array([0.0]),
            nlp.SolverOpts(max_outer=20))
    assert exc.value.stage_index == 0


def test_x0_dimension_checked():
    p = _problem(2, cost=[_block("r", lambda v: [v[0]], [[0]], 1)])
    with pytest.raises(ValueError):
        nlp.solve(p, np.zeros(3))
