"""Tracking-controller and scheduler tests.

The Riccati solve is checked against two independent oracles: a scalar
closed form and Kleinman's Newton iteration built only on Lyapunov
solves.  Scheduler behavior is exercised on a hand-built bundle.
"""

import numpy as np
import pytest
import scipy.linalg
import scipy.signal

from branchopt import control
from branchopt.plants import cartpole
from branchopt.transcription import SolutionBundle, Trajectory


# -- Riccati oracles -----------------------------------------------------------


def test_scalar_care_closed_form():
    # A=0, b=1, Q=1, r=1: -P^2 + 1 = 0 with P > 0 gives P = 1.
    P = control.solve_care(np.zeros((1, 1)), np.ones(1), np.eye(1), 1.0)
    assert P == pytest.approx(np.array([[1.0]]), abs=1e-10)


def test_double_integrator_care_closed_form():
    # A=[[0,1],[0,0]], b=[0,1], Q=I, r=1 has the known solution
    # P=[[sqrt(3),1],[1,sqrt(3)]], K = b'P = [1, sqrt(3)].
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    b = np.array([0.0, 1.0])
    P = control.solve_care(A, b, np.eye(2), 1.0)
    s3 = np.sqrt(3.0)
    assert P == pytest.approx(np.array([[s3, 1.0], [1.0, s3]]), abs=1e-10)
    gains = control.lqr_gains(A, b, np.eye(2), 1.0)
    assert gains.k_p == pytest.approx([1.0], abs=1e-10)
    assert gains.k_d == pytest.approx([s3], abs=1e-10)


def _kleinman_care(A, b, Q, r, n_iter=60):
    """Newton iteration for the CARE using only Lyapunov solves."""
    b = b.reshape(-1, 1)
    # Stabilize first via pole placement through a crude LQR on an
    # inflated Q; any stabilizing K works as the Newton starting point.
    K = scipy.signal.place_poles(A, b, -1.0 - np.arange(A.shape[0])).gain_matrix
    P = None
    for _ in range(n_iter):
        Acl = A - b @ K
        rhs = -(Q + K.T * r @ K)
        P = scipy.linalg.solve_continuous_lyapunov(Acl.T, rhs)
        K = (b.T @ P) / r
    return 0.5 * (P + P.T)


def test_care_matches_kleinman_iteration_on_cartpole():
    sys = cartpole.make_system()
    A, b = control.linearize(sys, cartpole.X_EQ, np.zeros(1))
    Q = np.diag([10.0, 0.0, 10.0, 0.0])
    r = 0.1
    P = control.solve_care(A, b, Q, r)
    P_star = _kleinman_care(A, b, Q, r)
    assert P == pytest.approx(P_star, rel=1e-8, abs=1e-8)


def test_care_residual_and_hurwitz_on_cartpole():
    sys = cartpole.make_system()
    A, b = control.linearize(sys, cartpole.X_EQ, np.zeros(1))
    Q = np.diag([10.0, 0.0, 10.0, 0.0])
    r = 0.1
    P = control.solve_care(A, b, Q, r, residual_tol=1e-8)
    bv = np.asarray(b, dtype=float).ravel()
    resid = A.T @ P + P @ A - np.outer(P @ bv, bv @ P) / r + Q
    assert np.max(np.abs(resid)) <= 1e-8
    K = (bv @ P) / r
    eigs = np.linalg.eigvals(A - np.outer(bv, K))
    assert np.max(np.real(eigs)) < 0.0


def test_linearize_rejects_non_equilibrium():
    sys = cartpole.make_system()
    x_bad = cartpole.X_EQ + np.array([0.0, 0.3, 0.0, 0.0])
    with pytest.raises(ValueError):
        control.linearize(sys, x_bad, np.zeros(1))


def test_linearize_matches_finite_differences():
    sys = cartpole.make_system()
    A, b = control.linearize(sys, cartpole.X_EQ, np.zeros(1))
    perm = np.array([0, 2, 1, 3])  # interleaved -> [q; qd] ordering

    def f(x, u):
        q, qd = x[:2], x[2:]
        return np.concatenate([qd, np.asarray(
            sys.free_dynamics(q, qd, u), dtype=float)])

    h = 1e-6
    A_fd = np.zeros((4, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        A_fd[:, j] = (f(cartpole.X_EQ + e, np.zeros(1))
                      - f(cartpole.X_EQ - e, np.zeros(1))) / (2 * h)
    b_fd = (f(cartpole.X_EQ, np.array([h]))
            - f(cartpole.X_EQ, np.array([-h]))) / (2 * h)
    # undo the interleaving before comparing
    A_plain = A[np.ix_(np.argsort(perm), np.argsort(perm))]
    assert A_plain == pytest.approx(A_fd, abs=1e-6)
    assert np.asarray(b).ravel()[np.argsort(perm)] == pytest.approx(b_fd, abs=1e-6)


# -- reference sampling and the control law ------------------------------------


def _ramp_trajectory():
    # two segments of 0.5 s each; q ramps 0 -> 1 -> 3, qd constant blocks
    states = np.array([[0.0, 0.0, 1.0, 0.0],
                       [1.0, 0.0, 2.0, 0.0],
                       [3.0, 0.0, 4.0, 0.0]])
    inputs = np.array([[0.5], [1.5]])
    dts = np.array([0.5, 0.5])
    return Trajectory(states=states, inputs=inputs, dts=dts)


def test_sample_reference_interpolates_and_clamps():
    ref = _ramp_trajectory()
    q, qd, tau = control.sample_reference(ref, 0.25)
    assert q == pytest.approx([0.5, 0.0])
    assert qd == pytest.approx([1.5, 0.0])
    assert tau == pytest.approx([1.0])
    # past the horizon the terminal node is held
    q, qd, tau = control.sample_reference(ref, 5.0)
    assert q == pytest.approx([3.0, 0.0])
    assert qd == pytest.approx([4.0, 0.0])
    assert tau == pytest.approx([1.5])
    # before t=0 the initial node is held
    q, qd, tau = control.sample_reference(ref, -1.0)
    assert q == pytest.approx([0.0, 0.0])
    assert tau == pytest.approx([0.5])


def test_pd_feedforward_formula():
    ref = _ramp_trajectory()
    gains = control.Gains(k_p=[3.0, 5.0], k_d=[0.7, 0.2])
    state = np.array([0.4, -0.1, 1.2, 0.3])
    t = 0.25
    q_des, qd_des, tau_des = control.sample_reference(ref, t)
    expect = (gains.k_p @ (q_des - state[:2])
              + gains.k_d @ (qd_des - state[2:]) + tau_des)
    assert control.pd_feedforward(ref, state, gains, t) == pytest.approx(expect)


# -- scheduler -----------------------------------------------------------------


def _toy_bundle():
    """Common trajectory of 8 nodes (dt=0.1) with branches at nodes 3..5."""
    n = 8
    states = np.zeros((n + 1, 4))
    states[:, 0] = np.arange(n + 1) * 0.1  # distinguishable positions
    inputs = np.zeros((n, 1))
    dts = np.full(n, 0.1)
    common = Trajectory(states=states, inputs=inputs, dts=dts)
    branches = []
    branch_nodes = [3, 4, 5]
    for k in branch_nodes:
        bs = np.full((3, 4), float(k))
        branches.append(Trajectory(states=bs, inputs=np.full((2, 1), float(k)),
                                   dts=np.full(2, 0.05)))
    return SolutionBundle(common=common, branches=branches,
                          branch_nodes=branch_nodes, rejoin_index=6, d=0.05)


def test_scheduler_plays_common_until_contact():
    sched = control.TrajectoryScheduler(_toy_bundle())
    assert not sched.switched
    assert sched.state.active_reference == "common"
    q, _, _ = sched.reference_at(0.25)
    assert q[0] == pytest.approx(0.25)


def test_scheduler_picks_nearest_subsequent_branch():
    # branch departure times are 0.3, 0.4, 0.5
    sched = control.TrajectoryScheduler(_toy_bundle())
    sched.observe_contact(0.33)
    assert sched.state.branch_index == 4
    assert sched.state.contact_time == pytest.approx(0.33)
    # branch reference realigned: its node 0 plays at t = t_c
    q, _, _ = sched.reference_at(0.33)
    assert q[0] == pytest.approx(4.0)


def test_scheduler_contact_at_departure_time_takes_that_branch():
    sched = control.TrajectoryScheduler(_toy_bundle())
    sched.observe_contact(0.4)
    assert sched.state.branch_index == 4


def test_scheduler_contact_after_last_branch_takes_last():
    sched = control.TrajectoryScheduler(_toy_bundle())
    sched.observe_contact(0.9)
    assert sched.state.branch_index == 5


def test_scheduler_contact_before_window_warns_and_takes_first():
    sched = control.TrajectoryScheduler(_toy_bundle())
    with pytest.warns(UserWarning):
        sched.observe_contact(0.1)
    assert sched.state.branch_index == 3


def test_scheduler_switches_exactly_once():
    sched = control.TrajectoryScheduler(_toy_bundle())
    sched.observe_contact(0.42)
    first = sched.state
    sched.observe_contact(0.9)
    assert sched.state is first


def test_post_contact_reference_appends_post_rejoin_tail():
    bundle = _toy_bundle()
    sched = control.TrajectoryScheduler(bundle)
    sched.observe_contact(0.45)  # branch at node 5
    ref = sched.state.reference
    # 3 branch states + common states after the rejoin node (7, 8)
    assert ref.states.shape[0] == 3 + 2
    assert ref.states[-1, 0] == pytest.approx(0.8)
    assert ref.dts.shape[0] == 2 + 2


def test_tracking_controller_switches_on_notification():
    bundle = _toy_bundle()
    gains = control.Gains(k_p=[1.0, 1.0], k_d=[0.1, 0.1])
    ctl = control.TrackingController(bundle, gains)
    tau_before = ctl(0.45, np.zeros(4))
    ctl.notify_contact(0.45)
    tau_after = ctl(0.45, np.zeros(4))
    assert not np.allclose(tau_before, tau_after)


def test_tracking_controller_fixed_reference():
    ref = _ramp_trajectory()
    gains = control.Gains(k_p=[2.0, 2.0], k_d=[0.5, 0.5])
    ctl = control.TrackingController(ref, gains)
    state = np.zeros(4)
    assert ctl(0.25, state) == pytest.approx(
        control.pd_feedforward(ref, state, gains, 0.25))
