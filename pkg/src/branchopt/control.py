"""Reference tracking and trajectory scheduling.

Tracking is a PD controller with feedforward compensation whose gains
come from an LQR design around the target equilibrium: linearize the
plant, solve the continuous-time algebraic Riccati equation, and read
the proportional/derivative gains off the feedback row.  The scheduler
plays the common trajectory until contact is observed, then switches —
exactly once — to the nearest subsequent branch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .transcription import SolutionBundle, Trajectory

__all__ = [
    "Gains",
    "SchedulerState",
    "linearize",
    "solve_care",
    "lqr_gains",
    "design_gains",
    "sample_reference",
    "pd_feedforward",
    "TrajectoryScheduler",
    "schedule",
]

DEFAULT_Q = np.diag([10.0, 0.0, 10.0, 0.0])
DEFAULT_R = 0.1


@dataclass
class Gains:
    """Per-coordinate proportional and derivative tracking gains."""

    k_p: np.ndarray
    k_d: np.ndarray

    def __post_init__(self):
        self.k_p = np.asarray(self.k_p, dtype=float)
        self.k_d = np.asarray(self.k_d, dtype=float)


def _interleave_permutation(n_q):
    """Map [q; qd] coordinates onto [q1, qd1, q2, qd2, ...] ordering."""
    perm = np.empty(2 * n_q, dtype=int)
    perm[0::2] = np.arange(n_q)
    perm[1::2] = np.arange(n_q) + n_q
    return perm


def linearize(sys, x_eq, u_eq, eq_tol=1e-10):
    """First-order model at an equilibrium, in interleaved state order.

    Returns (A, B) for the state [q1, q̇1, q2, q̇2, ...]; differentiation
    runs through the plant's dynamics callbacks.
    """
    x_eq = np.asarray(x_eq, dtype=float)
    u_eq = np.asarray(u_eq, dtype=float)
    resid = np.max(np.abs(sys.state_derivative(x_eq, u_eq)))
    if resid > eq_tol:
        raise ValueError(
            f"not an equilibrium: |f(x_eq, u_eq)| = {resid:.3e} > {eq_tol:.0e}"
        )
    n = x_eq.size

    def f_of_x(xs):
        q, qd = xs[: sys.n_q], xs[sys.n_q :]
        return list(qd) + list(sys.free_dynamics(q, qd, u_eq))

    def f_of_u(us):
        q, qd = x_eq[: sys.n_q], x_eq[sys.n_q :]
        return list(qd) + list(sys.free_dynamics(q, qd, us))

    A = ad.jacobian(f_of_x, x_eq)
    B = ad.jacobian(f_of_u, u_eq)
    perm = _interleave_permutation(sys.n_q)
    return A[np.ix_(perm, perm)], B[perm]


def solve_care(A, b, Q, r, residual_tol=1e-8):
    """Riccati matrix P for the single-input continuous-time LQR.

    Checks the defining residual and that the closed loop is Hurwitz.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    Q = np.asarray(Q, dtype=float)
    R = np.array([[float(r)]])
    P = scipy.linalg.solve_continuous_are(A, b, Q, R)
    P = 0.5 * (P + P.T)
    resid = A.T @ P + P @ A - P @ b @ b.T @ P / float(r) + Q
    worst = np.max(np.abs(resid))
    if worst > residual_tol:
        raise RuntimeError(
            f"Riccati residual {worst:.3e} exceeds {residual_tol:.0e}"
        )
    closed = A - b @ b.T @ P / float(r)
    if np.max(np.real(np.linalg.eigvals(closed))) >= 0.0:
        raise RuntimeError("closed-loop matrix is not Hurwitz")
    return P


def lqr_gains(A, b, Q=None, r=DEFAULT_R) -> Gains:
    """Feedback row K = r⁻¹ bᵀ P split into proportional/derivative parts.

    Expects (A, b) in interleaved order so K alternates position and
    velocity entries.
    """
    A = np.asarray(A, dtype=float)
    if Q is None:
        Q = DEFAULT_Q if A.shape[0] == 4 else np.eye(A.shape[0])
    P = solve_care(A, b, Q, r)
    K = (np.asarray(b, dtype=float).reshape(-1) @ P) / float(r)
    return Gains(k_p=K[0::2], k_d=K[1::2])


def design_gains(sys, x_eq, u_eq=None, Q=None, r=DEFAULT_R) -> Gains:
    """LQR-designed tracking gains for a plant at an equilibrium."""
    if u_eq is None:
        u_eq = np.zeros(sys.n_u)
    A, b = linearize(sys, x_eq, u_eq)
    return lqr_gains(A, b, Q, r)


# -- reference sampling and the PD + feedforward law --------------------------


def sample_reference(ref: Trajectory, t, n_q=None):
    """(q_des, q̇_des, τ_des) at time t, linearly interpolated over nodes.

    Past the horizon the terminal setpoint is held (with the last input
    as feedforward); before t=0 the initial node is held.
    """
    if n_q is None:
        n_q = ref.states.shape[1] // 2
    times = ref.node_times
    t = float(np.clip(t, times[0], times[-1]))
    q = np.array([np.interp(t, times, ref.states[:, j]) for j in range(n_q)])
    qd = np.array(
        [np.interp(t, times, ref.states[:, n_q + j]) for j in range(n_q)]
    )
    n_int = len(ref.dts)
    if n_int == 0 or len(ref.inputs) == 0:
        tau = np.zeros(ref.inputs.shape[1] if ref.inputs.ndim == 2 else 1)
    else:
        t_u = times[:n_int]
        u = ref.inputs[:n_int]
        tau = np.array(
            [np.interp(t, t_u, u[:, j]) for j in range(u.shape[1])]
        )
    return q, qd, tau


def pd_feedforward(ref: Trajectory, state, gains: Gains, t):
    """τ(t) = k_p·(q_des − q) + k_d·(q̇_des − q̇) + τ_des."""
    state = np.asarray(state, dtype=float)
    n_q = gains.k_p.size
    q, qd = state[:n_q], state[n_q : 2 * n_q]
    q_des, qd_des, tau_des = sample_reference(ref, t, n_q)
    fb = gains.k_p @ (q_des - q) + gains.k_d @ (qd_des - qd)
    return fb + tau_des


# -- trajectory scheduling -----------------------------------------------------


@dataclass
class SchedulerState:
    active_reference: str = "common"  # "common" | "branch <i>"
    branch_index: Optional[int] = None  # common-node index the branch leaves
    contact_time: Optional[float] = None
    clock_offset: float = 0.0  # reference time = t - clock_offset
    reference: Trajectory = None


def _post_contact_reference(bundle: SolutionBundle, pos) -> Trajectory:
    """Branch `pos` followed by the common post-rejoin segment."""
    br = bundle.branches[pos]
    if bundle.rejoin_index is None:
        return br
    com = bundle.common
    j = bundle.rejoin_index
    return Trajectory(
        states=np.vstack([br.states, com.states[j + 1 :]]),
        inputs=np.vstack([br.inputs, com.inputs[j:]]),
        dts=np.concatenate([br.dts, com.dts[j:]]),
    )


class TrajectoryScheduler:
    """Plays the common reference, switching once on observed contact.

    On contact at time t_c the nearest subsequent branch — the first
    branch whose departure-node time is ≥ t_c — becomes the reference,
    with its node 0 aligned to t_c.  Contact after the last branching
    node selects the last branch; contact before the first one selects
    the first branch and warns (outside the planned uncertainty window).
    """

    def __init__(self, bundle: SolutionBundle):
        self.bundle = bundle
        self.state = SchedulerState(reference=bundle.common)

    @property
    def switched(self):
        return self.state.contact_time is not None

    def branch_departure_times(self):
        times = self.bundle.common.node_times
        return np.array([times[i] for i in self.bundle.branch_nodes])

    def observe_contact(self, t_c):
        """Select the post-contact reference; idempotent after the first call."""
        if self.switched or not self.bundle.branches:
            return self.state
        dep = self.branch_departure_times()
        if t_c < dep[0]:
            warnings.warn(
                "contact observed before the first branching node; "
                "tracking the first branch",
                stacklevel=2,
            )
            pos = 0
        else:
            later = np.nonzero(dep >= t_c)[0]
            pos = int(later[0]) if later.size else len(dep) - 1
        self.state = SchedulerState(
            active_reference=f"branch {self.bundle.branch_nodes[pos]}",
            branch_index=self.bundle.branch_nodes[pos],
            contact_time=float(t_c),
            clock_offset=float(t_c),
            reference=_post_contact_reference(self.bundle, pos),
        )
        return self.state

    def reference_at(self, t):
        """(q_des, q̇_des, τ_des) under the currently active reference."""
        return sample_reference(
            self.state.reference, t - self.state.clock_offset
        )

    def control(self, state, gains: Gains, t):
        return pd_feedforward(
            self.state.reference, state, gains, t - self.state.clock_offset
        )


class TrackingController:
    """Closed-loop PD + feedforward tracker usable by the simulator.

    Accepts a plain Trajectory (fixed reference) or a SolutionBundle
    (scheduler-backed: switches to a branch when the simulator reports
    contact via ``notify_contact``).
    """

    def __init__(self, reference, gains: Gains):
        if isinstance(reference, SolutionBundle):
            self.scheduler = TrajectoryScheduler(reference)
        else:
            self.scheduler = None
            self.reference = reference
        self.gains = gains

    def notify_contact(self, t):
        if self.scheduler is not None:
            self.scheduler.observe_contact(t)

    def __call__(self, t, state):
        if self.scheduler is not None:
            tau = self.scheduler.control(state, self.gains, t)
        else:
            tau = pd_feedforward(self.reference, state, self.gains, t)
        return np.atleast_1d(tau)


def schedule(bundle, state: Optional[SchedulerState], contact_event, t):
    """Functional wrapper: returns (active reference, updated state)."""
    sched = TrajectoryScheduler(bundle)
    if state is not None:
        sched.state = state
    if contact_event is not None:
        sched.observe_contact(contact_event)
    return sched.state.reference, sched.state
