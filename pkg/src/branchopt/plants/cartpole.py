"""Cart-pole with a wall: dynamics, guard, impact map, costs.

State ordering is [x, theta, xdot, thetadot].  The pole mass is a point
mass at the tip; theta = pi is the upright equilibrium with the tip above
the cart.  The wall is vertical at x_wall (to the left of the cart's
workspace); the guard is the horizontal clearance of the pole tip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..contact2d import exact_cone_impulse
from ..hybrid import HybridSystemDef

X_EQ = np.array([0.0, math.pi, 0.0, 0.0])


@dataclass(frozen=True)
class CartPoleParams:
    m_c: float = 0.3
    m_p: float = 1.0
    l: float = 0.4
    gravity: float = 9.81
    mu: float = 0.7
    e: float = 0.8
    x_wall: float = -0.5
    w_cart: float = 0.08
    dt_impact: float = 1e-3

    def __post_init__(self):
        if self.m_c <= 0 or self.m_p <= 0 or self.l <= 0 or self.w_cart <= 0:
            raise ValueError("masses, pole length and cart width must be positive")
        if self.mu < 0 or not 0.0 <= self.e <= 1.0:
            raise ValueError("need mu >= 0 and e in [0, 1]")


@dataclass(frozen=True)
class CartPoleEnv:
    """Per-trial environment: wall position, restitution, friction."""

    x_wall: float = -0.5
    e: float = 0.8
    mu: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.e <= 1.0 or self.mu < 0:
            raise ValueError("need e in [0, 1] and mu >= 0")


def env_from_params(p: CartPoleParams) -> CartPoleEnv:
    return CartPoleEnv(x_wall=p.x_wall, e=p.e, mu=p.mu)


# -- dynamics ---------------------------------------------------------------


def accel(theta, thetadot, tau, fx, fy, p: CartPoleParams):
    """Generalized accelerations (xdd, thdd); dual-safe scalar form.

    Solves M(q) qdd = [1,0]^T tau + Jc^T F - H(q, qd) with the 2x2 mass
    matrix inverted in closed form.
    """
    s, c = ad.sin(theta), ad.cos(theta)
    a = p.m_c + p.m_p
    bm = p.m_p * p.l * c
    cm = p.m_p * p.l**2
    hx = p.m_p * p.l * s * (-(thetadot * thetadot))
    hth = p.m_p * p.l * s * p.gravity
    r0 = tau + fx - hx
    r1 = p.l * c * fx + p.l * s * fy - hth
    det = a * cm - bm * bm
    xdd = (cm * r0 - bm * r1) / det
    thdd = (a * r1 - bm * r0) / det
    return xdd, thdd


def forward_dynamics(q, qd, u, F=None, p: CartPoleParams = None):
    tau = u[0] if np.ndim(u) else u
    fx, fy = (0.0, 0.0) if F is None else (F[0], F[1])
    xdd, thdd = accel(q[1], qd[1], tau, fx, fy, p)
    return np.array([xdd, thdd])


def _accel_float(theta, thetadot, tau, p: CartPoleParams):
    """Free-motion accelerations on plain floats (simulator hot path)."""
    s = math.sin(theta)
    c = math.cos(theta)
    a = p.m_c + p.m_p
    bm = p.m_p * p.l * c
    cm = p.m_p * p.l * p.l
    r0 = tau + p.m_p * p.l * s * thetadot * thetadot
    r1 = -p.m_p * p.l * s * p.gravity
    det = a * cm - bm * bm
    return (cm * r0 - bm * r1) / det, (a * r1 - bm * r0) / det


# -- contact geometry -------------------------------------------------------


def guard(state, env: CartPoleEnv, p: CartPoleParams):
    """Signed horizontal clearance of the pole tip from the wall."""
    return state[0] + p.l * ad.sin(state[1]) - env.x_wall


def contact_jacobian(q, p: CartPoleParams):
    """Rows: normal (horizontal) and tangential (vertical) tip directions."""
    c = math.cos(q[1])
    s = math.sin(q[1])
    return np.array([[1.0, p.l * c], [0.0, p.l * s]])


def mass_matrix(q, p: CartPoleParams):
    c = math.cos(q[1])
    return np.array(
        [
            [p.m_c + p.m_p, p.m_p * p.l * c],
            [p.m_p * p.l * c, p.m_p * p.l**2],
        ]
    )


def bias_vector(q, qd, p: CartPoleParams):
    s = math.sin(q[1])
    return p.m_p * p.l * s * np.array([-qd[1] ** 2, p.gravity])


def tip_position(state, p: CartPoleParams):
    return np.array(
        [state[0] + p.l * math.sin(state[1]), -p.l * math.cos(state[1])]
    )


def tip_velocity(state, p: CartPoleParams):
    return contact_jacobian(state[:2], p) @ state[2:]


# -- impact map -------------------------------------------------------------


def impact_map(state, tau, env: CartPoleEnv, p: CartPoleParams,
               normal_only_restitution=False):
    """Closed-form restitution map at the guard surface.

    Solves the velocity-level contact problem over the assumed impact
    duration with positions frozen.  Returns (post_state, impulse); the
    equivalent constant contact force is impulse / dt_impact.
    """
    q, qd = state[:2], state[2:]
    J = contact_jacobian(q, p)
    Minv = np.linalg.inv(mass_matrix(q, p))
    G = J @ Minv @ J.T
    v = J @ qd
    drift = Minv @ (np.array([tau, 0.0]) - bias_vector(q, qd, p)) * p.dt_impact
    impulse = exact_cone_impulse(
        G, v, env.e, env.mu,
        normal_only_restitution=normal_only_restitution,
        bias=J @ drift,
    )
    qd_post = qd + Minv @ (J.T @ impulse) + drift
    post = np.concatenate([q, qd_post])
    return post, impulse


def _reset(state, u, env, p, normal_only_restitution=False):
    tau = u[0] if np.ndim(u) else u
    return impact_map(state, tau, env, p,
                      normal_only_restitution=normal_only_restitution)


def make_system(p: CartPoleParams = None, env: CartPoleEnv = None) -> HybridSystemDef:
    p = p if p is not None else CartPoleParams()
    env = env if env is not None else env_from_params(p)
    return HybridSystemDef(
        n_q=2,
        n_u=1,
        free_dynamics=lambda q, qd, u: forward_dynamics(q, qd, u, None, p),
        contact_dynamics=lambda q, qd, u, F: forward_dynamics(q, qd, u, F, p),
        guard=lambda state, e: guard(state, e, p),
        reset=lambda state, u, e: _reset(state, u, e, p),
        contact_jacobian=lambda q: contact_jacobian(q, p),
        params=p,
        default_env=env,
        extras={
            "x_eq": X_EQ.copy(),
            "mass_matrix": lambda q: mass_matrix(q, p),
            "fast_derivative": _make_fast_derivative(p),
        },
    )


def _make_fast_derivative(p: CartPoleParams):
    def deriv(state, tau):
        xdd, thdd = _accel_float(state[1], state[3], tau, p)
        return (state[2], state[3], xdd, thdd)

    return deriv


def total_energy(state, p: CartPoleParams):
    """Kinetic + potential energy (drift oracle for integrator tests)."""
    x, th, xd, thd = state
    vtipx = xd + p.l * math.cos(th) * thd
    vtipy = p.l * math.sin(th) * thd
    ke = 0.5 * p.m_c * xd**2 + 0.5 * p.m_p * (vtipx**2 + vtipy**2)
    pe = -p.m_p * p.gravity * p.l * math.cos(th)
    return ke + pe
