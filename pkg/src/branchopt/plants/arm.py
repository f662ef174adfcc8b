"""Planar 3-link arm catching a vertically falling ball.

A desk-scale analog of a torque-controlled manipulator catch: point-mass
links in a vertical plane, a container at the tool flange that must stay
level, and a ball dropping along a fixed vertical line.  The ball mass is
assumed negligible, so contact leaves the arm state unchanged (the ball
attaches) and post-catch dynamics are the free-arm dynamics.

Coordinates: joint angles q (relative), plane axes (horizontal x, vertical
z), gravity along -z.  Absolute link angles are measured from +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..hybrid import HybridSystemDef

__all__ = [
    "ArmCatchParams",
    "fk",
    "tip_positions",
    "translational_jacobian",
    "mass_matrix",
    "bias_vector",
    "forward_dynamics",
    "gravity_torque",
    "total_energy",
    "ball_state",
    "fall_time",
    "level_configuration",
    "make_system",
]


@dataclass
class ArmCatchParams:
    lengths: tuple = (0.35, 0.35, 0.10)
    masses: tuple = (1.0, 1.0, 0.3)  # point masses at link tips
    g: float = 9.81
    p_ball0: tuple = (0.0, 1.0)  # drop line (x) and nominal release height (z)
    v_ball0: tuple = (0.0, 0.0)
    r_ball: float = 0.05
    d: float = 0.20  # half-width of the release-height uncertainty
    eps: float = 1e-3  # orientation / alignment inequality tolerance
    w_a: float = 1e-2  # accumulated joint-acceleration weight
    level_angle: float = 0.0  # absolute tool angle at which the container is level

    def __post_init__(self):
        if len(self.lengths) != 3 or len(self.masses) != 3:
            raise ValueError("three links required")
        if min(self.lengths) <= 0 or min(self.masses) <= 0:
            raise ValueError("lengths and masses must be positive")
        if self.r_ball < 0 or self.d < 0 or self.eps <= 0:
            raise ValueError("r_ball, d must be >= 0 and eps > 0")


def _abs_angles(q):
    a1 = q[0]
    a2 = q[0] + q[1]
    a3 = q[0] + q[1] + q[2]
    return a1, a2, a3


def tip_positions(q, p: ArmCatchParams):
    """Cartesian positions of the three link tips, as ((x, z), ...)."""
    l1, l2, l3 = p.lengths
    a1, a2, a3 = _abs_angles(q)
    p1 = (l1 * ad.cos(a1), l1 * ad.sin(a1))
    p2 = (p1[0] + l2 * ad.cos(a2), p1[1] + l2 * ad.sin(a2))
    p3 = (p2[0] + l3 * ad.cos(a3), p2[1] + l3 * ad.sin(a3))
    return p1, p2, p3


def fk(q, p: ArmCatchParams):
    """End-effector position (x, z) and absolute tool angle."""
    _, _, p3 = tip_positions(q, p)
    a3 = q[0] + q[1] + q[2]
    return p3[0], p3[1], a3


def translational_jacobian(q, p: ArmCatchParams):
    """2x3 Jacobian of the end-effector position wrt joint angles."""
    l1, l2, l3 = p.lengths
    a1, a2, a3 = _abs_angles(q)
    # column j sums the contributions of links j..3
    s = [ad.sin(a1) * l1, ad.sin(a2) * l2, ad.sin(a3) * l3]
    c = [ad.cos(a1) * l1, ad.cos(a2) * l2, ad.cos(a3) * l3]
    row_x = [-(s[0] + s[1] + s[2]), -(s[1] + s[2]), -s[2]]
    row_z = [c[0] + c[1] + c[2], c[1] + c[2], c[2]]
    return row_x, row_z


def ee_velocity(q, qd, p: ArmCatchParams):
    row_x, row_z = translational_jacobian(q, p)
    vx = row_x[0] * qd[0] + row_x[1] * qd[1] + row_x[2] * qd[2]
    vz = row_z[0] * qd[0] + row_z[1] * qd[1] + row_z[2] * qd[2]
    return vx, vz


def _mu(p: ArmCatchParams):
    m1, m2, m3 = p.masses
    # mu[i][j] = total mass carried by both links i and j (point masses at tips)
    t1, t2, t3 = m1 + m2 + m3, m2 + m3, m3
    return ((t1, t2, t3), (t2, t2, t3), (t3, t3, t3))


def _mass_matrix_abs(a, p: ArmCatchParams):
    """3x3 mass matrix in absolute link angles (point masses at tips)."""
    l = p.lengths
    mu = _mu(p)
    M = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            M[i][j] = mu[i][j] * l[i] * l[j] * ad.cos(a[i] - a[j])
    return M


def _bias_abs(a, adot, p: ArmCatchParams):
    """Coriolis/centrifugal + gravity vector in absolute angles."""
    l = p.lengths
    mu = _mu(p)
    carried = (sum(p.masses), p.masses[1] + p.masses[2], p.masses[2])
    out = []
    for i in range(3):
        cor = 0.0
        for j in range(3):
            cor = cor + mu[i][j] * l[i] * l[j] * ad.sin(a[i] - a[j]) * adot[j] * adot[j]
        grav = carried[i] * p.g * l[i] * ad.cos(a[i])
        out.append(cor + grav)
    return out


def _solve3(M, b):
    """Solve a 3x3 linear system by cofactors (works on duals)."""
    (m00, m01, m02), (m10, m11, m12), (m20, m21, m22) = M
    c00 = m11 * m22 - m12 * m21
    c01 = m12 * m20 - m10 * m22
    c02 = m10 * m21 - m11 * m20
    det = m00 * c00 + m01 * c01 + m02 * c02
    c10 = m02 * m21 - m01 * m22
    c11 = m00 * m22 - m02 * m20
    c12 = m01 * m20 - m00 * m21
    c20 = m01 * m12 - m02 * m11
    c21 = m02 * m10 - m00 * m12
    c22 = m00 * m11 - m01 * m10
    x0 = (c00 * b[0] + c10 * b[1] + c20 * b[2]) / det
    x1 = (c01 * b[0] + c11 * b[1] + c21 * b[2]) / det
    x2 = (c02 * b[0] + c12 * b[1] + c22 * b[2]) / det
    return x0, x1, x2


def forward_dynamics(q, qd, tau, p: ArmCatchParams):
    """Joint accelerations from M(q)q̈ + H(q, q̇) = τ.

    Formulated in absolute link angles (where the point-mass chain has a
    simple closed form) and mapped back to joint coordinates.
    """
    a = _abs_angles(q)
    adot = _abs_angles(qd)  # cumulative sums apply to rates as well
    M = _mass_matrix_abs(a, p)
    h = _bias_abs(a, adot, p)
    # generalized force in absolute coordinates: (L^{-T} tau)_i = tau_i - tau_{i+1}
    f = (tau[0] - tau[1], tau[1] - tau[2], tau[2])
    rhs = (f[0] - h[0], f[1] - h[1], f[2] - h[2])
    addot = _solve3(M, rhs)
    # back to joint accelerations: qdd_i = addot_i - addot_{i-1}
    return [addot[0], addot[1] - addot[0], addot[2] - addot[1]]


def mass_matrix(q, p: ArmCatchParams):
    """Joint-space mass matrix M_q = Lᵀ M_a L (numeric)."""
    q = np.asarray(q, dtype=float)
    a = np.cumsum(q)
    Ma = np.array(_mass_matrix_abs(a, p), dtype=float)
    L = np.tril(np.ones((3, 3)))
    return L.T @ Ma @ L


def bias_vector(q, qd, p: ArmCatchParams):
    """Joint-space Coriolis + gravity vector H(q, q̇) (numeric)."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    a, adot = np.cumsum(q), np.cumsum(qd)
    ha = np.array(_bias_abs(a, adot, p), dtype=float)
    L = np.tril(np.ones((3, 3)))
    return L.T @ ha


def gravity_torque(q, p: ArmCatchParams):
    """Joint torque that holds the arm static at q."""
    return bias_vector(q, np.zeros(3), p)


def total_energy(state, p: ArmCatchParams):
    q, qd = np.asarray(state[:3], float), np.asarray(state[3:6], float)
    kin = 0.5 * qd @ mass_matrix(q, p) @ qd
    tips = tip_positions(q, p)
    pot = sum(m * p.g * tip[1] for m, tip in zip(p.masses, tips))
    return float(kin + pot)


# -- ball ballistics -----------------------------------------------------------


def ball_state(t, p0, v0, g=9.81):
    """Position and velocity of the free-falling ball at time t (closed form)."""
    px = p0[0] + v0[0] * t
    pz = p0[1] + v0[1] * t - 0.5 * g * t * t
    return (px, pz), (v0[0], v0[1] - g * t)


def fall_time(z0, z_target, v0z=0.0, g=9.81):
    """Time for the ball to fall from z0 to z_target (positive root)."""
    drop = z0 - z_target
    if drop < 0:
        raise ValueError("target above release height")
    disc = v0z * v0z + 2.0 * g * drop
    return (v0z + math.sqrt(disc)) / g


# -- inverse kinematics for boundary configurations ----------------------------


def level_configuration(p_target, p: ArmCatchParams, elbow_up=True):
    """Joint angles putting the end effector at p_target with a level tool.

    Closed-form two-link inverse kinematics for the wrist, with the third
    joint absorbing the remaining tool angle.
    """
    l1, l2, l3 = p.lengths
    alpha = p.level_angle
    wx = p_target[0] - l3 * math.cos(alpha)
    wz = p_target[1] - l3 * math.sin(alpha)
    r2 = wx * wx + wz * wz
    c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if not -1.0 <= c2 <= 1.0:
        raise ValueError("target out of reach")
    s2 = math.sqrt(1.0 - c2 * c2)
    if elbow_up:
        s2 = -s2
    q2 = math.atan2(s2, c2)
    q1 = math.atan2(wz, wx) - math.atan2(l2 * s2, l1 + l2 * c2)
    q3 = alpha - q1 - q2
    return np.array([q1, q2, q3])


# -- hybrid system definition ---------------------------------------------------


@dataclass
class ArmEnv:
    """Per-trial environment: the ball's release state.

    ``ball_z``/``ball_vz`` hold the ball's current vertical state during
    a rollout (updated externally each step, since the guard callback
    sees only the arm state).
    """

    release_height: float = 1.0
    ball_z: float = 1.0
    ball_vz: float = 0.0


def make_system(p: ArmCatchParams = None) -> HybridSystemDef:
    p = p if p is not None else ArmCatchParams()

    def free_dyn(q, qd, u):
        return forward_dynamics(q, qd, u, p)

    def contact_dyn(q, qd, u, F):
        # negligible ball mass: contact does not alter the arm dynamics
        return forward_dynamics(q, qd, u, p)

    def guard(state, env):
        bz = env.ball_z if env is not None else p.p_ball0[1]
        _, pz, _ = fk(state[:3], p)
        return bz - p.r_ball - pz

    def reset(state, u, env):
        return np.array(state, dtype=float), np.zeros(2)

    def contact_jac(q):
        row_x, row_z = translational_jacobian(np.asarray(q, float), p)
        return np.array([row_z, row_x], dtype=float)

    return HybridSystemDef(
        n_q=3,
        n_u=3,
        free_dynamics=free_dyn,
        contact_dynamics=contact_dyn,
        guard=guard,
        reset=reset,
        contact_jacobian=contact_jac,
        params=p,
        default_env=ArmEnv(release_height=p.p_ball0[1], ball_z=p.p_ball0[1]),
    )
