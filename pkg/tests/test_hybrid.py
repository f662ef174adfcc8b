"""Hybrid-system abstraction: flow, guard, reset admissibility."""

import math

import numpy as np
import pytest

from branchopt import hybrid
from branchopt.plants import cartpole


@pytest.fixture
def sys_def():
    return cartpole.make_system()


def test_state_derivative_layout(sys_def):
    state = np.array([0.1, 3.0, -0.2, 0.5])
    ds = sys_def.state_derivative(state, np.array([0.3]))
    assert ds.shape == (4,)
    # position derivatives are the velocities
    assert ds[:2] == pytest.approx(state[2:])


def test_euler_step_matches_manual(sys_def):
    state = np.array([0.0, 3.1, 0.1, -0.4])
    u = np.array([0.2])
    dt = 1e-3
    qdd = sys_def.free_dynamics(state[:2], state[2:], u)
    expected = state + dt * np.concatenate([state[2:], qdd])
    assert hybrid.euler_step(sys_def, state, u, dt) == pytest.approx(expected)


def test_guard_positive_in_free_motion(sys_def):
    # upright pole at the origin, wall at -0.5: clearly separated
    assert hybrid.guard_eval(sys_def, cartpole.X_EQ) > 0


def test_guard_zero_at_touching_configuration(sys_def):
    p = sys_def.params
    env = sys_def.default_env
    # place the cart so the tip sits exactly on the wall: x + l sin(th) = x_wall
    theta = 3.6
    x = env.x_wall - p.l * math.sin(theta)
    state = np.array([x, theta, 0.0, 0.0])
    assert hybrid.guard_eval(sys_def, state) == pytest.approx(0.0, abs=1e-12)


def test_reset_requires_guard_surface(sys_def):
    with pytest.raises(hybrid.ResetError):
        hybrid.reset_eval(sys_def, cartpole.X_EQ)


def test_reset_freezes_positions_and_flips_normal_velocity(sys_def):
    p = sys_def.params
    env = sys_def.default_env
    theta = 3.6
    x = env.x_wall - p.l * math.sin(theta)
    pre = np.array([x, theta, -1.0, 2.0])
    g_pre = hybrid.guard_eval(sys_def, pre)
    assert abs(g_pre) < 1e-9
    post = hybrid.reset_eval(sys_def, pre)
    # positions unchanged
    assert post[:2] == pytest.approx(pre[:2])
    # normal (guard-direction) velocity reverses with restitution e
    J = sys_def.contact_jacobian(pre[:2])
    vn_pre = float(J[0] @ pre[2:])
    vn_post = float(J[0] @ post[2:])
    assert vn_pre < 0  # approaching
    assert vn_post == pytest.approx(-env.e * vn_pre, rel=1e-6)


def test_reset_tolerance_band(sys_def):
    p = sys_def.params
    env = sys_def.default_env
    theta = 3.6
    x = env.x_wall - p.l * math.sin(theta) + 0.5 * hybrid.GUARD_TOL
    pre = np.array([x, theta, -1.0, 0.0])
    post = hybrid.reset_eval(sys_def, pre)  # within tolerance: allowed
    assert post.shape == (4,)


def test_extras_provide_mass_matrix(sys_def):
    mm = sys_def.extras["mass_matrix"](np.array([0.0, 3.0]))
    assert mm.shape == (2, 2)
    assert mm == pytest.approx(mm.T)
