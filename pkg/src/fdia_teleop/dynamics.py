"""Yaw-pitch manipulator model shared by the leader and follower robots.

Equations of motion (yaw joint 1 about the vertical, pitch joint 2 about a
horizontal axis, handle modelled as a point mass ``m_p`` at ``l2``)::

    (m_p l2^2 cos^2 th2 + J1) dd_th1 - 2 m_p l2^2 cos th2 sin th2 w1 w2 = tau1 + s1 te1 - b1 w1
    m_p l2^2 dd_th2 + m_p l2^2 cos th2 sin th2 w1^2 + m_p g l2 cos th2   = tau2 + s2 te2 - b2 w2

``te`` is the external (operator or environment) torque and ``(s1, s2)`` the
sign convention of its slot, ``(+1, -1)`` by default.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple


class DivergenceError(RuntimeError):
    """Raised when an integrated state leaves the configured magnitude bound."""

    def __init__(self, message: str, state: "JointState | None" = None):
        super().__init__(message)
        self.state = state


class JointState(NamedTuple):
    theta1: float = 0.0
    theta2: float = 0.0
    omega1: float = 0.0
    omega2: float = 0.0


class TorquePair(NamedTuple):
    tau1: float = 0.0
    tau2: float = 0.0


ZERO_TORQUE = TorquePair(0.0, 0.0)


@dataclass(frozen=True)
class ManipulatorParams:
    m_p: float = 0.5
    l2: float = 0.2
    J1: float = 0.01
    g: float = 9.81
    b1: float = 0.0
    b2: float = 0.0
    ext_sign: tuple[float, float] = (1.0, -1.0)

    def __post_init__(self):
        if not (self.m_p > 0 and self.l2 > 0 and self.J1 > 0):
            raise ValueError("m_p, l2 and J1 must be positive")
        if self.g < 0 or self.b1 < 0 or self.b2 < 0:
            raise ValueError("g, b1 and b2 must be non-negative")
        if any(s not in (1.0, -1.0) for s in self.ext_sign):
            raise ValueError("ext_sign entries must be +1 or -1")

    @property
    def ml2(self) -> float:
        return self.m_p * self.l2 * self.l2


def _accel(p: ManipulatorParams, th2, w1, w2, u1, u2):
    # u1, u2: total generalized force on each joint excluding friction
    c = math.cos(th2)
    s = math.sin(th2)
    ml2 = p.ml2
    a1 = (u1 - p.b1 * w1 + 2.0 * ml2 * c * s * w1 * w2) / (ml2 * c * c + p.J1)
    a2 = (u2 - p.b2 * w2 - ml2 * c * s * w1 * w1 - p.m_p * p.g * p.l2 * c) / ml2
    return a1, a2


def forward_accel(state: JointState, tau_motor: TorquePair, tau_ext: TorquePair,
                  params: ManipulatorParams) -> tuple[float, float]:
    """Joint accelerations for the given state, motor torques and external torques."""
    s1, s2 = params.ext_sign
    u1 = tau_motor[0] + s1 * tau_ext[0]
    u2 = tau_motor[1] + s2 * tau_ext[1]
    return _accel(params, state[1], state[2], state[3], u1, u2)


def gravity_torque(theta2: float, params: ManipulatorParams) -> float:
    """Pitch torque that cancels the gravity load at ``theta2``."""
    return params.m_p * params.g * params.l2 * math.cos(theta2)


def mass_matrix_diag(theta2: float, params: ManipulatorParams) -> tuple[float, float]:
    c = math.cos(theta2)
    return params.ml2 * c * c + params.J1, params.ml2


def energy(state: JointState, params: ManipulatorParams) -> float:
    """Kinetic plus gravitational potential energy."""
    m11, m22 = mass_matrix_diag(state.theta2, params)
    kinetic = 0.5 * m11 * state.omega1 ** 2 + 0.5 * m22 * state.omega2 ** 2
    return kinetic + params.m_p * params.g * params.l2 * math.sin(state.theta2)


def step_rk4(state: JointState, tau_motor: TorquePair, tau_ext: TorquePair,
             params: ManipulatorParams, dt: float, *, bound: float = 1e6,
             pitch_locked: bool = False) -> JointState:
    """Advance ``state`` by one classical Runge-Kutta step with torques held constant.

    With ``pitch_locked`` the pitch joint is held rigidly at its current angle.
    Raises :class:`DivergenceError` if any component leaves ``[-bound, bound]``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    s1, s2 = params.ext_sign
    u1 = tau_motor[0] + s1 * tau_ext[0]
    u2 = tau_motor[1] + s2 * tau_ext[1]
    th1, th2, w1, w2 = state
    if pitch_locked:
        w2 = 0.0

    def f(t2, v1, v2):
        a1, a2 = _accel(params, t2, v1, v2, u1, u2)
        return (a1, 0.0) if pitch_locked else (a1, a2)

    h = 0.5 * dt
    a1_1, a2_1 = f(th2, w1, w2)
    a1_2, a2_2 = f(th2 + h * w2, w1 + h * a1_1, w2 + h * a2_1)
    a1_3, a2_3 = f(th2 + h * (w2 + h * a2_1), w1 + h * a1_2, w2 + h * a2_2)
    a1_4, a2_4 = f(th2 + dt * (w2 + h * a2_2), w1 + dt * a1_3, w2 + dt * a2_3)

    # position derivatives at each stage are the stage velocities
    v1_2, v1_3, v1_4 = w1 + h * a1_1, w1 + h * a1_2, w1 + dt * a1_3
    v2_2, v2_3, v2_4 = w2 + h * a2_1, w2 + h * a2_2, w2 + dt * a2_3

    k = dt / 6.0
    new = JointState(
        th1 + k * (w1 + 2.0 * v1_2 + 2.0 * v1_3 + v1_4),
        th2 + k * (w2 + 2.0 * v2_2 + 2.0 * v2_3 + v2_4),
        w1 + k * (a1_1 + 2.0 * a1_2 + 2.0 * a1_3 + a1_4),
        w2 + k * (a2_1 + 2.0 * a2_2 + 2.0 * a2_3 + a2_4),
    )
    for x in new:
        if not (-bound <= x <= bound):
            raise DivergenceError(f"state left bound {bound:g}: {tuple(new)}", new)
    return new
