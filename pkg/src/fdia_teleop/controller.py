"""Four-channel bilateral controller and momentum-based reaction-torque observer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .dynamics import JointState, ManipulatorParams, TorquePair, gravity_torque, mass_matrix_diag

import math


class SignalVector(NamedTuple):
    """One direction's payload, ordered ``[theta1, theta2, te1, te2]``."""
    theta1: float = 0.0
    theta2: float = 0.0
    tau_e1: float = 0.0
    tau_e2: float = 0.0


@dataclass(frozen=True)
class ControllerGains:
    kp1: float = 5.0
    kp2: float = 5.0
    kd1: float = 0.3
    kd2: float = 0.3
    kf1: float = 1.0
    kf2: float = 1.0

    def __post_init__(self):
        if min(self.kd1, self.kd2, self.kf1, self.kf2) < 0:
            raise ValueError("gains must be non-negative")
        if not (self.kp1 > 0 and self.kp2 > 0):
            raise ValueError("position gains must be positive")


@dataclass(frozen=True)
class ObserverState:
    """Generalized-momentum disturbance observer state.

    ``model_momentum`` is p(0) plus the integral of the modelled momentum rate,
    ``residual`` the low-passed generalized external force (before the slot
    sign convention is applied).
    """
    omega_c: float = 30.0
    model_momentum: tuple[float, float] = (0.0, 0.0)
    residual: tuple[float, float] = (0.0, 0.0)
    last_rate: tuple[float, float] = (0.0, 0.0)
    started: bool = False

    def __post_init__(self):
        if not self.omega_c > 0:
            raise ValueError("omega_c must be positive")

    def estimate(self, params: ManipulatorParams) -> TorquePair:
        s1, s2 = params.ext_sign
        return TorquePair(s1 * self.residual[0], s2 * self.residual[1])


def _momentum(state: JointState, params: ManipulatorParams) -> tuple[float, float]:
    m11, m22 = mass_matrix_diag(state.theta2, params)
    return m11 * state.omega1, m22 * state.omega2


def _momentum_rate_bias(state: JointState, params: ManipulatorParams) -> tuple[float, float]:
    # dp/dt = tau + beta(q, w) + external; beta collects friction, the pitch
    # centrifugal term and gravity
    c, s = math.cos(state.theta2), math.sin(state.theta2)
    b1 = -params.b1 * state.omega1
    b2 = (-params.b2 * state.omega2 - params.ml2 * c * s * state.omega1 * state.omega1
          - params.m_p * params.g * params.l2 * c)
    return b1, b2


def estimate_reaction_torque(state: JointState, tau_cmd: TorquePair, params: ManipulatorParams,
                             obs: ObserverState, dt: float) -> tuple[ObserverState, TorquePair]:
    """One observer update at a control tick.

    ``tau_cmd`` is the motor torque that was applied over the interval that
    just ended. The estimate follows the true external torque through a
    first-order lag of bandwidth ``obs.omega_c``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    p = _momentum(state, params)
    beta = _momentum_rate_bias(state, params)
    if not obs.started:
        new = ObserverState(obs.omega_c, p, (0.0, 0.0), beta, True)
        return new, new.estimate(params)
    k = obs.omega_c
    model = tuple(
        obs.model_momentum[i]
        + (tau_cmd[i] + 0.5 * (obs.last_rate[i] + beta[i]) + obs.residual[i]) * dt
        for i in range(2))
    residual = tuple(k * (p[i] - model[i]) for i in range(2))
    new = ObserverState(obs.omega_c, model, residual, beta, True)
    return new, new.estimate(params)


def four_channel_command(local: SignalVector, local_rates: tuple[float, float],
                         remote: SignalVector, gains: ControllerGains,
                         params: ManipulatorParams, *, gravity_comp: bool = True) -> TorquePair:
    """Motor torques for one robot from its own and its counterpart's signals.

    Per joint: ``kp (theta_remote - theta) - kd w + kf s (te_local + te_remote)``
    where ``s`` is the slot's external-torque sign. In the physical sense the
    force channel drives the operator and environment torques to balance,
    so a follower blocked by an obstacle pushes back on the operator.
    """
    s1, s2 = params.ext_sign
    tau1 = (gains.kp1 * (remote.theta1 - local.theta1) - gains.kd1 * local_rates[0]
            + gains.kf1 * (s1 * (local.tau_e1 + remote.tau_e1)))
    tau2 = (gains.kp2 * (remote.theta2 - local.theta2) - gains.kd2 * local_rates[1]
            + gains.kf2 * (s2 * (local.tau_e2 + remote.tau_e2)))
    if gravity_comp:
        tau2 += gravity_torque(local.theta2, params)
    return TorquePair(tau1, tau2)
