"""Sampled test for automorphisms of the manipulator dynamics.

A candidate acts diagonally on joint angles (about fixed centers), on joint
rates and on motor torques. It is an automorphism when the accelerations of
the transformed state and input equal the transformed accelerations for every
sampled point. Only such candidates admit an attack that leaves no trace in
what the other side can observe.
"""
from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass

from .dynamics import JointState, ManipulatorParams, TorquePair, ZERO_TORQUE, forward_accel, gravity_torque

THETA_BOX = math.pi
OMEGA_BOX = 5.0
TAU_BOX = 2.0


@dataclass(frozen=True)
class CandidateTransform:
    phi_x: tuple[float, float]
    phi_u: tuple[float, float]
    centers: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "phi_x", tuple(float(v) for v in self.phi_x))
        object.__setattr__(self, "phi_u", tuple(float(v) for v in self.phi_u))
        object.__setattr__(self, "centers", tuple(float(v) for v in self.centers))
        if len(self.phi_x) != 2 or len(self.phi_u) != 2 or len(self.centers) != 2:
            raise ValueError("phi_x, phi_u and centers need two entries each")
        if any(v == 0 or not math.isfinite(v) for v in self.phi_x + self.phi_u):
            raise ValueError("diagonal entries must be finite and nonzero")
        if not all(math.isfinite(c) for c in self.centers):
            raise ValueError("centers must be finite")

    @classmethod
    def diagonal(cls, a1: float, a2: float, centers=(0.0, 0.0)) -> "CandidateTransform":
        """Same diagonal on states and torques."""
        return cls((a1, a2), (a1, a2), centers)

    @property
    def label(self) -> str:
        return f"diag({self.phi_x[0]:g},{self.phi_x[1]:g})"

    def map_state(self, x: JointState) -> JointState:
        (a1, a2), (c1, c2) = self.phi_x, self.centers
        return JointState(a1 * (x.theta1 - c1) + c1, a2 * (x.theta2 - c2) + c2,
                          a1 * x.omega1, a2 * x.omega2)

    def map_torque(self, tau: TorquePair) -> TorquePair:
        return TorquePair(self.phi_u[0] * tau[0], self.phi_u[1] * tau[1])


@dataclass(frozen=True)
class AutomorphismReport:
    passed: bool
    max_residual: float
    samples: int
    gravity_compensated: bool
    tol: float = 1e-9

    def as_dict(self) -> dict:
        return {"pass": self.passed, "max_residual": self.max_residual,
                "samples": self.samples, "gravity_compensated": self.gravity_compensated,
                "tol": self.tol}


@dataclass(frozen=True)
class SamplingBox:
    theta: float = THETA_BOX
    omega: float = OMEGA_BOX
    tau: float = TAU_BOX
    theta2: float | None = None  # narrower pitch range, defaults to ``theta``

    def draw(self, rng: random.Random) -> tuple[JointState, TorquePair]:
        t2 = self.theta if self.theta2 is None else self.theta2
        u = rng.uniform
        x = JointState(u(-self.theta, self.theta), u(-t2, t2),
                       u(-self.omega, self.omega), u(-self.omega, self.omega))
        return x, TorquePair(u(-self.tau, self.tau), u(-self.tau, self.tau))


def _accel(x: JointState, tau: TorquePair, params: ManipulatorParams, gravity_comp: bool):
    if gravity_comp:
        tau = TorquePair(tau[0], tau[1] + gravity_torque(x.theta2, params))
    return forward_accel(x, tau, ZERO_TORQUE, params)


def _residual(cand: CandidateTransform, x: JointState, tau: TorquePair,
              params: ManipulatorParams, gravity_comp: bool) -> float:
    a = _accel(x, tau, params, gravity_comp)
    a_t = _accel(cand.map_state(x), cand.map_torque(tau), params, gravity_comp)
    return max(abs(a_t[i] - cand.phi_x[i] * a[i]) for i in range(2))


def check_automorphism(cand: CandidateTransform, params: ManipulatorParams | None = None,
                       gravity_comp: bool = False, n_samples: int = 1000, tol: float = 1e-9,
                       seed: int = 0, box: SamplingBox | None = None) -> AutomorphismReport:
    """Largest acceleration mismatch over ``n_samples`` seeded random points."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    params = params or ManipulatorParams()
    box = box or SamplingBox()
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(n_samples):
        x, tau = box.draw(rng)
        worst = max(worst, _residual(cand, x, tau, params, gravity_comp))
    return AutomorphismReport(worst < tol, worst, n_samples, gravity_comp, tol)


def enumerate_sign_candidates(params: ManipulatorParams | None = None, gravity_comp: bool = False,
                              n_samples: int = 1000, tol: float = 1e-9, seed: int = 0
                              ) -> list[tuple[CandidateTransform, AutomorphismReport]]:
    out = []
    for a1, a2 in itertools.product((1.0, -1.0), repeat=2):
        cand = CandidateTransform.diagonal(a1, a2)
        out.append((cand, check_automorphism(cand, params, gravity_comp, n_samples, tol, seed)))
    return out


def check_per_joint(cand: CandidateTransform, params: ManipulatorParams | None = None,
                    gravity_comp: bool = False, n_samples: int = 1000, tol: float = 1e-9,
                    seed: int = 0) -> tuple[AutomorphismReport, AutomorphismReport]:
    """Test each joint's block alone, the other joint frozen at a sampled angle.

    Freezing drops the velocity coupling between the joints, so this agrees
    with the coupled test for sign candidates but is blind to coupling terms
    that a non-unit gain would distort.
    """
    params = params or ManipulatorParams()
    rng = random.Random(seed)
    box = SamplingBox()
    reports = []
    for joint in (0, 1):
        block = CandidateTransform(
            tuple(cand.phi_x[i] if i == joint else 1.0 for i in range(2)),
            tuple(cand.phi_u[i] if i == joint else 1.0 for i in range(2)),
            cand.centers)
        worst = 0.0
        for _ in range(n_samples):
            x, tau = box.draw(rng)
            frozen = x._replace(omega2=0.0) if joint == 0 else x._replace(omega1=0.0)
            a = _accel(frozen, tau, params, gravity_comp)
            a_t = _accel(block.map_state(frozen), block.map_torque(tau), params, gravity_comp)
            worst = max(worst, abs(a_t[joint] - block.phi_x[joint] * a[joint]))
        reports.append(AutomorphismReport(worst < tol, worst, n_samples, gravity_comp, tol))
    return reports[0], reports[1]


def residual_profile(cand: CandidateTransform, pitch_ranges, params: ManipulatorParams | None = None,
                     gravity_comp: bool = False, n_samples: int = 1000, seed: int = 0) -> list[float]:
    """Max residual on nested boxes that differ only in the sampled pitch range.

    The same seed is used for every box so each draw is a rescaled copy of the
    previous one.
    """
    return [check_automorphism(cand, params, gravity_comp, n_samples, 1.0, seed,
                               SamplingBox(theta2=r)).max_residual
            for r in pitch_ranges]

