"""In-path false-data-injection: affine attacks on the 4-channel signal vectors.

Each communication direction carries ``[theta1, theta2, te1, te2]``. An
attack on one direction is the affine map ``v -> S v + d``. In plaintext mode
the map is applied to the real values; in ciphertext mode only diagonal,
offset-free attacks are possible and each slot's ciphertext is malleated by
the residue of its gain.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .controller import SignalVector
from .crypto import Ciphertext, gain_to_residue, malleate

SCENARIOS = ("normal", "reflection", "scaling")
MODES = ("plaintext", "ciphertext")


class UnsupportedInCiphertextMode(ValueError):
    """The attack needs an additive term or channel mixing, which multiplicative HE cannot carry."""


def _frac_matrix(rows) -> tuple[tuple[Fraction, ...], ...]:
    m = tuple(tuple(Fraction(x) for x in row) for row in rows)
    if len(m) != 4 or any(len(r) != 4 for r in m):
        raise ValueError("S must be 4x4")
    return m


def diag(*gains) -> tuple[tuple[Fraction, ...], ...]:
    return tuple(tuple(Fraction(gains[i]) if i == j else Fraction(0) for j in range(4))
                 for i in range(4))


IDENTITY = diag(1, 1, 1, 1)
YAW_REFLECTION = diag(-1, 1, -1, 1)


@dataclass(frozen=True)
class AffineAttack:
    S: tuple[tuple[Fraction, ...], ...] = IDENTITY
    d: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "S", _frac_matrix(self.S))
        object.__setattr__(self, "d", tuple(float(x) for x in self.d))
        if len(self.d) != 4:
            raise ValueError("d must have 4 entries")

    @classmethod
    def from_numbers(cls, numbers: Sequence[float]) -> "AffineAttack":
        """Build from 16 row-major entries of S followed by the 4 entries of d."""
        if len(numbers) != 20:
            raise ValueError("expected 16 + 4 numbers")
        s = [numbers[4 * i:4 * i + 4] for i in range(4)]
        return cls(s, tuple(numbers[16:]))

    @property
    def is_diagonal(self) -> bool:
        return all(self.S[i][j] == 0 for i in range(4) for j in range(4) if i != j)

    @property
    def is_identity(self) -> bool:
        return self.S == IDENTITY and not any(self.d)

    @property
    def gains(self) -> tuple[Fraction, ...]:
        return tuple(self.S[i][i] for i in range(4))


@dataclass(frozen=True)
class AttackScenario:
    name: str
    leader_dir: AffineAttack = field(default_factory=AffineAttack)    # F2L, reaches the leader
    follower_dir: AffineAttack = field(default_factory=AffineAttack)  # L2F, reaches the follower
    mode: str = "ciphertext"
    onset: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.onset < 0:
            raise ValueError("onset must be non-negative")

    def attack_for(self, direction: str) -> AffineAttack:
        return self.leader_dir if direction == "F2L" else self.follower_dir

    def active(self, t: float) -> bool:
        return t >= self.onset


def scenario_config(name: str, *, mode: str = "ciphertext", theta1_l0: float = 0.0,
                    theta1_f0: float = 0.0, onset: float = 0.0) -> AttackScenario:
    """Named attack scenarios.

    ``reflection`` mirrors the yaw channels about the initial yaw angles; the
    offsets vanish for zero initial conditions.
    """
    if name == "normal":
        return AttackScenario(name, mode=mode, onset=onset)
    if name == "reflection":
        return AttackScenario(
            name,
            leader_dir=AffineAttack(YAW_REFLECTION, (2.0 * theta1_f0, 0.0, 0.0, 0.0)),
            follower_dir=AffineAttack(YAW_REFLECTION, (2.0 * theta1_l0, 0.0, 0.0, 0.0)),
            mode=mode, onset=onset)
    if name == "scaling":
        half = Fraction(1, 2)
        return AttackScenario(
            name,
            leader_dir=AffineAttack(diag(2, 2, 2, 2)),
            follower_dir=AffineAttack(diag(half, half, half, half)),
            mode=mode, onset=onset)
    raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")


def one_sided(scenario: AttackScenario, keep: str) -> AttackScenario:
    """Disable one direction of ``scenario``; ``keep`` is 'leader' or 'follower'."""
    if keep == "leader":
        return AttackScenario(scenario.name + "-leader-only", leader_dir=scenario.leader_dir,
                              mode=scenario.mode, onset=scenario.onset)
    if keep == "follower":
        return AttackScenario(scenario.name + "-follower-only", follower_dir=scenario.follower_dir,
                              mode=scenario.mode, onset=scenario.onset)
    raise ValueError("keep must be 'leader' or 'follower'")


def apply_affine_plaintext(v: Sequence[float], a: AffineAttack) -> SignalVector:
    out = []
    for i in range(4):
        acc = None
        for j in range(4):
            sij = a.S[i][j]
            if sij == 0:
                continue
            term = v[j] if sij == 1 else (-v[j] if sij == -1 else float(sij) * v[j])
            acc = term if acc is None else acc + term
        acc = 0.0 if acc is None else acc
        if a.d[i]:
            acc = acc + a.d[i]
        out.append(acc)
    return SignalVector(*out)


def apply_malleability(cv: Sequence[Ciphertext], a: AffineAttack, p: int) -> tuple[Ciphertext, ...]:
    """Malleate each slot's ciphertext by its diagonal gain using only the modulus ``p``."""
    if not a.is_diagonal or any(a.d):
        raise UnsupportedInCiphertextMode(
            "ciphertext mode supports only diagonal S with d = 0")
    return tuple(c if g == 1 else malleate(c, gain_to_residue(g, p), p)
                 for c, g in zip(cv, a.gains))
