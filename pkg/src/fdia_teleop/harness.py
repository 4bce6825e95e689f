"""Closed-loop leader/follower runs, trace logging and the undetectability verifier.

Tick order (verification mode, one logical timeline)::

    1. both robots: observer update from the torque applied over the last tick
    2. leader sends L2F (through the proxy), then follower sends F2L
    3. leader drains F2L, then follower drains L2F (latest seq wins, else hold)
    4. both robots: four-channel command, actuator saturation
    5. log the row at time t_k
    6. both robots: integrate one control tick with dt_phys RK4 sub-steps;
       operator and wall torques are re-evaluated at every sub-step
"""
from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import crypto
from .attacker import AttackScenario, one_sided, scenario_config
from .channel import (ChannelMessage, LatencyModel, LoopbackTransport, Proxy, Receiver,
                      UdpTransport, pack_cipher, pack_plain, serialize, unpack_cipher,
                      unpack_plain, deserialize)
from .controller import (ControllerGains, ObserverState, SignalVector, estimate_reaction_torque,
                         four_channel_command)
from .dynamics import DivergenceError, JointState, ManipulatorParams, TorquePair, step_rk4

DEG = math.pi / 180.0


# -- operator and environment -------------------------------------------------------

@dataclass(frozen=True)
class AxisSegment:
    amplitude: float  # rad
    period: float     # s
    start: float      # s
    stop: float       # s

    def __post_init__(self):
        if not self.start < self.stop or self.period <= 0:
            raise ValueError("segment needs start < stop and a positive period")

    def reference(self, t: float) -> float:
        if self.start <= t < self.stop:
            return self.amplitude * math.sin(2.0 * math.pi * (t - self.start) / self.period)
        return 0.0


@dataclass(frozen=True)
class OperatorProfile:
    """Scripted hand motion: pitch then yaw sinusoids tracked through an impedance."""
    pitch: AxisSegment = AxisSegment(0.3, 10.0, 0.0, 25.0)
    yaw: AxisSegment = AxisSegment(0.3, 10.0, 25.0, 55.0)
    stiffness: float = 2.0  # N m / rad
    damping: float = 0.1    # N m s / rad

    @property
    def engaged(self) -> tuple[float, float]:
        return min(self.pitch.start, self.yaw.start), max(self.pitch.stop, self.yaw.stop)


def concurrent_profile(duration: float = 60.0) -> OperatorProfile:
    """Both axes moving from t = 0, used where yaw must be excited immediately."""
    return OperatorProfile(pitch=AxisSegment(0.2, 7.0, 0.0, duration),
                           yaw=AxisSegment(0.3, 5.0, 0.0, duration))


@dataclass(frozen=True)
class WallAxis:
    angle: float          # rad
    side: int             # -1 blocks motion below angle, +1 above
    stiffness: float = 200.0
    damping: float = 2.0
    enabled: bool = True

    def __post_init__(self):
        if self.stiffness < 0 or self.damping < 0 or self.side not in (-1, 1):
            raise ValueError("invalid wall axis")


@dataclass(frozen=True)
class WallModel:
    yaw: WallAxis = WallAxis(-5.0 * DEG, -1)
    pitch: WallAxis = WallAxis(3.0 * DEG, +1)


def _axis_reaction(theta: float, omega: float, axis: WallAxis) -> float:
    if not axis.enabled:
        return 0.0
    pen = axis.side * (theta - axis.angle)
    if pen <= 0.0:
        return 0.0
    push = axis.stiffness * pen + axis.damping * axis.side * omega
    return -axis.side * push if push > 0.0 else 0.0


def wall_torque(state: JointState, wall: WallModel, params: ManipulatorParams) -> TorquePair:
    """One-sided spring-damper contact, expressed in the external-torque slots."""
    s1, s2 = params.ext_sign
    return TorquePair(s1 * _axis_reaction(state.theta1, state.omega1, wall.yaw),
                      s2 * _axis_reaction(state.theta2, state.omega2, wall.pitch))


def operator_torque(t: float, profile: OperatorProfile, state: JointState,
                    params: ManipulatorParams) -> TorquePair:
    """Hand torque pulling the leader handle toward the scripted reference."""
    on, off = profile.engaged
    if not on <= t < off:
        return TorquePair(0.0, 0.0)
    k, b = profile.stiffness, profile.damping
    e1 = k * (profile.yaw.reference(t) - state.theta1) - b * state.omega1
    e2 = k * (profile.pitch.reference(t) - state.theta2) - b * state.omega2
    s1, s2 = params.ext_sign
    return TorquePair(s1 * e1, s2 * e2)


# -- configuration ------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    scenario: str = "normal"
    mode: str = "ciphertext"
    transport: str = "loopback"
    wall: bool = False
    duration: float = 60.0
    seed: int = 0
    params: ManipulatorParams = ManipulatorParams()
    gains: ControllerGains = ControllerGains()
    omega_c: float = 30.0
    gamma: int = 16
    key_bits: int = 64
    key_file: str | None = None
    gravity_comp: tuple[bool, bool] = (True, True)  # leader, follower
    pitch_lock: bool = False
    tick: float = 0.02
    dt_phys: float = 0.001
    latency: LatencyModel = LatencyModel()
    operator: OperatorProfile = OperatorProfile()
    wall_model: WallModel = WallModel()
    theta1_l0: float = 0.0
    theta1_f0: float = 0.0
    d_correction: bool = True
    onset: float = 0.0
    one_sided: str | None = None  # keep only 'leader' or 'follower' direction
    attack: AttackScenario | None = None  # explicit override of the named scenario
    torque_limit: tuple[float, float] | None = (1.3, 2.4)
    divergence_bound: float = 1e6
    listen: str | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.transport not in ("loopback", "udp"):
            raise ValueError("transport must be loopback or udp")
        n = self.tick / self.dt_phys
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("tick must be an integer multiple of dt_phys")
        self.build_scenario()

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.tick))

    def build_scenario(self) -> AttackScenario:
        if self.attack is not None:
            sc = self.attack
        else:
            l0, f0 = (self.theta1_l0, self.theta1_f0) if self.d_correction else (0.0, 0.0)
            sc = scenario_config(self.scenario, mode=self.mode, theta1_l0=l0, theta1_f0=f0,
                                 onset=self.onset)
        if self.one_sided:
            sc = one_sided(sc, self.one_sided)
        return sc


# -- trace log ----------------------------------------------------------------------------

_SIG = ("theta1", "theta2", "te1", "te2")
COLUMNS: tuple[str, ...] = (
    ("t", "tick")
    + tuple(f"{side}_{q}" for side in "lf" for q in
            ("theta1", "theta2", "omega1", "omega2", "te1_hat", "te2_hat", "tau1", "tau2",
             "ext1", "ext2"))
    + tuple(f"{side}_rx_{q}" for side in "lf" for q in _SIG)
    + ("l_rx_fresh", "f_rx_fresh", "l_rx_tick", "f_rx_tick", "l_rx_implausible", "f_rx_implausible")
    + tuple(f"{d}_{stage}_{q}" for d in ("l2f", "f2l") for stage in ("pre", "post") for q in _SIG)
)

LEADER_PERCEIVED = ("l_theta1", "l_theta2", "l_te1_hat", "l_te2_hat", "l_rx_theta1", "l_rx_theta2",
                    "l_rx_te1", "l_rx_te2", "l_tau1", "l_tau2")
FOLLOWER_PERCEIVED = ("f_theta1", "f_theta2", "f_te1_hat", "f_te2_hat", "f_rx_theta1",
                      "f_rx_theta2", "f_rx_te1", "f_rx_te2", "f_tau1", "f_tau2")


@dataclass
class TraceLog:
    columns: tuple[str, ...] = COLUMNS
    rows: list[tuple[float, ...]] = field(default_factory=list)
    messages: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[float]:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([repr(float(x)) for x in r])

    @classmethod
    def from_csv(cls, path: str | Path) -> "TraceLog":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = tuple(next(rd))
            rows = [tuple(float(x) for x in r) for r in rd]
        return cls(header, rows)

    def write_messages(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.messages))


# -- robot node --------------------------------------------------------------------

class _Node:
    def __init__(self, side: str, cfg: RunConfig, state: JointState, gravity_comp: bool,
                 pk: crypto.PublicKey | None, sk: crypto.SecretKey | None,
                 enc: crypto.EncodingParams | None):
        self.side = side
        self.cfg = cfg
        self.state = state
        self.gravity_comp = gravity_comp
        self.obs = ObserverState(cfg.omega_c)
        self.te_hat = TorquePair(0.0, 0.0)
        self.applied = TorquePair(0.0, 0.0)
        self.pk, self.sk, self.enc = pk, sk, enc
        self.nonce_rng = random.Random(f"nonce:{side}:{cfg.seed}")
        self.seq = 0
        inbound = "F2L" if side == "l" else "L2F"
        self.receiver = Receiver(inbound)
        self.rx = SignalVector(state.theta1, state.theta2, 0.0, 0.0)
        self.rx_fresh = 0
        self.rx_tick = -1
        self.rx_implausible = 0
        self.rx_pre = self.rx
        self.rx_post = self.rx

    def observe(self) -> None:
        self.obs, te = estimate_reaction_torque(self.state, self.applied, self.cfg.params,
                                                self.obs, self.cfg.tick)
        if self.cfg.pitch_lock:
            te = TorquePair(te.tau1, 0.0)
        self.te_hat = te

    def signal(self) -> SignalVector:
        return SignalVector(self.state.theta1, self.state.theta2, self.te_hat.tau1, self.te_hat.tau2)

    def outgoing(self, tick: int) -> tuple[ChannelMessage, SignalVector]:
        """Message for this tick and the values it carries as decoded by a clean receiver."""
        v = self.signal()
        direction = "L2F" if self.side == "l" else "F2L"
        if self.enc is None:
            payload, pre = pack_plain(v), v
        else:
            ms = [crypto.encode(x, self.enc) for x in v]
            cv = [crypto.encrypt(m, self.pk, crypto.random_nonce(self.pk, self.nonce_rng)) for m in ms]
            payload = pack_cipher(cv)
            pre = SignalVector(*(crypto.decode(m, self.enc)[0] for m in ms))
        msg = ChannelMessage(self.seq, tick, direction, payload)
        self.seq += 1
        return msg, pre

    def decode_payload(self, msg: ChannelMessage) -> tuple[SignalVector, int]:
        if not msg.is_ciphertext:
            return unpack_plain(msg.payload), 0
        vals, flags = [], 0
        for c in unpack_cipher(msg.payload):
            x, bad = crypto.decode(crypto.decrypt(c, self.sk, self.pk), self.enc)
            vals.append(x)
            flags += bad
        return SignalVector(*vals), flags

    def command(self) -> TorquePair:
        tau = four_channel_command(self.signal(), (self.state.omega1, self.state.omega2), self.rx,
                                   self.cfg.gains, self.cfg.params, gravity_comp=self.gravity_comp)
        lim = self.cfg.torque_limit
        if lim is not None:
            tau = TorquePair(min(max(tau.tau1, -lim[0]), lim[0]), min(max(tau.tau2, -lim[1]), lim[1]))
        self.applied = tau
        return tau


def _integrate(node: _Node, t0: float, ext_fn) -> None:
    cfg = node.cfg
    state = node.state
    for j in range(int(round(cfg.tick / cfg.dt_phys))):
        ext = ext_fn(t0 + j * cfg.dt_phys, state)
        state = step_rk4(state, node.applied, ext, cfg.params, cfg.dt_phys,
                         bound=cfg.divergence_bound, pitch_locked=cfg.pitch_lock)
    node.state = state


def _keys(cfg: RunConfig):
    if cfg.mode != "ciphertext":
        return None, None, None
    if cfg.key_file:
        pk, sk = crypto.read_key_file(cfg.key_file)
        if sk is None:
            raise ValueError("ciphertext runs need a key file with the secret exponent")
    else:
        pk, sk = crypto.keygen(cfg.key_bits, cfg.seed)
    return pk, sk, crypto.EncodingParams(cfg.gamma, pk.p)


def _simulate(cfg: RunConfig) -> TraceLog:
    pk, sk, enc = _keys(cfg)
    scenario = cfg.build_scenario()
    proxy = Proxy(scenario, pk.p if pk else None, cfg.tick)
    if cfg.transport == "loopback":
        transport = LoopbackTransport(cfg.latency, cfg.seed, proxy.forward_bytes)
    else:
        port = int(cfg.listen.rpartition(":")[2]) if cfg.listen else 0
        host = cfg.listen.rpartition(":")[0] if cfg.listen else "127.0.0.1"
        transport = UdpTransport(proxy, cfg.latency, cfg.seed, host=host, proxy_port=port)

    leader = _Node("l", cfg, JointState(cfg.theta1_l0, 0.0, 0.0, 0.0), cfg.gravity_comp[0], pk, sk, enc)
    follower = _Node("f", cfg, JointState(cfg.theta1_f0, 0.0, 0.0, 0.0), cfg.gravity_comp[1], pk, sk, enc)
    pre_by_seq: dict[tuple[str, int], SignalVector] = {}
    log = TraceLog()
    log.meta = {"scenario": scenario.name, "mode": cfg.mode, "transport": cfg.transport,
                "seed": cfg.seed, "ticks": cfg.n_ticks, "diverged": False,
                "implausible_events": 0, "p": pk.p if pk else None}
    tick_us = int(round(cfg.tick * 1e6))
    params, wall = cfg.params, cfg.wall_model
    op_fn = lambda t, s: operator_torque(t, cfg.operator, s, params)  # noqa: E731
    wall_fn = (lambda t, s: wall_torque(s, wall, params)) if cfg.wall else (lambda t, s: TorquePair(0.0, 0.0))

    try:
        for k in range(cfg.n_ticks):
            t = k * cfg.tick
            now = k * tick_us
            leader.observe()
            follower.observe()
            for node, direction in ((leader, "L2F"), (follower, "F2L")):
                msg, pre = node.outgoing(k)
                pre_by_seq[(direction, msg.seq)] = pre
                raw = serialize(msg)
                out = transport.send(direction, raw, now)
                log.messages.append(f"{k} {direction} pre {raw.hex()}")
                if out is not None and out != raw:
                    log.messages.append(f"{k} {direction} post {out.hex()}")
            for node in (leader, follower):
                direction = node.receiver.direction
                fresh = node.receiver.accept(transport.receive(direction, now))
                node.rx_fresh, node.rx_implausible = 0, 0
                if fresh is not None:
                    node.rx, flags = node.decode_payload(fresh)
                    node.rx_fresh, node.rx_implausible = 1, flags
                    node.rx_tick = fresh.tick
                    node.rx_pre = pre_by_seq.pop((direction, fresh.seq))
                    node.rx_post = node.rx
                    log.meta["implausible_events"] += flags
            leader.command()
            follower.command()
            ext_l = op_fn(t, leader.state)
            ext_f = wall_fn(t, follower.state)
            log.rows.append(_row(t, k, leader, follower, ext_l, ext_f))
            _integrate(leader, t, op_fn)
            _integrate(follower, t, wall_fn)
    except DivergenceError as exc:
        log.meta["diverged"] = True
        log.meta["divergence"] = str(exc)
    finally:
        log.meta["stale"] = leader.receiver.stale + follower.receiver.stale
        log.meta["dropped"] = transport.dropped
        log.meta["rx_ticks"] = {"l": leader.receiver.ticks_seen, "f": follower.receiver.ticks_seen}
        transport.close()
    return log


def _row(t, k, leader: _Node, follower: _Node, ext_l, ext_f) -> tuple[float, ...]:
    vals: list[float] = [t, float(k)]
    for node, ext in ((leader, ext_l), (follower, ext_f)):
        s = node.state
        vals += [s.theta1, s.theta2, s.omega1, s.omega2, node.te_hat.tau1, node.te_hat.tau2,
                 node.applied.tau1, node.applied.tau2, ext.tau1, ext.tau2]
    vals += list(leader.rx) + list(follower.rx)
    vals += [float(leader.rx_fresh), float(follower.rx_fresh),
             float(leader.rx_tick), float(follower.rx_tick), float(leader.rx_implausible), float(follower.rx_implausible)]
    # L2F is delivered to the follower, F2L to the leader
    vals += list(follower.rx_pre) + list(follower.rx_post) + list(leader.rx_pre) + list(leader.rx_post)
    return tuple(vals)


def run_scenario(cfg: RunConfig, with_baseline: bool = False) -> tuple[TraceLog, TraceLog | None]:
    """Simulate ``cfg``; optionally also the no-attack run with identical settings."""
    attacked = _simulate(cfg)
    baseline = None
    if with_baseline:
        baseline = _simulate(replace(cfg, scenario="normal", attack=None, one_sided=None))
    return attacked, baseline


# -- verifier ------------------------------------------------------------------------------

class LogShapeError(ValueError):
    pass


@dataclass
class VerifyReport:
    passed: bool
    leader_pass: bool
    follower_pass: bool
    follower_transform: str
    tol: float
    max_diff: dict[str, float]
    follower_diff: dict[str, float]
    first_violation_time: float | None
    ticks_compared: int
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"result": "PASS" if self.passed else "FAIL", "leader_pass": self.leader_pass,
                "follower_pass": self.follower_pass, "follower_transform": self.follower_transform,
                "tol": self.tol, "max_diff": self.max_diff, "follower_diff": self.follower_diff,
                "first_violation_time": self.first_violation_time,
                "ticks_compared": self.ticks_compared, "notes": self.notes}


_YAW_ODD = {"f_theta1": "f", "f_rx_theta1": "l", "f_te1_hat": None, "f_rx_te1": None, "f_tau1": None}


def verify_undetectable(baseline: TraceLog, attacked: TraceLog, tol: float = 1e-9) -> VerifyReport:
    """Compare everything the leader perceives, tick by tick, plus the follower mirror check.

    The follower-side clause passes when the attacked follower trace equals the
    baseline either unchanged or mirrored in yaw about the initial yaw angles.
    """
    for name in LEADER_PERCEIVED + FOLLOWER_PERCEIVED + ("t",):
        if name not in baseline.columns or name not in attacked.columns:
            raise LogShapeError(f"column {name!r} missing")
    notes = []
    n = min(len(baseline), len(attacked))
    if n == 0:
        raise LogShapeError("empty trace")
    if len(baseline) != len(attacked):
        notes.append(f"tick count differs: baseline {len(baseline)}, attacked {len(attacked)}")
    tb, ta = baseline.column("t")[:n], attacked.column("t")[:n]
    if any(abs(x - y) > 1e-12 for x, y in zip(tb, ta)):
        raise LogShapeError("time bases differ")

    max_diff = {}
    first_bad = None
    for name in LEADER_PERCEIVED:
        b, a = baseline.column(name)[:n], attacked.column(name)[:n]
        worst = 0.0
        for i, (x, y) in enumerate(zip(b, a)):
            dv = abs(x - y)
            if not dv <= tol:  # catches nan
                dv = dv if dv == dv else math.inf
                if first_bad is None or tb[i] < first_bad:
                    first_bad = tb[i]
            worst = max(worst, dv)
        max_diff[name] = worst
    leader_ok = all(v <= tol for v in max_diff.values()) and len(baseline) == len(attacked)

    centers = {"l": baseline.column("l_theta1")[0], "f": baseline.column("f_theta1")[0]}
    best = None
    for label, mirror in (("identity", False), ("yaw-reflection", True)):
        diffs = {}
        for name in FOLLOWER_PERCEIVED:
            b, a = baseline.column(name)[:n], attacked.column(name)[:n]
            if mirror and name in _YAW_ODD:
                c = _YAW_ODD[name]
                b = [2.0 * centers[c] - x for x in b] if c else [-x for x in b]
            d = max((abs(x - y) for x, y in zip(b, a)), default=0.0)
            diffs[name] = d if d == d else math.inf
        worst = max(diffs.values())
        if best is None or worst < max(best[1].values()):
            best = (label, diffs)
    follower_ok = max(best[1].values()) <= tol and len(baseline) == len(attacked)
    return VerifyReport(leader_ok and follower_ok, leader_ok, follower_ok, best[0], tol,
                        max_diff, best[1], first_bad, n, notes)


# -- analysis helpers ----------------------------------------------------------------------

def mode_equivalence(log: TraceLog, scenario: AttackScenario, tick: float = 0.02) -> dict:
    """Check every delivered ciphertext-mode message against the plaintext affine attack.

    Returns counts of compared, bit-equal and parity-explained ticks.
    """
    from .attacker import apply_affine_plaintext

    compared = equal = parity = 0
    mismatches = []
    for direction, prefix, rx in (("L2F", "l2f", "f"), ("F2L", "f2l", "l")):
        attack = scenario.attack_for(direction)
        fresh = log.column(f"{rx}_rx_fresh")
        flags = log.column(f"{rx}_rx_implausible")
        sent = log.column(f"{rx}_rx_tick")
        pre = list(zip(*(log.column(f"{prefix}_pre_{q}") for q in _SIG)))
        post = list(zip(*(log.column(f"{prefix}_post_{q}") for q in _SIG)))
        for i in range(len(log)):
            if not fresh[i]:
                continue
            compared += 1
            expect = pre[i] if not scenario.active(sent[i] * tick) else \
                tuple(apply_affine_plaintext(pre[i], attack))
            if all(x == y for x, y in zip(expect, post[i])):
                equal += 1
            elif flags[i]:
                parity += 1
            else:
                mismatches.append((i, direction))
    return {"compared": compared, "equal": equal, "parity_events": parity,
            "unexplained": len(mismatches), "mismatches": mismatches[:10]}


def export_csv(log: TraceLog, path: str | Path) -> None:
    log.to_csv(path)


def emit_plots(log: TraceLog, path: str | Path, title: str = "") -> list[Path]:
    """Write a 2x2 panel (yaw/pitch angle and estimated reaction torque, leader vs follower)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    t = log.column("t")
    fig, axes = plt.subplots(2, 2, figsize=(10, 6), sharex=True)
    panels = [("theta1", "yaw angle [deg]", True), ("te1_hat", "yaw reaction torque [N m]", False),
              ("theta2", "pitch angle [deg]", True), ("te2_hat", "pitch reaction torque [N m]", False)]
    for ax, (q, label, is_angle) in zip(axes.flat, panels):
        scale = 1.0 / DEG if is_angle else 1.0
        ax.plot(t, [x * scale for x in log.column(f"l_{q}")], label="leader")
        ax.plot(t, [x * scale for x in log.column(f"f_{q}")], "--", label="follower")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("time [s]")
    axes[0][0].legend(loc="upper right")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    target = out / "panels.png"
    fig.savefig(target, dpi=100)
    plt.close(fig)
    return [target]


def message_log_lines(log: TraceLog) -> list[str]:
    return list(log.messages)


def validate_logged_message(hex_text: str) -> ChannelMessage:
    return deserialize(bytes.fromhex(hex_text))
