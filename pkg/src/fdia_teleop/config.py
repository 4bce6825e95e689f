"""INI configuration for runs: defaults table, file loading and merging.

Precedence is command line over file over built-in defaults. Every key a
file may set is listed in :data:`SETTINGS`; anything else is rejected.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .attacker import MODES, SCENARIOS
from .channel import LatencyModel
from .controller import ControllerGains
from .dynamics import ManipulatorParams
from .harness import DEG, AxisSegment, OperatorProfile, RunConfig, WallAxis, WallModel


class ConfigError(ValueError):
    pass


_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _optional_str(text: str) -> str | None:
    return text or None


@dataclass(frozen=True)
class Setting:
    section: str
    key: str
    parse: Callable[[str], Any]
    default: Any
    doc: str


SETTINGS: tuple[Setting, ...] = (
    Setting("params", "m_p", float, 0.5, "handle point mass [kg]"),
    Setting("params", "l2", float, 0.2, "pitch link length [m]"),
    Setting("params", "J1", float, 0.01, "yaw base inertia [kg m^2]"),
    Setting("params", "g", float, 9.81, "gravity [m/s^2]"),
    Setting("params", "b1", float, 0.0, "yaw viscous friction [N m s/rad]"),
    Setting("params", "b2", float, 0.0, "pitch viscous friction [N m s/rad]"),
    Setting("gains", "kp1", float, 5.0, "yaw position gain [N m/rad]"),
    Setting("gains", "kp2", float, 5.0, "pitch position gain [N m/rad]"),
    Setting("gains", "kd1", float, 0.3, "yaw damping gain [N m s/rad]"),
    Setting("gains", "kd2", float, 0.3, "pitch damping gain [N m s/rad]"),
    Setting("gains", "kf1", float, 1.0, "yaw force gain"),
    Setting("gains", "kf2", float, 1.0, "pitch force gain"),
    Setting("gains", "omega_c", float, 30.0, "observer bandwidth [rad/s]"),
    Setting("gains", "torque_limit1", float, 1.3, "yaw actuator limit [N m], 0 disables"),
    Setting("gains", "torque_limit2", float, 2.4, "pitch actuator limit [N m], 0 disables"),
    Setting("gains", "gravity_comp_leader", _bool, True, "leader gravity compensation"),
    Setting("gains", "gravity_comp_follower", _bool, True, "follower gravity compensation"),
    Setting("encoding", "gamma", int, 16, "fractional bits of the fixed-point encoding"),
    Setting("keys", "bits", int, 64, "safe-prime modulus size"),
    Setting("keys", "file", _optional_str, None, "key file (p, q, gen, h, s); empty derives keys from the seed"),
    Setting("scenario", "name", _choice(*SCENARIOS), "normal", "attack scenario"),
    Setting("scenario", "mode", _choice(*MODES), "ciphertext", "what the attacker sees on the wire"),
    Setting("scenario", "duration", float, 60.0, "simulated time [s]"),
    Setting("scenario", "seed", int, 0, "seed for keys, nonces and latency"),
    Setting("scenario", "onset", float, 0.0, "attack start time [s]"),
    Setting("scenario", "one_sided", _choice("", "leader", "follower"), "", "attack only this side's incoming direction"),
    Setting("scenario", "theta1_l0", float, 0.0, "leader initial yaw [rad]"),
    Setting("scenario", "theta1_f0", float, 0.0, "follower initial yaw [rad]"),
    Setting("scenario", "d_correction", _bool, True, "offset the reflection by twice the initial yaw"),
    Setting("scenario", "pitch_lock", _bool, False, "hold both pitch joints rigid"),
    Setting("scenario", "tick", float, 0.02, "control period [s]"),
    Setting("scenario", "dt_phys", float, 0.001, "integrator step [s]"),
    Setting("transport", "kind", _choice("loopback", "udp"), "loopback", "message transport"),
    Setting("transport", "base_delay", float, 10.0, "one-way delay [ms]"),
    Setting("transport", "jitter", float, 0.0, "extra uniform delay up to this [ms]"),
    Setting("transport", "drop_rate", float, 0.0, "datagram loss probability"),
    Setting("transport", "listen", _optional_str, None, "proxy address HOST:PORT for udp"),
    Setting("operator", "pitch_amplitude", float, 0.3, "[rad]"),
    Setting("operator", "pitch_period", float, 10.0, "[s]"),
    Setting("operator", "pitch_start", float, 0.0, "[s]"),
    Setting("operator", "pitch_stop", float, 25.0, "[s]"),
    Setting("operator", "yaw_amplitude", float, 0.3, "[rad]"),
    Setting("operator", "yaw_period", float, 10.0, "[s]"),
    Setting("operator", "yaw_start", float, 25.0, "[s]"),
    Setting("operator", "yaw_stop", float, 55.0, "[s]"),
    Setting("operator", "stiffness", float, 2.0, "hand impedance [N m/rad]"),
    Setting("operator", "damping", float, 0.1, "hand damping [N m s/rad]"),
    Setting("wall", "enabled", _bool, False, "place the obstacle at the follower"),
    Setting("wall", "yaw_angle_deg", float, -5.0, "yaw contact angle, blocks motion below [deg]"),
    Setting("wall", "pitch_angle_deg", float, 3.0, "pitch contact angle, blocks motion above [deg]"),
    Setting("wall", "stiffness", float, 200.0, "[N m/rad]"),
    Setting("wall", "damping", float, 2.0, "[N m s/rad]"),
)

_BY_NAME = {(s.section, s.key): s for s in SETTINGS}
SECTIONS = tuple(dict.fromkeys(s.section for s in SETTINGS))


def defaults() -> dict[tuple[str, str], Any]:
    return {(s.section, s.key): s.default for s in SETTINGS}


def load_file(path: str | Path) -> dict[tuple[str, str], Any]:
    """Parse an INI file, rejecting unknown sections, keys and bad values."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case (J1)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            setting = _BY_NAME.get((section, key))
            if setting is None:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                out[(section, key)] = setting.parse(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}: [{section}] {key}: {exc}") from exc
    return out


def merge(file_values: dict | None = None, cli_values: dict | None = None) -> dict:
    merged = defaults()
    for layer in (file_values or {}, cli_values or {}):
        for k, v in layer.items():
            if k not in merged:
                raise ConfigError(f"unknown setting {k}")
            if v is not None:
                merged[k] = v
    return merged


def to_run_config(values: dict) -> RunConfig:
    """Build a :class:`RunConfig`; validation errors surface as :class:`ConfigError`."""
    v = lambda section, key: values[(section, key)]  # noqa: E731
    try:
        for (section, key), val in values.items():
            if isinstance(val, float) and not math.isfinite(val):
                raise ValueError(f"[{section}] {key} must be finite")
        limits = (v("gains", "torque_limit1"), v("gains", "torque_limit2"))
        return RunConfig(
            scenario=v("scenario", "name"), mode=v("scenario", "mode"),
            transport=v("transport", "kind"), wall=v("wall", "enabled"),
            duration=v("scenario", "duration"), seed=v("scenario", "seed"),
            params=ManipulatorParams(*(v("params", k) for k in ("m_p", "l2", "J1", "g", "b1", "b2"))),
            gains=ControllerGains(*(v("gains", k) for k in ("kp1", "kp2", "kd1", "kd2", "kf1", "kf2"))),
            omega_c=v("gains", "omega_c"), gamma=v("encoding", "gamma"),
            key_bits=v("keys", "bits"), key_file=v("keys", "file"),
            gravity_comp=(v("gains", "gravity_comp_leader"), v("gains", "gravity_comp_follower")),
            pitch_lock=v("scenario", "pitch_lock"), tick=v("scenario", "tick"),
            dt_phys=v("scenario", "dt_phys"),
            latency=LatencyModel(v("transport", "base_delay"), v("transport", "jitter"),
                                 v("transport", "drop_rate")),
            operator=OperatorProfile(
                pitch=AxisSegment(*(v("operator", f"pitch_{k}") for k in ("amplitude", "period", "start", "stop"))),
                yaw=AxisSegment(*(v("operator", f"yaw_{k}") for k in ("amplitude", "period", "start", "stop"))),
                stiffness=v("operator", "stiffness"), damping=v("operator", "damping")),
            wall_model=WallModel(
                yaw=WallAxis(v("wall", "yaw_angle_deg") * DEG, -1, v("wall", "stiffness"), v("wall", "damping")),
                pitch=WallAxis(v("wall", "pitch_angle_deg") * DEG, +1, v("wall", "stiffness"), v("wall", "damping"))),
            theta1_l0=v("scenario", "theta1_l0"), theta1_f0=v("scenario", "theta1_f0"),
            d_correction=v("scenario", "d_correction"), onset=v("scenario", "onset"),
            one_sided=v("scenario", "one_sided") or None,
            torque_limit=None if limits == (0.0, 0.0) else tuple(x if x > 0 else math.inf for x in limits),
            listen=v("transport", "listen"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "on" if value else "off"
    return repr(value) if isinstance(value, float) else str(value)


def render_ini(values: dict) -> str:
    """INI text for ``values``; loading it back yields the same settings."""
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        lines += [f"{s.key} = {_fmt(values[(s.section, s.key)])}" for s in SETTINGS if s.section == section]
        lines.append("")
    return "\n".join(lines)


def defaults_markdown() -> str:
    """The defaults table as it appears in the README."""
    rows = ["| section | key | default | meaning |", "|---|---|---|---|"]
    rows += [f"| {s.section} | {s.key} | {_fmt(s.default) or '(empty)'} | {s.doc} |" for s in SETTINGS]
    return "\n".join(rows)
