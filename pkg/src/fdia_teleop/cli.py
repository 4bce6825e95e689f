"""Command line: ``fdia-teleop run | verify | check-automorphism | keygen | inspect-wire | proxy``.

Exit codes: 0 success or PASS, 2 undetectability FAIL, 3 runtime error,
64 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as cfgmod
from . import crypto
from .attackability import CandidateTransform, check_automorphism, enumerate_sign_candidates
from .channel import Proxy, UdpProxy, WireError, deserialize, parse_addr, unpack_plain
from .harness import LogShapeError, TraceLog, emit_plots, run_scenario, verify_undetectable

EXIT_OK, EXIT_FAIL, EXIT_ERROR, EXIT_USAGE = 0, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True) if args.json else text)


# -- run ---------------------------------------------------------------------------

_RUN_OVERRIDES = {
    "scenario": ("scenario", "name"), "mode": ("scenario", "mode"),
    "transport": ("transport", "kind"), "wall": ("wall", "enabled"),
    "duration": ("scenario", "duration"), "seed": ("scenario", "seed"),
    "onset": ("scenario", "onset"), "one_sided": ("scenario", "one_sided"),
    "listen": ("transport", "listen"), "key_file": ("keys", "file"),
}


def _merged(args) -> dict:
    file_values = cfgmod.load_file(args.config) if args.config else {}
    cli = {key: getattr(args, name) for name, key in _RUN_OVERRIDES.items()}
    return cfgmod.merge(file_values, cli)


def cmd_run(args) -> int:
    values = _merged(args)
    if args.show_config:
        sys.stdout.write(cfgmod.render_ini(values))
        return EXIT_OK
    cfg = cfgmod.to_run_config(values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log, base = run_scenario(cfg, with_baseline=args.with_baseline)
    log.to_csv(out / "trace.csv")
    log.write_messages(out / "messages.log")
    summary = {k: v for k, v in log.meta.items() if k != "rx_ticks"}
    summary["rows"] = len(log)
    summary["files"] = ["trace.csv", "messages.log"]
    if base is not None:
        base.to_csv(out / "baseline.csv")
        summary["files"].append("baseline.csv")
        summary["verify"] = verify_undetectable(base, log, args.tol).as_dict()
    if args.plots:
        summary["files"] += [p.name for p in emit_plots(log, out, f"{cfg.scenario} / {cfg.mode}")]
    summary["files"].append("summary.json")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    text = f"{len(log)} ticks written to {out}"
    if "verify" in summary:
        text += f"; against baseline: {summary['verify']['result']}"
    if log.meta["diverged"]:
        text += f"; diverged: {log.meta['divergence']}"
    _emit(args, summary, text)
    return EXIT_ERROR if log.meta["diverged"] else EXIT_OK


# -- verify ------------------------------------------------------------------------

def cmd_verify(args) -> int:
    rep = verify_undetectable(TraceLog.from_csv(args.baseline), TraceLog.from_csv(args.attacked), args.tol)
    worst = max(rep.max_diff.values())
    text = (f"{'PASS' if rep.passed else 'FAIL'}: leader max diff {worst:.3g}, follower "
            f"{rep.follower_transform} max diff {max(rep.follower_diff.values()):.3g}, tol {args.tol:g}")
    if rep.first_violation_time is not None:
        text += f", first violation at t = {rep.first_violation_time:.2f} s"
    for note in rep.notes:
        text += f"\n  {note}"
    _emit(args, rep.as_dict(), text)
    return EXIT_OK if rep.passed else EXIT_FAIL


# -- check-automorphism --------------------------------------------------------------

def cmd_check(args) -> int:
    if args.candidate:
        try:
            a1, a2 = (float(x) for x in args.candidate.split(","))
            cands = [CandidateTransform.diagonal(a1, a2)]
        except ValueError as exc:
            raise UsageError(f"--candidate: {exc}") from exc
        results = [(c, check_automorphism(c, gravity_comp=args.gravity_comp, n_samples=args.samples,
                                          tol=args.tol, seed=args.seed)) for c in cands]
    else:
        results = enumerate_sign_candidates(gravity_comp=args.gravity_comp, n_samples=args.samples,
                                            tol=args.tol, seed=args.seed)
    rows = [f"{'candidate':<14}{'result':<8}{'max residual':>16}"]
    rows += [f"{c.label:<14}{'pass' if r.passed else 'fail':<8}{r.max_residual:>16.3e}" for c, r in results]
    rows.append(f"gravity compensation {'on' if args.gravity_comp else 'off'}, "
                f"{args.samples} samples, tol {args.tol:g}")
    payload = {"results": [dict(candidate=c.label, **r.as_dict()) for c, r in results]}
    _emit(args, payload, "\n".join(rows))
    return EXIT_OK


# -- keygen --------------------------------------------------------------------------

def cmd_keygen(args) -> int:
    pk, sk = crypto.keygen(args.bits, args.seed)
    crypto.write_key_file(args.out, pk, None if args.public_only else sk)
    _emit(args, {"p": str(pk.p), "q": str(pk.q), "gen": str(pk.gen), "h": str(pk.h), "out": args.out},
          f"wrote {args.bits}-bit key to {args.out} (p = {pk.p})")
    return EXIT_OK


# -- inspect-wire ----------------------------------------------------------------------

def _wire_records(path: Path) -> list[tuple[str, bytes]]:
    """Raw binary message, or text with one hex message per line (message logs allowed)."""
    data = path.read_bytes()
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        return [(path.name, data)]
    records = []
    for n, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        try:
            records.append((" ".join(fields[:-1]) or f"line {n}", bytes.fromhex(fields[-1])))
        except ValueError:
            return [(path.name, data)]
    return records


def _describe(label: str, raw: bytes) -> dict:
    info = {"label": label, "bytes": len(raw), "hex": raw.hex()}
    try:
        msg = deserialize(raw)
    except WireError as exc:
        info.update(valid=False, error=f"{type(exc).__name__}: {exc}")
        return info
    info.update(valid=True, seq=msg.seq, tick=msg.tick, direction=msg.direction,
                kind="ciphertext" if msg.is_ciphertext else "plaintext",
                crc=f"{msg.crc:08x}", payload=[str(n) for n in msg.payload])
    if not msg.is_ciphertext:
        try:
            info["values"] = list(unpack_plain(msg.payload))
        except OverflowError:
            info.update(valid=False, error="plaintext slot wider than 64 bits")
    return info


def _hexdump(raw: bytes) -> list[str]:
    return [f"  {i:04x}  {raw[i:i + 16].hex(' ')}" for i in range(0, len(raw), 16)]


def cmd_inspect(args) -> int:
    path = Path(args.file)
    infos = [_describe(label, raw) for label, raw in _wire_records(path)]
    if not infos:
        raise UsageError(f"{path}: no messages found")
    lines = []
    for info in infos:
        if info["valid"]:
            lines.append(f"{info['label']}: OK {info['direction']} seq={info['seq']} tick={info['tick']} "
                         f"{info['kind']} crc={info['crc']}")
            if "values" in info:
                lines.append("  values " + " ".join(repr(v) for v in info["values"]))
        else:
            lines.append(f"{info['label']}: INVALID {info['error']}")
        if args.dump:
            lines += _hexdump(bytes.fromhex(info["hex"]))
    bad = sum(not i["valid"] for i in infos)
    lines.append(f"{len(infos)} message(s), {bad} invalid")
    _emit(args, {"messages": infos, "invalid": bad}, "\n".join(lines))
    return EXIT_ERROR if bad else EXIT_OK


# -- proxy -------------------------------------------------------------------------------

def cmd_proxy(args) -> int:
    """Standalone datagram attacker between a leader and a follower process."""
    from .attacker import scenario_config

    p = None
    if args.mode == "ciphertext":
        if not args.key_file:
            raise UsageError("ciphertext proxy needs --key-file for the public modulus")
        p = crypto.read_key_file(args.key_file)[0].p
    proxy = Proxy(scenario_config(args.scenario, mode=args.mode), p)
    udp = UdpProxy(parse_addr(args.listen), parse_addr(args.peer), proxy)
    print(f"proxy {args.scenario}/{args.mode} on {udp.address} -> {args.peer}", flush=True)
    try:
        udp.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        udp.close()
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fdia-teleop", description="Encrypted bilateral teleoperation under in-path attacks.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--json", action="store_true", help="machine-readable output on stdout")

    r = sub.add_parser("run", help="simulate one closed-loop run")
    r.add_argument("--config", help="INI file with setting overrides")
    r.add_argument("--scenario", choices=("normal", "reflection", "scaling"))
    r.add_argument("--mode", choices=("plaintext", "ciphertext"))
    r.add_argument("--transport", choices=("loopback", "udp"))
    r.add_argument("--wall", type=_on_off, metavar="on|off")
    r.add_argument("--duration", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--onset", type=float, help="attack start time [s]")
    r.add_argument("--one-sided", choices=("leader", "follower"),
                   help="attack only the direction reaching this side")
    r.add_argument("--listen", help="udp proxy address HOST:PORT")
    r.add_argument("--key-file")
    r.add_argument("--out", default="out")
    r.add_argument("--with-baseline", action="store_true", help="also run and verify against the unattacked run")
    r.add_argument("--tol", type=float, default=1e-9)
    r.add_argument("--plots", action="store_true")
    r.add_argument("--show-config", action="store_true", help="print the merged settings and exit")
    common(r)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="compare an attacked trace against a baseline")
    v.add_argument("--baseline", required=True)
    v.add_argument("--attacked", required=True)
    v.add_argument("--tol", type=float, default=1e-9)
    common(v)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("check-automorphism", help="test diagonal transforms against the dynamics")
    c.add_argument("--gravity-comp", type=_on_off, default=False, metavar="on|off")
    c.add_argument("--candidate", help="A1,A2 diagonal; default scans all sign patterns")
    c.add_argument("--samples", type=int, default=1000)
    c.add_argument("--tol", type=float, default=1e-9)
    c.add_argument("--seed", type=int, default=0)
    common(c)
    c.set_defaults(func=cmd_check)

    k = sub.add_parser("keygen", help="deterministic safe-prime ElGamal key")
    k.add_argument("--bits", type=int, default=64)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out", required=True)
    k.add_argument("--public-only", action="store_true")
    common(k)
    k.set_defaults(func=cmd_keygen)

    w = sub.add_parser("inspect-wire", help="decode and validate logged messages")
    w.add_argument("file")
    w.add_argument("--dump", action="store_true", help="include a hex dump")
    common(w)
    w.set_defaults(func=cmd_inspect)

    x = sub.add_parser("proxy", help="run the datagram attacker")
    x.add_argument("--listen", required=True)
    x.add_argument("--peer", required=True)
    x.add_argument("--scenario", choices=("normal", "reflection", "scaling"), default="reflection")
    x.add_argument("--mode", choices=("plaintext", "ciphertext"), default="ciphertext")
    x.add_argument("--key-file")
    x.set_defaults(func=cmd_proxy)
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "tol", 1.0) <= 0:
            raise UsageError("--tol must be positive")
        if getattr(args, "samples", 1) < 1:
            raise UsageError("--samples must be at least 1")
        return args.func(args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (LogShapeError, OSError, ValueError, crypto.SafePrimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

