import configparser
import json
import re
from pathlib import Path

import pytest

from fdia_teleop import config as cfgmod
from fdia_teleop.cli import main
from fdia_teleop.harness import RunConfig

README = Path(__file__).resolve().parents[1] / "README.md"


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# -- config ------------------------------------------------------------------------------

def test_defaults_build_the_default_run():
    assert cfgmod.to_run_config(cfgmod.merge()) == RunConfig()


def test_unknown_key_rejected(tmp_path):
    (tmp_path / "c.ini").write_text("[gains]\nkp9 = 1\n")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load_file(tmp_path / "c.ini")
    (tmp_path / "d.ini").write_text("[extras]\nx = 1\n")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load_file(tmp_path / "d.ini")


def test_bad_values_rejected(tmp_path):
    (tmp_path / "c.ini").write_text("[scenario]\nmode = cleartext\n")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load_file(tmp_path / "c.ini")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.to_run_config(cfgmod.merge({("scenario", "duration"): -1.0}))


def test_precedence_cli_over_file_over_defaults(tmp_path):
    (tmp_path / "c.ini").write_text("[scenario]\nduration = 5\nseed = 3\n[gains]\nkd1 = 0.4\n")
    merged = cfgmod.merge(cfgmod.load_file(tmp_path / "c.ini"), {("scenario", "seed"): 9,
                                                                  ("scenario", "mode"): None})
    cfg = cfgmod.to_run_config(merged)
    assert (cfg.duration, cfg.seed, cfg.gains.kd1, cfg.mode) == (5.0, 9, 0.4, "ciphertext")


def test_rendered_ini_loads_back(tmp_path):
    values = cfgmod.merge({("wall", "enabled"): True, ("keys", "file"): "k.key"})
    (tmp_path / "c.ini").write_text(cfgmod.render_ini(values))
    assert cfgmod.merge(cfgmod.load_file(tmp_path / "c.ini")) == values


def test_readme_table_matches_show_config(capsys):
    table = README.read_text().split("<!-- defaults -->")[1]
    documented = {}
    for line in table.splitlines():
        m = re.match(r"\| (\w+) \| (\w+) \| ([^|]*) \|", line)
        if m and m.group(1) != "section":
            documented[(m.group(1), m.group(2))] = m.group(3).strip()
    code, out, _ = run(["run", "--show-config"], capsys)
    assert code == 0
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(out)
    shown = {(s, k): (v or "(empty)") for s in cp.sections() for k, v in cp.items(s)}
    assert shown == documented
    assert cfgmod.defaults_markdown() in README.read_text()


# -- subcommands -----------------------------------------------------------------------

def test_keygen_twice_identical(tmp_path, capsys):
    a, b = tmp_path / "a.key", tmp_path / "b.key"
    assert run(["keygen", "--bits", "64", "--seed", "7", "--out", str(a)], capsys)[0] == 0
    assert run(["keygen", "--bits", "64", "--seed", "7", "--out", str(b)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes() and len(a.read_text().split()) == 5


def test_keygen_bad_size_is_runtime_error(tmp_path, capsys):
    assert run(["keygen", "--bits", "8", "--out", str(tmp_path / "k")], capsys)[0] == 3


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    for name in ("normal", "reflection", "scaling"):
        assert main(["run", "--scenario", name, "--duration", "4", "--out", str(root / name)]) == 0
    return root


def test_run_writes_outputs(runs):
    out = runs / "reflection"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rows"] == 200 and summary["scenario"] == "reflection"
    assert (out / "trace.csv").read_text().count("\n") == 201
    assert (out / "messages.log").stat().st_size > 0


def test_reflection_verifies(runs, capsys):
    code, out, _ = run(["verify", "--baseline", str(runs / "normal/trace.csv"),
                        "--attacked", str(runs / "reflection/trace.csv")], capsys)
    assert code == 0 and out.startswith("PASS")


def test_scaling_is_detected(runs, capsys):
    code, out, _ = run(["verify", "--baseline", str(runs / "normal/trace.csv"),
                        "--attacked", str(runs / "scaling/trace.csv"), "--json"], capsys)
    assert code == 2 and json.loads(out)["result"] == "FAIL"


def test_verify_missing_file(tmp_path, capsys):
    code, _, err = run(["verify", "--baseline", str(tmp_path / "x.csv"), "--attacked", str(tmp_path / "y.csv")],
                       capsys)
    assert code == 3 and "error" in err


def test_run_with_baseline_and_plots(tmp_path, capsys):
    code, out, _ = run(["run", "--scenario", "reflection", "--mode", "plaintext", "--duration", "1",
                        "--with-baseline", "--plots", "--json", "--out", str(tmp_path)], capsys)
    summary = json.loads(out)
    assert code == 0 and summary["verify"]["result"] == "PASS"
    assert (tmp_path / "panels.png").exists() and (tmp_path / "baseline.csv").exists()


def test_run_with_config_file(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[scenario]\nduration = 0.5\nmode = plaintext\n")
    code, out, _ = run(["run", "--config", str(tmp_path / "c.ini"), "--duration", "0.2", "--json",
                        "--out", str(tmp_path / "o")], capsys)
    summary = json.loads(out)
    assert code == 0 and summary["rows"] == 10 and summary["mode"] == "plaintext"


def test_check_automorphism_table(capsys):
    code, out, _ = run(["check-automorphism", "--gravity-comp", "off"], capsys)
    lines = {ln.split()[0]: ln.split()[1] for ln in out.splitlines() if ln.startswith("diag")}
    assert code == 0 and lines == {"diag(1,1)": "pass", "diag(1,-1)": "fail",
                                   "diag(-1,1)": "pass", "diag(-1,-1)": "fail"}
    code, out, _ = run(["check-automorphism", "--gravity-comp", "on", "--candidate", "2,2", "--json"], capsys)
    assert code == 0 and json.loads(out)["results"][0]["pass"] is False


def test_inspect_wire_log_and_binary(runs, tmp_path, capsys):
    code, out, _ = run(["inspect-wire", str(runs / "reflection/messages.log")], capsys)
    assert code == 0 and out.rstrip().endswith("0 invalid")
    first_hex = (runs / "reflection/messages.log").read_text().split("\n")[0].split()[-1]
    raw = bytes.fromhex(first_hex)
    (tmp_path / "m.bin").write_bytes(raw)
    code, out, _ = run(["inspect-wire", str(tmp_path / "m.bin"), "--dump", "--json"], capsys)
    info = json.loads(out)["messages"][0]
    assert code == 0 and info["valid"] and info["kind"] == "ciphertext"
    (tmp_path / "bad.bin").write_bytes(raw[:-1] + bytes([raw[-1] ^ 0x80]))
    code, out, _ = run(["inspect-wire", str(tmp_path / "bad.bin")], capsys)
    assert code == 3 and "CrcMismatch" in out


def test_inspect_plaintext_hex_line(tmp_path, capsys):
    from fdia_teleop.channel import ChannelMessage, pack_plain, serialize
    raw = serialize(ChannelMessage(1, 1, "F2L", pack_plain([0.25, -1.0, 0.0, 2.0])))
    (tmp_path / "m.hex").write_text(raw.hex() + "\n")
    code, out, _ = run(["inspect-wire", str(tmp_path / "m.hex")], capsys)
    assert code == 0 and "values 0.25 -1.0 0.0 2.0" in out


@pytest.mark.parametrize("argv", [[], ["run", "--bogus"], ["run", "--wall", "maybe"],
                                  ["run", "--scenario", "rotation"], ["verify", "--baseline", "a"],
                                  ["check-automorphism", "--candidate", "1"],
                                  ["check-automorphism", "--tol", "-1"]])
def test_usage_errors_exit_64(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 64 and err


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[wall]\nheight = 3\n")
    assert run(["run", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)], capsys)[0] == 64
