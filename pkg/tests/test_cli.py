import csv
import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

import dpsmc
from conftest import MODELS
from dpsmc.cli import main, render_reference

EXP = str(MODELS / "exp.json")
COIN = str(MODELS / "coin.json")
Q_EXP = "Pr[time<=1](<> M.B)"

OVERFLOW = {
    "variables": [{"name": "v", "range": [0, 1]}],
    "templates": [{"name": "T", "clocks": ["x"], "locations": [{"name": "A", "invariant": "x <= 1"}],
                   "initial": "A", "edges": [{"from": "A", "to": "A", "clock_guard": "x >= 1",
                                              "reset": ["x"], "update": "v := v + 1"}]}],
    "instances": [{"template": "T"}],
}


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_estimate_is_replayable(capsys):
    argv = ["estimate", EXP, "--query", Q_EXP, "--eps", "0.02", "--alpha", "0.05", "--seed", "7"]
    a = run(capsys, *argv)
    b = run(capsys, *argv)
    assert a[0] == b[0] == 0
    assert a[1] == b[1]
    assert "seed=7" in a[1] and f"version={dpsmc.__version__}" in a[1]
    p = float(re.search(r"p=([0-9.]+)", a[1]).group(1))
    assert abs(p - 0.6321) < 0.02


def test_estimate_jobs_do_not_change_output(capsys):
    base = ["estimate", EXP, "--query", Q_EXP, "--eps", "0.05", "--alpha", "0.05", "--seed", "3"]
    one = run(capsys, *base, "--jobs", "1")[1]
    two = run(capsys, *base, "--jobs", "2")[1]
    strip = lambda s: re.sub(r"wall_ms=\S+\s?", "", s)  # noqa: E731
    assert strip(one) == strip(two)


def test_default_seed_is_echoed(capsys):
    code, out, _ = run(capsys, "estimate", EXP, "--query", Q_EXP, "--eps", "0.1", "--alpha", "0.1")
    seed = re.search(r"seed=(\d+)", out).group(1)
    again = run(capsys, "estimate", EXP, "--query", Q_EXP, "--eps", "0.1", "--alpha", "0.1", "--seed", seed)[1]
    assert code == 0 and again == out


@pytest.mark.parametrize("theta, expected, kind", [("0.3", 0, "H0"), ("0.9", 1, "H1")])
def test_check_exit_codes(capsys, theta, expected, kind):
    code, out, _ = run(capsys, "check", EXP, "--query", Q_EXP, "--theta", theta, "--delta", "0.05",
                       "--alpha", "0.01", "--seed", "1")
    assert code == expected
    assert out.startswith(f"verdict={kind}") and "seed=1" in out


def test_check_safe_bounds_and_jobs(capsys):
    code, out, _ = run(capsys, "check", EXP, "--query", Q_EXP, "--theta", "0.3", "--delta", "0.05",
                       "--alpha", "0.01", "--seed", "1", "--jobs", "2", "--safe-bounds")
    assert code == 0 and out.startswith("verdict=H0")


@pytest.mark.parametrize("argv", [
    ["estimate", EXP, "--query", Q_EXP, "--eps", "0.1", "--alpha", "0.1", "--bogus"],
    ["check", EXP, "--query", Q_EXP, "--theta", "0.5", "--alpha", "0.1"],  # no --delta
    ["check", EXP, "--query", Q_EXP, "--theta", "1.5", "--delta", "0.1", "--alpha", "0.1"],
    ["estimate", EXP, "--query", "Pr[time<=1](<> M.Nowhere)", "--eps", "0.1", "--alpha", "0.1"],
    ["estimate", COIN, "--query", "Pr[time<=1](<> Coin.Heads)", "--eps", "0.1", "--alpha", "0.1"],  # K unset
    ["estimate", "/nonexistent.json", "--query", Q_EXP, "--eps", "0.1", "--alpha", "0.1"],
    ["nash", COIN, "--players", "2", "--grid", "9..1", "--query-template", "x", "--eps", "0.1",
     "--alpha", "0.1", "--out", "/tmp/never.csv"],
    ["topo", "--nodes", "3", "--out", "/tmp/never"],  # neither --random nor --generate
    [],
])
def test_usage_errors(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2
    assert err
    if argv:
        assert out.startswith("status=error code=2")


def test_unknown_flag_does_no_work(capsys, tmp_path):
    out_file = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sweep", COIN, "--query", "Pr[time<=2](<> Coin.Heads)", "--eps", "0.1",
                     "--alpha", "0.1", "--out", str(out_file), "--nope")
    assert code == 2 and not out_file.exists()


def test_runtime_error_exit_3(capsys, tmp_path):
    model = tmp_path / "overflow.json"
    model.write_text(json.dumps(OVERFLOW))
    code, out, err = run(capsys, "estimate", str(model), "--query", "Pr[time<=5](<> v == 9)", "--eps", "0.1",
                         "--alpha", "0.1", "--seed", "1")
    assert code == 3 and "range" in err
    assert out.startswith("status=error code=3 kind=runtime_error")


def test_worker_without_master_exit_3(capsys):
    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    code, _, _ = run(capsys, "worker", "--connect", f"127.0.0.1:{port}", "--retry", "0")
    assert code == 3


def test_sweep_command(capsys, tmp_path):
    out_file = tmp_path / "coin.csv"
    code, out, _ = run(capsys, "sweep", COIN, "--query", "Pr[time<=2](<> Coin.Heads)", "--eps", "0.2",
                       "--alpha", "0.2", "--out", str(out_file), "--seed", "5")
    assert code == 0 and "rows=99 failed=0" in out
    rows = list(csv.reader(out_file.open()))
    assert rows[0][0] == "K" and len(rows) == 100


def test_nash_command(capsys, tmp_path):
    out_file = tmp_path / "u.csv"
    code, out, _ = run(capsys, "nash", str(MODELS / "game.json"), "--players", "2", "--grid", "1..9:4",
                       "--query-template", _game_query(), "--eps", "0.1", "--alpha", "0.1",
                       "--out", str(out_file), "--seed", "2", "--scale", "0.1")
    assert code == 0 and out.startswith("nash=")
    text = out_file.read_text()
    assert text.splitlines()[0] == "p_dev\\p_all,0.1,0.5,0.9"
    assert "nash=" in text


def _game_query():
    # player 0 transmitted alone in some slot
    wins = " || ".join(f"(mine[{k}] == 1 && cnt[{k}] == 1)" for k in range(3))
    return f"Pr[time<=10](<> P0.Done && ({wins}))"


def test_topo_generate_and_rank(capsys, tmp_path):
    code, out, _ = run(capsys, "topo", "--nodes", "4", "--generate", "--out", str(tmp_path / "t"))
    assert code == 0 and "topologies=" in out and "base=8" in out
    assert len(list((tmp_path / "t").glob("*.txt"))) == int(re.search(r"topologies=(\d+)", out).group(1))
    code, out, _ = run(capsys, "topo", "--nodes", "5", "--random", "20", "--density", "1", "--seed", "3",
                       "--out", str(tmp_path / "r"))
    assert code == 0 and "topologies=20 duplicates=19 seed=3" in out


def test_help_and_version(capsys):
    assert run(capsys, "--version")[0] == 0
    assert run(capsys, "check", "--help")[0] == 0


def test_cli_reference_is_current():
    doc = Path(__file__).resolve().parents[1] / "docs" / "cli.md"
    assert doc.read_text(encoding="utf-8") == render_reference()


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "dpsmc", "estimate", EXP, "--query", Q_EXP, "--eps", "0.1",
                        "--alpha", "0.1", "--seed", "7"], capture_output=True, text=True, timeout=120)
    assert p.returncode == 0 and "seed=7" in p.stdout


def test_master_and_workers_over_tcp():
    cmd = [sys.executable, "-m", "dpsmc"]
    master = subprocess.Popen(cmd + ["master", EXP, "--listen", "127.0.0.1:0", "--workers", "2", "--query", Q_EXP,
                                     "--theta", "0.5", "--delta", "0.1", "--alpha", "0.05", "--seed", "7",
                                     "--batch", "4", "--buffer", "2", "--accept-timeout", "60"],
                              stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    banner = master.stderr.readline()
    addr = re.search(r"listening on (\S+)", banner).group(1)
    workers = [subprocess.Popen(cmd + ["worker", "--connect", addr], stdout=subprocess.DEVNULL,
                                stderr=subprocess.DEVNULL) for _ in range(2)]
    out, _ = master.communicate(timeout=120)
    codes = [w.wait(timeout=60) for w in workers]
    assert master.returncode == 0 and codes == [0, 0]
    assert out.startswith("verdict=H0 runs=20 llr=-3.243721 seed=7")
