import json
import subprocess
import sys

import pytest

from decoyqkd.cli import main

SMALL = "protocol.pulses_total = 20000\n"


@pytest.fixture
def config(tmp_path):
    def _config(text=SMALL):
        path = tmp_path / "exp.toml"
        path.write_text(text)
        return path

    return _config


def test_run_writes_csv_and_json(tmp_path, config, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", str(config()), "--out", str(out), "--format", "csv,json"])
    assert code == 0
    assert (out / "run.csv").read_text().count("\n") == 2
    doc = json.loads((out / "run.json").read_text())
    assert doc["spec"]["protocol.pulses_total"] == 20000
    assert doc["spec"]["output.formats"] == "csv,json"
    assert "50 km" in capsys.readouterr().out


def test_flags_override_config(tmp_path, config):
    out = tmp_path / "o"
    code = main(["run", "--config", str(config()), "--out", str(out), "--format", "json",
                 "--seed", "7", "--pulses", "3000", "--eve", "pns", "--block-prob", "0.5",
                 "--set", "channel.distance_km=20"])
    assert code == 0
    spec = json.loads((out / "run.json").read_text())["spec"]
    assert spec["protocol.seed"] == 7
    assert spec["protocol.pulses_total"] == 3000
    assert spec["eve.kind"] == "pns"
    assert spec["eve.single_block_prob"] == 0.5
    assert spec["channel.distance_km"] == 20


def test_trace_dump(tmp_path, config):
    trace = tmp_path / "trace.csv"
    code = main(["run", "--config", str(config("protocol.pulses_total = 500\n")), "--out", str(tmp_path), "--trace", str(trace)])
    assert code == 0
    lines = trace.read_text().splitlines()
    assert lines[0] == "index,class,n_emitted,alice_bit,alice_basis,eve_action,n_arrived,clicked,bob_bit,bob_basis"
    assert len(lines) == 501


def test_trace_too_long_is_config_error(tmp_path, config):
    code = main(["run", "--config", str(config("protocol.pulses_total = 200000\n")), "--out", str(tmp_path), "--trace", str(tmp_path / "t.csv")])
    assert code == 2


def test_sweep_requires_sweep_keys(tmp_path, config):
    assert main(["sweep", "--config", str(config()), "--out", str(tmp_path)]) == 2


def test_sweep(tmp_path, config):
    cfg = config(SMALL + "sweep.start_km = 0\nsweep.end_km = 40\nsweep.step_km = 10\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "sweep.csv").read_text().count("\n") == 6


def test_compare_writes_three_files(tmp_path, config, capsys):
    cfg = config("protocol.pulses_total = 200000\neve.forward_transmittance = 1.0\n")
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "compare_none.csv").exists()
    assert (tmp_path / "compare_pns.csv").exists()
    delta = (tmp_path / "compare_delta.csv").read_text().splitlines()
    assert delta[0] == "distance_km,R_decoy_none,R_decoy_pns,delta_R_decoy,verdict_none,verdict_pns"
    assert delta[1].endswith("clean,flagged")
    out = capsys.readouterr().out
    assert "none" in out and "pns" in out


def test_config_errors_exit_2(tmp_path, config):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    assert main(["run", "--config", str(config("weak_decoy.mu = 0.9\n"))]) == 2
    assert main(["run", "--config", str(config()), "--set", "nokey"]) == 2
    assert main(["run", "--config", str(config("typo.key = 1\n"))]) == 2


def test_io_error_exit_4(tmp_path, config):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["run", "--config", str(config()), "--out", str(blocker / "x")]) == 4


def test_failed_point_exit_3(tmp_path, config):
    # 1e6 km underflows the transmittance; the point is recorded as failed
    cfg = config(SMALL + "sweep.start_km = 0\nsweep.end_km = 1000000\nsweep.step_km = 1000000\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3
    assert ",failed," in lines[2]


def test_module_entry_point(tmp_path, config):
    result = subprocess.run(
        [sys.executable, "-m", "decoyqkd", "run", "--config", str(config()), "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    assert (tmp_path / "run.csv").exists()
