"""Command-line entry points: artifacts, exit codes, determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest

from voxlab.cli import main
from voxlab.core import LayeredLowRankMDP, validate_mdp

VOX_CONFIG = {
    "K": 2,
    "gamma": 0.02,
    "n_replearn": 400,
    "n_estmat": 300,
    "n_psdp": 400,
    "fw_max_iters": 200,
    "replearn": {"restarts": 2, "grad_steps": 10},
}

SPANRL_CONFIG = {
    "eps": 0.05,
    "n_replearn": 600,
    "n_estvec": 400,
    "n_psdp": 600,
    "replearn": {"restarts": 2, "grad_steps": 10},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rc = main(["generate-env", "--H", "3", "--A", "2", "--d", "2",
               "--states", "3,4,4", "--seed", "7", "--boost-eta", "0.5",
               "--out", str(root / "env.json")])
    assert rc == 0
    (root / "vox.json").write_text(json.dumps(VOX_CONFIG))
    (root / "spanrl.json").write_text(json.dumps(SPANRL_CONFIG))
    return root


@pytest.fixture(scope="module")
def vox_run(workdir):
    out = workdir / "vox_run.json"
    csv = workdir / "vox_trace.csv"
    rc = main(["run-vox", "--env", str(workdir / "env.json"),
               "--config", str(workdir / "vox.json"), "--seed", "3",
               "--out", str(out), "--csv", str(csv)])
    assert rc == 0
    return out, csv


def test_generate_env_writes_valid_mdp(workdir):
    M = LayeredLowRankMDP.from_json((workdir / "env.json").read_text())
    assert validate_mdp(M) == []
    assert M.H == 3 and M.A == 2 and M.d == 2


def test_generate_env_rejects_wrong_state_count(workdir):
    rc = main(["generate-env", "--H", "3", "--A", "2", "--d", "2",
               "--states", "3,4", "--seed", "0",
               "--out", str(workdir / "bad_env.json")])
    assert rc == 2


def test_selftest_passes(capsys):
    assert main(["selftest", "--seed", "0"]) == 0
    assert "selftest ok" in capsys.readouterr().out


def test_vox_run_payload_structure(vox_run):
    out, _ = vox_run
    obj = json.loads(out.read_text())
    assert obj["algorithm"] == "vox"
    assert obj["seed"] == 3
    assert obj["episode_count"] > 0
    assert len(obj["log"]) == VOX_CONFIG["K"]
    assert set(obj["alphas"]) == {"2"}
    assert len(obj["certificates"]) == len(obj["log"])


def test_vox_rerun_is_byte_identical(workdir, vox_run):
    out, _ = vox_run
    again = workdir / "vox_run_again.json"
    rc = main(["run-vox", "--env", str(workdir / "env.json"),
               "--config", str(workdir / "vox.json"), "--seed", "3",
               "--out", str(again)])
    assert rc == 0
    assert again.read_bytes() == out.read_bytes()


def test_csv_trace_format(vox_run):
    out, csv = vox_run
    lines = csv.read_text().splitlines()
    assert lines[0] == "iter,objective,certificate"
    obj = json.loads(out.read_text())
    want_rows = sum(len(row["trace"]) for row in obj["log"])
    assert len(lines) == 1 + want_rows
    for k, line in enumerate(lines[1:], start=1):
        step, objective, certificate = line.split(",")
        assert int(step) == k
        float(objective), float(certificate)


def test_verify_cover_exit_codes_and_witnesses(workdir, vox_run):
    out, _ = vox_run
    rep = workdir / "verify.json"
    rc = main(["verify-cover", "--env", str(workdir / "env.json"),
               "--run", str(out), "--alpha", "0.001", "--eps", "0.0",
               "--out", str(rep)])
    assert rc == 0
    payload = json.loads(rep.read_text())
    assert payload["passed"] is True
    assert payload["layers"]["2"]["passed"] is True

    rc = main(["verify-cover", "--env", str(workdir / "env.json"),
               "--run", str(out), "--alpha", "0.999", "--eps", "0.0",
               "--out", str(rep)])
    assert rc == 1
    payload = json.loads(rep.read_text())
    assert payload["passed"] is False
    assert payload["layers"]["2"]["witnesses"]


def test_spanrl_run_and_rerun(workdir):
    first = workdir / "spanrl_run.json"
    second = workdir / "spanrl_run_again.json"
    for out in (first, second):
        rc = main(["run-spanrl", "--env", str(workdir / "env.json"),
                   "--config", str(workdir / "spanrl.json"), "--seed", "5",
                   "--out", str(out)])
        assert rc == 0
    assert first.read_bytes() == second.read_bytes()
    obj = json.loads(first.read_text())
    assert obj["algorithm"] == "spanrl"
    assert obj["covers"]["kind"] == "spanrl"


def test_optimize_reward_cli(workdir, vox_run):
    out, _ = vox_run
    theta = workdir / "theta.json"
    theta.write_text(json.dumps([[0.6, 0.8], [1.0, 0.0]]))
    result = workdir / "opt.json"
    rc = main(["optimize-reward", "--env", str(workdir / "env.json"),
               "--config", str(workdir / "vox.json"), "--run", str(out),
               "--theta", str(theta), "--seed", "11", "--out", str(result)])
    assert rc == 0
    payload = json.loads(result.read_text())
    assert np.isfinite(payload["value"])
    assert payload["policy"]["lo"] == 0
    assert len(payload["policy"]["tables"]) == 2


def test_usage_errors_exit_2(workdir):
    assert main(["run-vox", "--bogus"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["run-vox", "--env", str(workdir / "nope.json"),
                 "--config", str(workdir / "vox.json"),
                 "--out", str(workdir / "x.json")]) == 2

    missing_key = workdir / "missing_key.json"
    missing_key.write_text(json.dumps({"gamma": 0.02}))
    assert main(["run-vox", "--env", str(workdir / "env.json"),
                 "--config", str(missing_key),
                 "--out", str(workdir / "x.json")]) == 2

    broken = workdir / "broken.json"
    broken.write_text("{not json")
    assert main(["run-vox", "--env", str(workdir / "env.json"),
                 "--config", str(broken),
                 "--out", str(workdir / "x.json")]) == 2


def test_help_exits_clean():
    assert main(["--help"]) == 0


def test_subprocess_selftest():
    proc = subprocess.run([sys.executable, "-m", "voxlab.cli", "selftest"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert "selftest ok" in proc.stdout
