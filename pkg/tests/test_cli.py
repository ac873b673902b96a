import json
import subprocess
import sys

import pytest

from cfmimo.cli import main
from cfmimo.scenario import save_config


@pytest.fixture
def cfg_file(tmp_path, desk_config):
    cfg = desk_config
    cfg.mc_drops = 1
    cfg.mc_realizations = 8
    path = tmp_path / "cfg.json"
    save_config(cfg, str(path))
    return str(path)


def test_simulate_smoke(tmp_path, cfg_file):
    out = str(tmp_path / "out")
    rc = main(
        [
            "simulate",
            "--config",
            cfg_file,
            "--out",
            out,
            "--links",
            "ul",
            "--deployment",
            "clustered",
        ]
    )
    assert rc == 0
    summary = json.load(open(out + "/summary.json"))
    assert summary["drops_completed"] == 1
    assert "edu-mmse" in summary["schemes"]


def test_missing_config_exits_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", "x"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert json.loads(err.strip().splitlines()[-1])["error"] == "usage"


def test_bogus_scheme_exits_2_and_lists_tags(tmp_path, cfg_file, capsys):
    with pytest.raises(SystemExit) as exc:
        main(
            [
                "simulate",
                "--config",
                cfg_file,
                "--schemes",
                "bogus",
                "--out",
                str(tmp_path / "o"),
            ]
        )
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "joint-mmse" in err and "edu-pmmse" in err


def test_deploy_ga_writes_outputs(tmp_path, cfg_file):
    out = str(tmp_path / "ga")
    rc = main(
        ["deploy-ga", "--config", cfg_file, "--out", out, "--generations", "10"]
    )
    assert rc == 0
    mapping = json.load(open(out + "/partition.json"))
    assert len(mapping) == 16
    lines = [
        l
        for l in open(out + "/fitness_trajectory.csv").read().splitlines()
        if not l.startswith("#")
    ]
    assert lines[0] == "generation,best_fitness"
    assert len(lines) == 11


def test_associate_ql_writes_outputs(tmp_path, cfg_file):
    out = str(tmp_path / "ql")
    rc = main(
        ["associate-ql", "--config", cfg_file, "--out", out, "--episodes", "20"]
    )
    assert rc == 0
    rows = [
        l
        for l in open(out + "/association.csv").read().splitlines()
        if not l.startswith("#")
    ]
    assert rows[0] == "ue_index,edu_index,served"
    assert len(rows) == 1 + 8 * 4
    qsum = json.load(open(out + "/qtable_summary.json"))
    assert "best_r_sum" in qsum


def test_sweep_num_edu(tmp_path, cfg_file):
    out = str(tmp_path / "sweep")
    rc = main(
        [
            "sweep",
            "--config",
            cfg_file,
            "--out",
            out,
            "--param",
            "num_edu",
            "--values",
            "1,2",
            "--links",
            "ul",
            "--deployment",
            "clustered",
        ]
    )
    assert rc == 0
    combined = json.load(open(out + "/sweep_summary.json"))
    assert set(combined) == {"num_edu=1", "num_edu=2"}


def test_console_entrypoint_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "cfmimo.cli", "--version"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip()
