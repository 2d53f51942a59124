import json
import shutil
import subprocess
import sys

import pytest

from splitflow import cli
from splitflow.io import load_trajectory, read_snapshot
from splitflow.monitors import MonitorReport
from splitflow.presets import CONFIGS

SHORT_SPINOR = """\
flow = spinor-split
n = 16
G = 1.3 0.4 0.9
preset = random
seed = 5
datum = random
spin_x = 1
max_steps = 6
report_every = 2
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_preset_listing_and_printing(capsys):
    assert cli.main(["preset"]) == 0
    assert capsys.readouterr().out.split() == sorted(CONFIGS)
    assert cli.main(["preset", "paired-hrf"]) == 0
    assert capsys.readouterr().out == CONFIGS["paired-hrf"]


def test_bad_config_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "flow = spinor\nq = 3\nbogus = 1\n")
    assert cli.main(["run", cfg]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "q = 3" in err and "bogus" in err
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG


def test_short_run_writes_trajectory(tmp_path, capsys):
    out = tmp_path / "traj"
    assert cli.main(["run", write(tmp_path, SHORT_SPINOR), "-o", str(out)]) == 0
    assert capsys.readouterr().out.startswith("verdict: max_steps")
    data = load_trajectory(out)
    assert data.columns == MonitorReport.columns()
    assert data.echo.startswith("flow=spinor-split n=16 eps=0.5 q=6")
    assert len(data.rows) == 4 and len(data.snapshots) == 4
    assert [r["t"] for r in data.rows] == [read_snapshot(p).t for p in data.snapshots]
    assert data.verdict["status"] == "max_steps" and data.verdict["steps"] == 6
    assert set(data.verdict["criteria"]) == {"geometric-control", "spinor-integral",
                                             "spinor-pointwise"}
    assert (out / "config.txt").read_text() == SHORT_SPINOR


def test_run_is_deterministic(tmp_path):
    cfg = write(tmp_path, SHORT_SPINOR)
    for name in ("a", "b"):
        assert cli.main(["run", cfg, "-o", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "timeseries.csv").read_bytes()
    assert a == (tmp_path / "b" / "timeseries.csv").read_bytes()
    for p in sorted((tmp_path / "a" / "snapshots").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / "snapshots" / p.name).read_bytes()


def test_resume_from_snapshot(tmp_path):
    out = tmp_path / "first"
    assert cli.main(["run", write(tmp_path, SHORT_SPINOR), "-o", str(out)]) == 0
    snap = sorted((out / "snapshots").iterdir())[-1]
    text = SHORT_SPINOR.replace("preset = random\n", f"snapshot = {snap}\n")
    assert cli.main(["run", write(tmp_path, text, "resume.cfg"), "-o", str(tmp_path / "second")]) == 0
    rows = load_trajectory(tmp_path / "second").rows
    assert rows[0]["t"] == read_snapshot(snap).t and rows[-1]["t"] > rows[0]["t"]


def test_snapshot_kind_mismatch_is_config_error(tmp_path):
    out = tmp_path / "first"
    assert cli.main(["run", write(tmp_path, SHORT_SPINOR), "-o", str(out)]) == 0
    snap = sorted((out / "snapshots").iterdir())[0]
    text = f"flow = hrf\nn = 16\nsnapshot = {snap}\n"
    assert cli.main(["run", write(tmp_path, text, "bad.cfg"), "-o", str(tmp_path / "x")]) == 2


def test_huge_dt_aborts(tmp_path, capsys):
    text = "flow = ricci\nn = 16\nG = 1.3 0.4 0.9\nseed = 2\ndt = 1.0\nmax_steps = 5\n"
    out = tmp_path / "abort"
    assert cli.main(["run", write(tmp_path, text), "-o", str(out)]) == cli.EXIT_ABORT
    assert capsys.readouterr().out.startswith("verdict: aborted")
    v = json.loads((out / "verdict.json").read_text())
    assert v["status"] == "aborted" and v["message"]


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SPLITFLOW_OUTPUT", str(tmp_path / "root"))
    text = SHORT_SPINOR + "output = named\n"
    assert cli.main(["run", write(tmp_path, text)]) == 0
    assert (tmp_path / "root" / "named" / "verdict.json").exists()


def test_report_command(tmp_path, capsys):
    out = tmp_path / "traj"
    cli.main(["run", write(tmp_path, SHORT_SPINOR), "-o", str(out)])
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "4 rows, 4 snapshots" in text and "status: max_steps" in text
    assert "spinor-pointwise: holds" in text
    assert cli.main(["report", str(tmp_path / "nowhere")]) == cli.EXIT_CONFIG


def test_uniformize_command(tmp_path, capsys):
    text = "flow = ricci\nn = 16\npreset = sine-bump\nuniformize_tol = 1e-5\n"
    out = tmp_path / "uni"
    assert cli.main(["uniformize", write(tmp_path, text), "-o", str(out)]) == 0
    rec = json.loads((out / "uniformization.json").read_text())
    assert rec["converged"] and rec["R_sup_final"] < 1e-5
    assert read_snapshot(out / "conformal_factor.bin").kind == "ricci"


def test_paired_run(tmp_path, capsys):
    text = CONFIGS["paired-spinor"].replace("n = 32", "n = 16").replace("t_final = 0.1",
                                                                         "t_final = 0.01")
    out = tmp_path / "pair"
    assert cli.main(["run", write(tmp_path, text), "-o", str(out)]) == 0
    assert capsys.readouterr().out.startswith("verdict: agree")
    v = json.loads((out / "verdict.json").read_text())
    assert v["status"] == "agree" and v["horizontal_ratio_dev"] < 1e-6
    data = load_trajectory(out)
    assert data.columns[0] == "t" and len(data.rows) >= 2


def test_paired_wrong_signs_exit_3(tmp_path, capsys):
    text = (CONFIGS["paired-hrf"].replace("n = 32", "n = 16").replace("t_final = 0.1", "t_final = 0.01")
            + "signs = hrf\n")
    assert cli.main(["run", write(tmp_path, text), "-o", str(tmp_path / "p")]) == cli.EXIT_ACCEPTANCE
    assert "disagree" in capsys.readouterr().out


def test_check_subset(tmp_path, capsys):
    rep = tmp_path / "acc.txt"
    assert cli.main(["check", "--only", "1,12", "--report", str(rep)]) == 0
    lines = rep.read_text().splitlines()
    assert lines[0].startswith("[PASS]  1 ") and lines[1].startswith("[PASS] 12 ")
    assert lines[-1] == "acceptance: 2/2 passed"
    assert cli.main(["check", "--only", "x"]) == cli.EXIT_CONFIG


def test_check_mutation_fails_exit_3(capsys):
    assert cli.main(["check", "--only", "5", "--mutate", "trace-sign"]) == cli.EXIT_ACCEPTANCE
    assert "[FAIL]  5 " in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("splitflow") is None, reason="console script not installed")
def test_console_script_exit_code(tmp_path):
    cfg = write(tmp_path, "flow = nonsense\n")
    proc = subprocess.run(["splitflow", "run", cfg], capture_output=True, text=True)
    assert proc.returncode == 2 and "config error" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "splitflow.cli", "preset"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "ricci-sine-bump" in proc.stdout
