import json
import subprocess
import sys

import pytest

from autokd.harness.cli import main

CFG = """
[run]
master_seed = 2
[dataset]
n_samples = 240
[student]
target_params = 800
[teacher]
epochs = 15
[ablation]
temperatures = 1, 4
weights = 0, 1
budget = 2
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "c.ini").write_text(CFG)
    assert main(["search", "--config", str(d / "c.ini"), "--out", str(d / "run")]) == 0
    return d


def test_search_writes_artifacts(workdir):
    for name in ("trials.jsonl", "best.json", "config.ini", "teacher.akdl", "teacher.akdm"):
        assert (workdir / "run" / name).exists()


def test_retrain_from_search_dir(workdir, capsys):
    assert main(["retrain", "--out", str(workdir / "run"), "--samples", "2", "--budget", "2"]) == 0
    out = json.loads((workdir / "run" / "retrain.json").read_text())
    assert len(out["accuracies"]) == 2
    curves = (workdir / "run" / "retrain_curves.csv").read_text().splitlines()
    assert curves[0] == "run,epoch,val_accuracy" and len(curves) == 1 + 2 * 2


def test_analyze_and_ablate(workdir, capsys):
    assert main(["analyze", "--log", str(workdir / "run" / "trials.jsonl"),
                 "--out", str(workdir / "an")]) == 0
    assert (workdir / "an" / "rank_correlation.csv").exists()
    out = workdir / "grid.csv"
    assert main(["ablate", "--config", str(workdir / "c.ini"), "--theta",
                 str(workdir / "run" / "best.json"), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "temperature,alpha=0,alpha=1"


def test_teacher_command(workdir):
    assert main(["teacher", "--config", str(workdir / "c.ini"), "--out", str(workdir / "t")]) == 0
    assert (workdir / "t" / "teacher.akdl").read_bytes() == \
        (workdir / "run" / "teacher.akdl").read_bytes()


def test_failures_give_one_line_diagnostic(tmp_path, capsys):
    assert main(["analyze", "--log", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) != 0
    err = capsys.readouterr().err.strip()
    assert err.startswith("autokd analyze: error:") and "\n" not in err
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nbogus = 1\n")
    assert main(["search", "--config", str(bad), "--out", str(tmp_path / "x")]) != 0
    assert "bogus" in capsys.readouterr().err
    assert main(["retrain", "--out", str(tmp_path / "empty")]) != 0


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "autokd.harness.cli", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "search" in r.stdout
