import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from crlkit.cli import INCOMPLETE, main
from crlkit.storage import load_checkpoint, read_eval_csv, read_trace_csv

FIX = Path(__file__).parent / "fixtures"

TINY = {
    "schedule": {"M": 2, "S": 5, "eval_episodes": 1},
    "model": {"target_hidden": [16, 16], "hnet_hidden": [8, 8]},
    "cem": {"horizon": 3, "population": 20, "iterations": 2},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def train(cfg_file, out, *extra):
    return main(["train", "--config", str(cfg_file), "--out", str(out), "--n-tasks", "2", *extra])


def test_train_writes_run_directory(cfg_file, tmp_path, capsys):
    assert train(cfg_file, tmp_path / "runs", "--method", "ewc", "--seed", "3") == 0
    d = tmp_path / "runs" / "slide" / "ewc" / "seed3"
    assert not (d / INCOMPLETE).exists()
    assert (d / "final.ckpt").read_bytes() == (d / "checkpoints" / "task2.ckpt").read_bytes()
    cfg = json.loads((d / "config.json").read_text())
    assert cfg["method"] == "ewc" and cfg["seeds"] == [3] and cfg["schedule"]["M"] == 2
    assert len(read_trace_csv(d / "trace.csv")) == 2 * (10 + 2)
    assert "ewc seed 3" in capsys.readouterr().out


def test_eval_reproduces_recorded_matrix(cfg_file, tmp_path, capsys):
    train(cfg_file, tmp_path, "--method", "si")
    d = tmp_path / "slide" / "si" / "seed0"
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(d / "final.ckpt")]) == 0
    lines = capsys.readouterr().out.split()
    assert lines[0] == "task,reward"
    got = [float(l.split(",")[1]) for l in lines[1:]]
    recorded = read_eval_csv(d / "eval.csv", 2)[:, -1]
    np.testing.assert_allclose(got, recorded, rtol=1e-5)


def test_compare_and_report(cfg_file, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(cfg_file), "--out", str(out), "--n-tasks", "2",
                 "--methods", "hypercrl,finetune", "--seeds", "0..1"]) == 0
    table = (out / "slide" / "table.txt").read_text()
    assert table.splitlines()[1].split() == ["method", "f_1", "f"]
    assert "over 2 seed(s)" in table
    capsys.readouterr()
    runs = [str(p) for p in sorted((out / "slide").glob("*/seed*"))]
    assert main(["report", "--runs", *runs]) == 0
    rep = capsys.readouterr().out
    # same rows from the run directories as from the in-memory records
    assert set(rep.splitlines()[2:4]) == set(table.splitlines()[3:5])
    assert main(["report", "--summary", str(out / "slide" / "summary.csv")]) == 0
    # the summary CSV alone rebuilds the same cells, marks included
    assert capsys.readouterr().out.splitlines()[:4] == table.splitlines()[1:5]


def test_report_from_summary_matches_golden(tmp_path, capsys):
    out = tmp_path / "t.txt"
    assert main(["report", "--summary", str(FIX / "summary.csv"), "--title", "golden", "--out", str(out)]) == 0
    assert out.read_text() == (FIX / "table.txt").read_text()
    assert capsys.readouterr().out == (FIX / "table.txt").read_text()


def test_resume_gives_identical_outputs(cfg_file, tmp_path):
    train(cfg_file, tmp_path, "--method", "coreset")
    ref = tmp_path / "slide" / "coreset" / "seed0"
    ck = ref / "checkpoints" / "task1.ckpt"
    assert load_checkpoint(ck)["meta"]["task"] == 1
    rd = tmp_path / "resumed"
    assert main(["train", "--resume", str(ck), "--run-dir", str(rd)]) == 0
    for name in ("trace.csv", "eval.csv", "final.ckpt"):
        assert (rd / name).read_bytes() == (ref / name).read_bytes(), name


def test_bad_input_exit_codes(tmp_path, capsys):
    assert main(["train", "--method", "pnn", "--out", str(tmp_path)]) == 2
    assert "valid:" in capsys.readouterr().err
    assert main(["train", "--set", "schedule.Q=3", "--out", str(tmp_path)]) == 2
    assert "schedule.Q" in capsys.readouterr().err
    bad = tmp_path / "x.ckpt"
    bad.write_bytes(b"not a checkpoint at all, just some bytes padding it out past the header")
    assert main(["eval", "--checkpoint", str(bad)]) == 1
    assert "magic" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "crlkit", "report"], capture_output=True, text=True)
    assert r.returncode == 2 and "either --summary" in r.stderr


def test_single_method_gives_forward_transfer(cfg_file, tmp_path, capsys):
    out = tmp_path / "s"
    assert train(cfg_file, out, "--method", "single", "--seeds", "0") == 0
    from crlkit.storage import read_rstar_csv
    refs = read_rstar_csv(out / "slide" / "rstar.csv")
    assert list(refs) == [0] and sorted(refs[0]) == [1, 2]
    assert main(["compare", "--config", str(cfg_file), "--out", str(out), "--n-tasks", "2",
                 "--methods", "finetune,single", "--seeds", "0"]) == 0
    table = (out / "slide" / "table.txt").read_text()
    assert "I_2" in table and "single" not in table.split("\n", 3)[3]
    assert read_rstar_csv(out / "slide" / "rstar.csv") == refs     # same seed, same references
    assert main(["compare", "--config", str(cfg_file), "--out", str(out), "--methods", "single",
                 "--rstar", str(out / "slide" / "rstar.csv")]) == 2
