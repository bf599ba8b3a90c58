import csv
import io
import subprocess
import sys

import pytest

import marginkge.sweep as sweep
from marginkge.cli import EXIT_ERROR, EXIT_OK, EXIT_PARTIAL, main
from marginkge.model import load_checkpoint

FAST = ["--max-epochs", "3", "--replicas", "1", "--parallel", "1"]


@pytest.fixture()
def manifest(tmp_path):
    assert main(["synth", "--entities", "20", "--seed", "1", "--out", str(tmp_path / "ds")]) == EXIT_OK
    return tmp_path / "ds" / "manifest.txt"


def test_synth_writes_splits(manifest):
    names = sorted(p.name for p in manifest.parent.iterdir())
    assert names == ["learn.tsv", "manifest.txt", "test.tsv", "tune.tsv", "valid.tsv"]


def test_stats(manifest, capsys):
    assert main(["stats", "--dataset", str(manifest)]) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["dataset", "quantity", "count"]
    got = {r[1]: int(r[2]) for r in rows[1:]}
    assert got["types"] == 3 and got["relations"] == 3
    assert got["triples"] == got["learn"] + got["valid"] + got["tune"] + got["test"]


def test_sweep_and_report(manifest, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["sweep", "--dataset", str(manifest), "--out", str(out), "--margins", "0.5,1,2", "--dims", "4", *FAST])
    assert code == EXIT_OK
    assert "cells: 3/3 complete" in capsys.readouterr().out
    before = (out / "summary.txt").read_bytes()
    (out / "summary.txt").unlink()
    assert main(["report", "--out", str(out)]) == EXIT_OK
    assert (out / "summary.txt").read_bytes() == before
    assert (out / "heatmaps" / "mrr.svg").exists()


def test_sweep_reads_config_file(manifest, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"dataset={manifest}\nmargins=1.0,2.0\ndims=4\nmax_epochs=2\nreplicas=1\ncls_max_epochs=2\n")
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--parallel", "1"]) == EXIT_OK
    cells = list(csv.DictReader(open(out / "cells.csv")))
    assert [(c["gamma"], c["k"]) for c in cells] == [("1.0", "4"), ("2.0", "4")]
    assert all(int(c["cls_epochs"]) <= 2 for c in cells)


def test_sweep_partial_exit_code(manifest, tmp_path, monkeypatch, capsys):
    real = sweep.run_cell

    def flaky(ds, gamma, k, *a, **kw):
        if gamma == 1.0:
            raise RuntimeError("diverged")
        return real(ds, gamma, k, *a, **kw)

    monkeypatch.setattr(sweep, "run_cell", flaky)
    code = main(["sweep", "--dataset", str(manifest), "--out", str(tmp_path / "o"), "--margins", "0.5,1", "--dims", "4",
                 *FAST])
    assert code == EXIT_PARTIAL
    assert "FAILED gamma=1 k=4" in capsys.readouterr().out


def test_eval_single_cell(manifest, tmp_path, capsys):
    out = tmp_path / "ev"
    ckpt = tmp_path / "m.ckpt"
    code = main(["eval", "--dataset", str(manifest), "--margin", "1.0", "--dim", "8", "--max-epochs", "3",
                 "--replicas", "2", "--out", str(out), "--checkpoint", str(ckpt)])
    assert code == EXIT_OK
    printed = dict(line.split("\t") for line in capsys.readouterr().out.strip().splitlines())
    assert printed["target_relation"] == "inGroup"
    lp = list(csv.DictReader(open(out / "lp_report.csv")))
    assert len(lp) == 1 and lp[0]["k"] == "8"
    assert abs(float(lp[0]["mrr"]) - float(printed["mrr"])) < 1e-6
    assert load_checkpoint(ckpt, expected_dim=8).dim == 8
    log = (out / "trainlog.csv").read_text().splitlines()
    assert log[0] == "replica,epoch,mean_loss,valid_mrr" and len(log) == 3


def test_hard_errors_exit_1(tmp_path):
    assert main(["stats", "--dataset", str(tmp_path / "missing.txt")]) == EXIT_ERROR
    bad = tmp_path / "bad.txt"
    bad.write_text("learn=l.tsv\nvalid=v.tsv\ntest=t.tsv\n")
    (tmp_path / "l.tsv").write_text("a:x\tr\tb:y\n")
    (tmp_path / "v.tsv").write_text("a:x\tr\n")
    (tmp_path / "t.tsv").write_text("")
    assert main(["stats", "--dataset", str(bad)]) == EXIT_ERROR
    assert main(["sweep", "--dataset", str(bad), "--out", str(tmp_path / "o"), "--margins", "2,1"]) == EXIT_ERROR


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "marginkge.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for verb in ("sweep", "eval", "synth", "report", "stats"):
        assert verb in res.stdout
