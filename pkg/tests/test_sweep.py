import math
import time

import pytest

import marginkge.sweep as sweep
from marginkge.classifier import ClassifierConfig
from marginkge.kg import write_dataset
from marginkge.synth import FUNCTIONAL_RELATION, generate_synthetic, tag_count
from marginkge.sweep import (
    CELL_DIR,
    DEFAULT_DIMS,
    DEFAULT_MARGINS,
    SweepCell,
    SweepConfig,
    SweepGrid,
    cell_filename,
    read_cells_csv,
    run_sweep,
    write_cells_csv,
)
from marginkge.trainer import TrainConfig

FAST_TRAIN = TrainConfig(max_epochs=4, eval_every=2, replicas=1)
FAST_CLS = ClassifierConfig(max_epochs=4)


@pytest.fixture(scope="module")
def tiny():
    return generate_synthetic(20, 1)


def fast_config(out, **kw):
    kw.setdefault("train", FAST_TRAIN)
    kw.setdefault("classifier", FAST_CLS)
    kw.setdefault("parallel", 1)
    return SweepConfig(out_dir=out, **kw)


def test_synthetic_deterministic_and_shaped():
    a, b = generate_synthetic(100, 7), generate_synthetic(100, 7)
    for name in ("learn", "valid", "tune", "test"):
        assert (a.split(name) == b.split(name)).all()
    assert generate_synthetic(100, 8).learn.tolist() != a.learn.tolist()
    assert a.vocab.n_types == 3 and a.vocab.n_relations == 3
    all_t = a.all_triples()
    rid = a.vocab.relations.id(FUNCTIONAL_RELATION)
    func = all_t[all_t[:, 1] == rid]
    assert sorted(func[:, 0].tolist()) == list(range(100))
    assert all(t == h % 2 for h, _, t in func.tolist())
    other = [r for r in range(3) if r != rid]
    fan = {r: all_t[all_t[:, 1] == r] for r in other}
    counts = sorted(len(v) for v in fan.values())
    assert counts[0] == 100  # one-to-one
    assert 100 <= counts[1] <= 300  # fan-out 1-3
    assert len(all_t) == 100 * 2 + counts[1]


def test_synthetic_split_fractions():
    ds = generate_synthetic(200, 3)
    n = len(ds.all_triples())
    assert len(ds.learn) == math.floor(0.8 * n)
    assert len(ds.valid) == len(ds.tune) == math.floor(0.05 * n)
    assert len(ds.test) == n - len(ds.learn) - 2 * len(ds.valid)
    assert ds.vocab.entity_count(ds.vocab.types.id("tag")) == tag_count(200)


def test_synthetic_rejects_tiny():
    with pytest.raises(ValueError):
        generate_synthetic(3, 0)


def test_config_validation(tmp_path):
    assert SweepConfig().margins == DEFAULT_MARGINS and SweepConfig().dims == DEFAULT_DIMS
    with pytest.raises(ValueError):
        SweepConfig(margins=(1.0, 0.5))
    with pytest.raises(ValueError):
        SweepConfig(margins=())
    with pytest.raises(ValueError):
        SweepConfig(dims=(0,))
    assert SweepConfig(parallel=8).workers(3) == 3


def test_cell_csv_round_trip(tmp_path):
    cells = [
        SweepCell("d", 0.25, 32, mrr=1 / 3, mr=2.5, hits1=0.1, hits3=0.2, hits10=0.3, mrr_r=0.7,
                  target_relation="rel,with comma", n_classes=3, cls_val_acc=0.5, cls_acc=0.6, cls_epochs=40,
                  replica=2, best_epoch=30, valid_mrr=0.123456789012345, seconds=1.5),
        SweepCell("d", 4.0, 128, status="failed", error='ValueError: "quoted"\nline'),
    ]
    path = tmp_path / "c.csv"
    write_cells_csv(cells, path)
    back = read_cells_csv(path)
    assert [c.content_key() for c in back][0] == cells[0].content_key()
    assert back[1].status == "failed" and back[1].error == cells[1].error
    assert math.isnan(back[1].mrr)


@pytest.mark.slow
def test_single_cell_under_a_minute(tmp_path):
    ds = generate_synthetic(200, 7)
    start = time.perf_counter()
    grid = run_sweep(ds, SweepConfig(margins=(1.0,), dims=(8,), out_dir=tmp_path, parallel=1,
                                     train=TrainConfig(max_epochs=200, replicas=1)))
    assert time.perf_counter() - start < 60
    cell = grid.get(1.0, 8)
    assert cell.complete and cell.target_relation == FUNCTIONAL_RELATION
    assert 0 < cell.mrr <= 1 and cell.mr >= 1 and 0 <= cell.cls_acc <= 1


def test_default_grid_has_21_cells(tmp_path, tiny):
    grid = run_sweep(tiny, fast_config(tmp_path, parallel=0))
    assert len(grid.cells) == 21
    assert all(grid.completeness().values())
    assert len(list((tmp_path / CELL_DIR).glob("cell_g*_k*.csv"))) == 21


def test_resume_recomputes_only_missing(tmp_path, tiny, monkeypatch):
    cfg = fast_config(tmp_path, margins=(0.5, 1.0, 2.0), dims=(4, 8))
    first = run_sweep(tiny, cfg)
    (tmp_path / CELL_DIR / cell_filename(1.0, 8)).unlink()
    calls = []
    real = sweep.run_cell

    def spy(ds, gamma, k, *a, **kw):
        calls.append((gamma, k))
        return real(ds, gamma, k, *a, **kw)

    monkeypatch.setattr(sweep, "run_cell", spy)
    second = run_sweep(tiny, cfg)
    assert calls == [(1.0, 8)]
    assert [c.content_key() for c in second.ordered()] == [c.content_key() for c in first.ordered()]


def test_other_dataset_cells_not_reused(tmp_path, tiny, monkeypatch):
    cfg = fast_config(tmp_path, margins=(1.0,), dims=(4,))
    run_sweep(tiny, cfg)
    calls = []
    monkeypatch.setattr(sweep, "run_cell", lambda *a, **k: calls.append(a[1:3]) or SweepCell("x", 1.0, 4))
    run_sweep(generate_synthetic(20, 2), cfg)
    assert calls == [(1.0, 4)]


def test_failed_cell_recorded_and_sweep_continues(tmp_path, tiny, monkeypatch):
    real = sweep.run_cell

    def flaky(ds, gamma, k, *a, **kw):
        if gamma == 2.0:
            raise RuntimeError("diverged")
        return real(ds, gamma, k, *a, **kw)

    monkeypatch.setattr(sweep, "run_cell", flaky)
    grid = run_sweep(tiny, fast_config(tmp_path, margins=(0.5, 1.0, 2.0), dims=(4,)))
    failed = grid.failed()
    assert [(c.gamma, c.k) for c in failed] == [(2.0, 4)]
    assert "diverged" in failed[0].error
    assert grid.get(0.5, 4).complete and grid.get(1.0, 4).complete
    assert not grid.completeness()[(2.0, 4)]

    # a failed cell is retried on the next run
    monkeypatch.setattr(sweep, "run_cell", real)
    again = run_sweep(tiny, fast_config(tmp_path, margins=(0.5, 1.0, 2.0), dims=(4,)))
    assert not again.failed()


def test_parallel_and_order_independent(tmp_path, tiny):
    seq = run_sweep(tiny, fast_config(tmp_path / "a", margins=(0.5, 1.0, 2.0), dims=(4, 8)))
    par = run_sweep(tiny, fast_config(tmp_path / "b", margins=(0.5, 1.0, 2.0), dims=(4, 8), parallel=3))
    assert [c.content_key() for c in seq.ordered()] == [c.content_key() for c in par.ordered()]


def test_grid_from_cells(tiny, tmp_path):
    grid = run_sweep(tiny, fast_config(tmp_path, margins=(0.5, 1.0), dims=(4,)))
    rebuilt = SweepGrid.from_cells(read_cells_csv_all(tmp_path))
    assert rebuilt.margins == grid.margins and rebuilt.dims == grid.dims
    assert [c.content_key() for c in rebuilt.ordered()] == [c.content_key() for c in grid.ordered()]


def read_cells_csv_all(out):
    return [c for p in sorted((out / CELL_DIR).glob("cell_*.csv")) for c in read_cells_csv(p)]


def test_sweep_reproducible_from_manifest(tmp_path, tiny):
    from marginkge.kg import load_manifest

    manifest = write_dataset(tiny, tmp_path / "ds")
    loaded = load_manifest(manifest)
    a = run_sweep(loaded, fast_config(tmp_path / "a", margins=(1.0,), dims=(4,)))
    b = run_sweep(loaded, fast_config(tmp_path / "b", margins=(1.0,), dims=(4,)))
    assert a.get(1.0, 4).content_key() == b.get(1.0, 4).content_key()
