import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from marginkge.stats import (
    MetricSeries,
    UndefinedCorrelation,
    average_ranks,
    coefficient_table,
    correlate_sweep,
    pearson,
    spearman,
)
from marginkge.sweep import SweepCell, SweepGrid


def two_pass_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def brute_ranks(v):
    # rank = 1 + count(strictly smaller) + (count(equal) - 1) / 2
    return [1 + sum(w < a for w in v) + (sum(w == a for w in v) - 1) / 2 for a in v]


def test_exact_linear():
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson([1, 2, 3], [5, 3, 1]) == -1.0
    assert pearson(MetricSeries([1, 2, 3], [-1, -2, -3])) == -1.0


def test_monotone_spearman_exact():
    x = [0.1, 0.3, 0.35, 0.9, 1.4, 2.0, 7.0]
    assert spearman(x, [v ** 3 for v in x]) == 1.0
    assert spearman(x, [math.exp(-v) for v in x]) == -1.0


@pytest.mark.parametrize("ties", [False, True])
def test_reference_oracles(ties):
    rng = np.random.default_rng(17 + ties)
    for _ in range(50):
        if ties:
            x = rng.integers(0, 4, size=7).astype(float)
            y = rng.integers(0, 4, size=7).astype(float)
        else:
            x, y = rng.random(7), rng.random(7)
        if len(set(x)) == 1 or len(set(y)) == 1:
            continue
        assert abs(pearson(x, y) - two_pass_pearson(list(x), list(y))) < 1e-10
        assert abs(pearson(x, y) - scipy.stats.pearsonr(x, y)[0]) < 1e-10
        rank_oracle = two_pass_pearson(brute_ranks(list(x)), brute_ranks(list(y)))
        assert abs(spearman(x, y) - rank_oracle) < 1e-10
        assert abs(spearman(x, y) - scipy.stats.spearmanr(x, y)[0]) < 1e-10


def test_average_ranks():
    np.testing.assert_array_equal(average_ranks([3, 1, 3, 2]), [3.5, 1, 3.5, 2])
    np.testing.assert_array_equal(average_ranks([5, 5, 5]), [2, 2, 2])


def test_constant_series_undefined():
    with pytest.raises(UndefinedCorrelation):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelation):
        spearman([1, 2, 3], [4, 4, 4])
    with pytest.raises(UndefinedCorrelation):
        pearson([1, 2], [1, 2])


def test_series_validation():
    with pytest.raises(ValueError):
        MetricSeries([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        MetricSeries([1, 2, float("nan")], [1, 2, 3])


distinct7 = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=7, max_size=7, unique=True)


@settings(max_examples=100)
@given(distinct7, distinct7)
def test_classical_spearman_formula(x, y):
    rx, ry = brute_ranks(x), brute_ranks(y)
    n = 7
    d2 = sum((a - b) ** 2 for a, b in zip(rx, ry))
    assert abs(spearman(x, y) - (1 - 6 * d2 / (n * (n * n - 1)))) < 1e-12


series = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=12)


@settings(max_examples=100)
@given(series, st.data())
def test_range_symmetry_invariance(x, data):
    y = data.draw(st.lists(st.floats(-100, 100, allow_nan=False), min_size=len(x), max_size=len(x)))
    assume(np.ptp(x) > 1e-3 and np.ptp(y) > 1e-3)
    p, s = pearson(x, y), spearman(x, y)
    assert -1 <= p <= 1 and -1 <= s <= 1
    assert p == pytest.approx(pearson(y, x), abs=1e-12)
    assert s == pytest.approx(spearman(y, x), abs=1e-12)
    a = data.draw(st.floats(0.1, 10))
    b = data.draw(st.floats(-10, 10))
    assert pearson([a * v + b for v in x], y) == pytest.approx(p, abs=1e-9)
    # strictly monotone transform preserves the order, hence the ranks
    assert spearman([math.atan(v) * 3 + v for v in x], y) == pytest.approx(s, abs=1e-12)


def _grid(dims, margins, fn):
    grid = SweepGrid("toy", tuple(margins), tuple(dims))
    for k in dims:
        for i, g in enumerate(margins):
            mrr, mrr_r, acc = fn(k, i)
            grid.add(SweepCell("toy", g, k, mrr=mrr, mrr_r=mrr_r, cls_acc=acc))
    return grid


def test_correlate_sweep_monotone_row():
    grid = _grid([32], [0.25, 0.5, 1.0, 2.0], lambda k, i: (0.1 * i, 0.2 * i + 0.1, 0.5 + 0.1 * i))
    rows = correlate_sweep(grid)
    assert [(r.k, r.metric) for r in rows] == [(32, "mrr"), (32, "mrr_r")]
    for r in rows:
        assert r.pearson == pytest.approx(1.0) and r.spearman == 1.0


def test_correlate_sweep_composes_pairwise():
    rng = np.random.default_rng(0)
    vals = rng.random((3, 7, 3))
    dims = [32, 64, 128]
    grid = _grid(dims, [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0], lambda k, i: tuple(vals[dims.index(k), i]))
    rows = correlate_sweep(grid)
    assert len(rows) == 6
    for r in rows:
        j = dims.index(r.k)
        col = 0 if r.metric == "mrr" else 1
        assert r.pearson == pearson(vals[j, :, col], vals[j, :, 2])
        assert r.spearman == spearman(vals[j, :, col], vals[j, :, 2])
    table = coefficient_table(rows)
    assert table.count("k = ") == 6 and "Pearson" in table and "Spearman" in table


def test_correlate_sweep_too_few_or_constant():
    grid = _grid([8], [0.5, 1.0], lambda k, i: (0.1 * i, 0.1 * i, 0.5))
    rows = correlate_sweep(grid)
    assert all(r.pearson is None and "2 completed" in r.reason for r in rows)
    grid = _grid([8], [0.5, 1.0, 2.0], lambda k, i: (0.1 * i, 0.1 * i, 0.5))
    rows = correlate_sweep(grid)
    assert all(r.pearson is None and r.spearman is None and "constant" in r.reason for r in rows)
    assert "n/a" in coefficient_table(rows)


def test_failed_cells_excluded():
    grid = _grid([8], [0.5, 1.0, 2.0, 3.0], lambda k, i: (0.1 * i, 0.1 * i, 0.2 * i))
    grid.add(SweepCell("toy", 3.0, 8, status="failed", error="boom"))
    rows = correlate_sweep(grid)
    assert all(r.n == 3 and r.pearson == pytest.approx(1.0) for r in rows)
