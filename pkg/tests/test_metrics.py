import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crlkit.metrics import (NEGATIVE_DENOMINATOR, POSITIVE_BACKWARD, POSITIVE_FORWARD, UNDEFINED, aggregate,
                            format_table, forward_transfer, normalized_rewards, retention)
from crlkit.runner import RunRecord
from crlkit.storage import read_summary_csv

FIX = Path(__file__).parent / "fixtures"


def record(matrix, method="m", seed=0):
    m = np.asarray(matrix, dtype=float)
    return RunRecord(method, "slide", seed, len(m), eval=m)


def upper(diag, last_col):
    T = len(diag)
    m = np.full((T, T), np.nan)
    for i in range(T):
        for j in range(i, T):
            m[i, j] = diag[i]
        m[i, T - 1] = last_col[i]
    return m


def test_identity_is_100_percent():
    r = retention(record(upper([3.0, 5.0, 7.0], [3.0, 5.0, 7.0])))
    assert r.values == [100.0, 100.0] and r.average == 100.0


def test_half_retention():
    r = retention(record(upper([4.0, 1.0], [2.0, 1.0])))
    assert r.values == [50.0] and r.average == 50.0


def test_positive_backward_transfer_label():
    r = retention(record(upper([2.0, 1.0], [3.0, 1.0])))
    assert r.values == [150.0] and POSITIVE_BACKWARD in r.flags[0]


def test_near_zero_denominator_is_undefined():
    r = retention(record(upper([1e-9, 10.0, 5.0], [1.0, 10.0, 5.0])))
    assert math.isnan(r.values[0]) and r.flags[0] == [UNDEFINED]
    assert math.isnan(r.average)
    assert r.values[1] == 100.0


def test_negative_denominator_is_flagged():
    r = retention(record(upper([-2.0, 1.0], [-1.0, 1.0])))
    assert r.values == [50.0] and NEGATIVE_DENOMINATOR in r.flags[0]


def test_forward_transfer_excludes_task_one():
    rec = record(upper([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]))
    ft = forward_transfer(rec, {1: 1000.0, 2: 2.0, 3: 1.5})
    assert ft.tasks == [2, 3] and ft.values == [100.0, 200.0]
    assert ft.average == 150.0 and POSITIVE_FORWARD in ft.flags[1]


def test_missing_reference_is_undefined():
    ft = forward_transfer(record(upper([1.0, 2.0], [1.0, 2.0])), {1: 1.0})
    assert math.isnan(ft.values[0]) and ft.flags[0] == [UNDEFINED]


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.floats(0.1, 100.0), min_size=9, max_size=9), c=st.floats(0.01, 100.0))
def test_ratios_are_scale_invariant(vals, c):
    m = np.array(vals).reshape(3, 3)
    rs = {i + 1: v for i, v in enumerate(np.array(vals[:3]) + 1.0)}
    a, b = retention(record(m)), retention(record(c * m))
    np.testing.assert_allclose(a.values, b.values, rtol=1e-9)
    fa = forward_transfer(record(m), rs)
    fb = forward_transfer(record(c * m), {k: c * v for k, v in rs.items()})
    np.testing.assert_allclose(fa.values, fb.values, rtol=1e-9)


def test_aggregate_mean_and_population_std():
    recs = [record(upper([1.0, 1.0], [0.8, 1.0]), seed=0), record(upper([1.0, 1.0], [1.2, 1.0]), seed=1)]
    row = aggregate(recs).get("m", "retention", "avg")
    assert row.mean == pytest.approx(100.0) and row.std == pytest.approx(20.0) and row.n == 2


def test_identical_seeds_have_zero_std_and_one_seed_has_none():
    rec = record(upper([1.0, 2.0], [0.5, 2.0]))
    assert aggregate([rec] * 4).get("m", "retention", "1").std == 0.0
    assert aggregate([rec]).get("m", "retention", "1").std is None


def test_aggregate_forward_transfer_uses_each_seeds_reference():
    recs = [record(upper([1.0, 2.0], [1.0, 2.0]), seed=s) for s in (0, 1)]
    table = aggregate(recs, {0: {2: 2.0}, 1: {2: 4.0}})
    assert table.get("m", "forward_transfer", "2").mean == pytest.approx(75.0)


def test_normalized_rewards():
    np.testing.assert_allclose(normalized_rewards([1.0, 2.0], 4.0), [0.25, 0.5])
    with pytest.raises(ValueError):
        normalized_rewards([1.0], 0.0)


def test_report_matches_golden_file():
    table = read_summary_csv(FIX / "summary.csv")
    text = format_table(table, "golden")
    assert text == (FIX / "table.txt").read_text(encoding="utf-8")


def test_task_one_reference_does_not_move_the_guard():
    r = np.array([[1e9, 0.0], [np.nan, 4.0]])
    ft = forward_transfer(r, {1: 1e9, 2: 8.0})
    assert ft.values == [50.0]
