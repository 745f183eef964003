import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from crlkit.errors import CheckpointError
from crlkit.metrics import aggregate
from crlkit.rng import RNGStreams
from crlkit.runner import RunRecord
from crlkit.storage import (FORMAT_VERSION, MAGIC, dumps_checkpoint, fmt, load_checkpoint, loads_checkpoint,
                            read_eval_csv, read_rstar_csv, read_summary_csv, read_trace_csv, save_checkpoint,
                            write_eval_csv, write_rstar_csv, write_summary_csv, write_trace_csv)


def payload():
    streams = RNGStreams(3)
    streams["cem"].standard_normal(5)
    return {"meta": {"method": "ewc", "task": 2, "seed": 3},
            "learner": {"net.params": np.linspace(-1, 1, 7), "task": np.array(2), "flags": np.array([True, False]),
                        "store.quotas": np.array([[1, 9]], dtype=np.int64), "empty": np.zeros((0, 4))},
            "rng": streams.state_dict(), "config": {"seeds": [3], "clip": None, "lr": 1e-3}}


def same(a, b):
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(same(a[k], b[k]) for k in a)
    if isinstance(a, np.ndarray):
        return a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)
    return a == b


def test_round_trip_identity(tmp_path):
    p = payload()
    save_checkpoint(p, tmp_path / "x.ckpt")
    assert same(load_checkpoint(tmp_path / "x.ckpt"), p)


@settings(max_examples=30, deadline=None)
@given(a=hnp.arrays(st.sampled_from([np.float64, np.int64, np.float32]), hnp.array_shapes(min_dims=0, max_dims=3)))
def test_any_array_round_trips_bit_exactly(a):
    back = loads_checkpoint(dumps_checkpoint({"a": a}))["a"]
    assert back.dtype == a.dtype and back.shape == a.shape
    assert back.tobytes() == a.tobytes()


def test_restored_rng_continues_identically():
    s = RNGStreams(9)
    s["train"].random(3)
    restored = RNGStreams(9)
    restored.load_state_dict(loads_checkpoint(dumps_checkpoint({"rng": s.state_dict()}))["rng"])
    np.testing.assert_array_equal(restored["train"].random(4), s["train"].random(4))


def test_serialization_is_deterministic():
    assert dumps_checkpoint(payload()) == dumps_checkpoint(payload())


def test_corruption_is_detected():
    blob = bytearray(dumps_checkpoint(payload()))
    blob[len(blob) // 2] ^= 0x01
    with pytest.raises(CheckpointError, match="integrity"):
        loads_checkpoint(bytes(blob))
    with pytest.raises(CheckpointError, match="truncated"):
        loads_checkpoint(bytes(blob[:10]))


def test_other_versions_are_refused():
    blob = bytearray(dumps_checkpoint(payload()))
    blob[8:12] = (FORMAT_VERSION + 1).to_bytes(4, "little")
    with pytest.raises(CheckpointError, match="version"):
        loads_checkpoint(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        loads_checkpoint(b"X" * len(MAGIC) + bytes(blob[8:]))


def test_unstorable_values_rejected():
    with pytest.raises(CheckpointError):
        dumps_checkpoint({"x": object()})
    with pytest.raises(CheckpointError):
        dumps_checkpoint({"x": float("nan")})


def rec():
    r = RunRecord("hypercrl", "slide", 0, 2)
    r.trace = [(1, 1, 12.3456789), (2, 1, -0.000123456789), (3, 2, 1e7 / 3)]
    r.eval[:] = [[1.0, 0.5], [np.nan, 2.0 / 3.0]]
    return r


def test_trace_csv_format(tmp_path):
    write_trace_csv(rec(), tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_bytes() == b"episode,task,reward\n1,1,12.3457\n2,1,-0.000123457\n3,2,3.33333e+06\n"
    assert read_trace_csv(tmp_path / "t.csv")[0] == (1, 1, 12.3457)


def test_eval_csv_round_trip(tmp_path):
    write_eval_csv(rec(), tmp_path / "e.csv")
    m = read_eval_csv(tmp_path / "e.csv", 2)
    np.testing.assert_allclose(m, [[1.0, 0.5], [np.nan, 0.666667]])


def test_summary_csv_schema(tmp_path):
    r = rec()
    write_summary_csv(aggregate([r]), tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text(encoding="utf-8")
    assert text == "method,metric,task,mean,std\nhypercrl,retention,1,50,n/a\nhypercrl,retention,avg,50,n/a\n"
    assert read_summary_csv(tmp_path / "s.csv").get("hypercrl", "retention", "1").mean == 50.0


def test_rstar_csv_round_trip(tmp_path):
    values = {0: {1: 10.0, 2: 20.5}, 1: {1: 11.0}}
    write_rstar_csv(values, tmp_path / "r.csv")
    assert read_rstar_csv(tmp_path / "r.csv") == values


def test_fmt_six_significant_digits():
    assert fmt(123456789.0) == "1.23457e+08" and fmt(0.1) == "0.1" and fmt(float("nan")) == "nan"


def test_bad_header_rejected(tmp_path):
    (tmp_path / "t.csv").write_text("a,b,c\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_trace_csv(tmp_path / "t.csv")
