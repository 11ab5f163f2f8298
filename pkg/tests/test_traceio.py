import json

import numpy as np
import pytest

from asyncbcd.solver import Trace, TraceRecord
from asyncbcd.traceio import HEADER, read_config, read_trace, read_vector, write_trace, write_vector


def rec(e, gap=None):
    return TraceRecord(epoch=e, inner_iter=10 * e, time_ms=1.5 * e, objective=1 / 3 + e,
                       max_staleness=e % 2, gap=gap)


def test_single_record_is_two_lines(tmp_path):
    p = tmp_path / "t.csv"
    write_trace(Trace([rec(1)]), p)
    text = p.read_bytes().decode()
    assert text.count("\n") == 2 and "\r" not in text
    lines = text.splitlines()
    assert lines[0] == HEADER == "epoch,inner_iter,time_ms,objective,gap,max_staleness"
    assert lines[1] == "1,10,1.5,1.3333333333333333,,1"


def test_seventeen_digits_roundtrip(tmp_path):
    p = tmp_path / "t.csv"
    t = Trace([rec(e, gap=0.1 * e) for e in range(1, 4)])
    write_trace(t, p, comment={"b": 1, "a": "x"})
    comment, rows = read_trace(p)
    assert json.loads(comment) == {"a": "x", "b": 1}
    for r, row in zip(t.records, rows):
        assert row["objective"] == r.objective and row["gap"] == r.gap
    assert "0.30000000000000004" in p.read_text()


def test_timing_off_blanks_time(tmp_path):
    p = tmp_path / "t.csv"
    write_trace(Trace([rec(1)]), p, timing=False)
    assert p.read_text().splitlines()[1] == "1,10,,1.3333333333333333,,1"


def test_empty_trace_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_trace(Trace(), tmp_path / "t.csv")


def test_read_trace_rejects_missing_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n")
    with pytest.raises(ValueError):
        read_trace(p)


def test_vector_roundtrip(tmp_path):
    x = np.array([0.1, -1e-300, 3.0, np.pi])
    p = tmp_path / "x.txt"
    write_vector(x, p)
    assert len(p.read_text().splitlines()) == 4
    assert np.array_equal(read_vector(p), x)


def test_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# run\nthreads = 4\n--gamma=0.1  # step\n\nmax-extra = 2\n")
    assert read_config(p) == {"threads": "4", "gamma": "0.1", "max_extra": "2"}
    p.write_text("threads 4\n")
    with pytest.raises(ValueError, match=":1:"):
        read_config(p)
