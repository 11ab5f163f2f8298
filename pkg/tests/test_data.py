import numpy as np
import pytest

from asyncbcd.data import (LibsvmFormatError, SyntheticSpec, gen_synthetic, load_libsvm,
                           read_partition, save_libsvm)


def write(tmp_path, text, name="d.svm"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_basic(tmp_path):
    d = load_libsvm(write(tmp_path, "1 1:0.5 3:2.0\n"))
    assert d.b.tolist() == [1.0]
    assert d.n == 3
    assert d.A.toarray().tolist() == [[0.5, 0.0, 2.0]]


def test_comments_blank_lines_and_override(tmp_path):
    d = load_libsvm(write(tmp_path, "# header\n\n-1 2:1 # trailing\n+1\n"), n=5)
    assert d.l == 2 and d.n == 5
    assert d.A.toarray()[0].tolist() == [0, 1, 0, 0, 0]
    assert d.A[1].nnz == 0


def test_unsorted_features_are_sorted(tmp_path):
    d = load_libsvm(write(tmp_path, "0 3:3 1:1\n"))
    assert d.A.indices.tolist() == [0, 2]


@pytest.mark.parametrize("text,line,needle", [
    ("1 1:1\n1 3:1 3:2\n", 2, "duplicate"),
    ("1 0:1\n", 1, "1-based"),
    ("x 1:1\n", 1, "label"),
    ("1 1:1\n1 2-3\n", 2, "feature"),
    ("1 a:1\n", 1, "feature"),
])
def test_malformed_reports_line(tmp_path, text, line, needle):
    with pytest.raises(LibsvmFormatError, match=needle) as ei:
        load_libsvm(write(tmp_path, text))
    assert ei.value.lineno == line
    assert f":{line}:" in str(ei.value)


def test_empty_and_too_small_override(tmp_path):
    with pytest.raises(ValueError):
        load_libsvm(write(tmp_path, "# nothing\n"))
    with pytest.raises(ValueError):
        load_libsvm(write(tmp_path, "1 4:1\n"), n=3)


def test_roundtrip(tmp_path):
    inst = gen_synthetic(SyntheticSpec(n=30, l=20, density=0.2, seed=4))
    p = tmp_path / "r.svm"
    save_libsvm(inst.data, p)
    back = load_libsvm(p, n=30)
    assert np.array_equal(back.b, inst.data.b)
    assert (back.A != inst.data.A).nnz == 0


class TestSynthetic:
    def test_deterministic(self):
        s = SyntheticSpec(n=40, l=30, density=0.1, seed=9)
        a, b = gen_synthetic(s), gen_synthetic(s)
        assert np.array_equal(a.data.A.toarray(), b.data.A.toarray())
        assert np.array_equal(a.data.b, b.data.b)
        assert np.array_equal(a.x_planted, b.x_planted)

    def test_dense_rows(self):
        inst = gen_synthetic(SyntheticSpec(n=7, l=5, density=1.0))
        assert inst.data.A.nnz == 35

    def test_every_row_nonempty(self):
        inst = gen_synthetic(SyntheticSpec(n=50, l=200, density=0.001))
        assert np.all(np.diff(inst.data.A.indptr) >= 1)

    def test_unit_variance_entries(self):
        inst = gen_synthetic(SyntheticSpec(n=200, l=200, density=0.5))
        assert np.var(inst.data.A.data) == pytest.approx(1.0, abs=0.05)

    def test_logistic_labels(self):
        inst = gen_synthetic(SyntheticSpec(kind="logistic", seed=1))
        assert set(np.unique(inst.data.b)) <= {-1.0, 1.0}
        assert inst.loss == "logistic" and inst.ridge == 0.0

    def test_strongly_convex(self):
        inst = gen_synthetic(SyntheticSpec(n=20, l=40, kind="strongly_convex", ridge=0.05))
        assert inst.ridge == 0.05
        with pytest.raises(ValueError):
            gen_synthetic(SyntheticSpec(n=50, l=40, kind="strongly_convex"))

    @pytest.mark.parametrize("kw", [dict(n=0), dict(density=0.0), dict(density=1.5), dict(noise=-1),
                                    dict(kind="huber")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            gen_synthetic(SyntheticSpec(**kw))


def test_read_partition(tmp_path):
    p = write(tmp_path, "0 2\n# comment\n1 3\n", "part.txt")
    P = read_partition(p, 4)
    assert [g.tolist() for g in P.groups] == [[0, 2], [1, 3]]
    with pytest.raises(ValueError):
        read_partition(write(tmp_path, "0 x\n", "bad.txt"), 2)
