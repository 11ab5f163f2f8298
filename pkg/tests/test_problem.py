import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from conftest import REGS, small_problem
from asyncbcd.problem import (L1, BlockPartition, CompositeProblem, DatasetMatrix, ElasticNet,
                              GroupL2, NoReg, make_regularizer)


class TestPartition:
    def test_contiguous_remainder_goes_last(self):
        P = BlockPartition.contiguous(10, 3)
        assert [g.tolist() for g in P.groups] == [[0, 1, 2], [3, 4, 5], [6, 7, 8, 9]]
        assert P.max_size == 4

    def test_coord_maps(self):
        P = BlockPartition(5, [[4, 0], [2], [1, 3]])
        assert P.coord_block.tolist() == [0, 2, 1, 2, 0]
        assert P.coord_pos.tolist() == [0, 0, 0, 1, 1]

    @pytest.mark.parametrize("groups", [[[0, 1], [1, 2]], [[0], [2]], [[0, 1, 2], []], [[0, 5]]])
    def test_rejects_bad_groups(self, groups):
        with pytest.raises(ValueError):
            BlockPartition(3, groups)

    def test_split_join_roundtrip(self):
        P = BlockPartition(6, [[5, 1], [0, 2, 3], [4]])
        x = np.arange(6.0)
        assert np.array_equal(P.join(P.split(x)), x)


class TestDataset:
    def test_rejects_duplicate_columns(self):
        import scipy.sparse as sp
        A = sp.csr_matrix((np.array([1.0, 2.0]), np.array([1, 1]), np.array([0, 2])), shape=(1, 3))
        with pytest.raises(ValueError, match="duplicate"):
            DatasetMatrix(A, [1.0])

    def test_label_count(self):
        with pytest.raises(ValueError):
            DatasetMatrix.from_dense(np.eye(3), [1.0, 2.0])

    def test_logistic_requires_signs(self):
        data = DatasetMatrix.from_dense(np.eye(2), [1.0, 0.5])
        with pytest.raises(ValueError):
            CompositeProblem(data, "logistic", NoReg(), BlockPartition.contiguous(2, 1))


@pytest.mark.parametrize("loss", ["squared", "logistic"])
def test_objective_and_gradient_match_dense_oracle(loss):
    P = small_problem(loss=loss, reg=L1(0.1), n=8, l=7, k=4, ridge=0.03, seed=2, density=0.6)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.standard_normal(P.n)
        assert P.objective(x) == pytest.approx(O.objective(P, x), rel=1e-13)
        np.testing.assert_allclose(P.grad_full(x), O.grad_f(P, x), rtol=1e-12, atol=1e-14)
        i = int(rng.integers(P.l))
        np.testing.assert_allclose(P.grad_component(i, x), O.grad_fi(P, i, x), rtol=1e-12, atol=1e-14)
        for j in range(P.k):
            np.testing.assert_allclose(P.block_grad_component(i, j, x),
                                       O.grad_fi(P, i, x)[P.partition.groups[j]], rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("loss", ["squared", "logistic"])
def test_finite_difference_gradient(loss):
    P = small_problem(loss=loss, n=10, l=8, k=5, ridge=0.01, seed=3)
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(50):
        i = int(rng.integers(P.l))
        x = rng.standard_normal(P.n)
        d = rng.standard_normal(P.n)
        fd = (P.component_value(i, x + h * d) - P.component_value(i, x - h * d)) / (2 * h)
        an = P.grad_component(i, x) @ d
        assert abs(fd - an) <= 1e-5 * max(1.0, abs(an))


def test_logistic_is_stable_for_large_margins():
    P = small_problem(loss="logistic", n=2, l=2, k=1)
    x = np.array([1e4, -1e4])
    assert np.isfinite(P.objective(x))
    assert np.all(np.isfinite(P.grad_full(x)))


def test_grad_full_independent_of_workers():
    from concurrent.futures import ThreadPoolExecutor
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5000, 7))
    P = CompositeProblem(DatasetMatrix.from_dense(A, rng.standard_normal(5000)), "squared", NoReg(),
                         BlockPartition.contiguous(7, 7))
    x = rng.standard_normal(7)
    with ThreadPoolExecutor(4) as ex:
        assert np.array_equal(P.grad_full(x), P.grad_full(x, workers=4, executor=ex))


class TestProx:
    @pytest.mark.parametrize("name", ["l1", "group_l2", "elastic_net"])
    def test_matches_numeric_minimizer(self, name):
        reg = REGS[name]
        rng = np.random.default_rng(7)
        for _ in range(15):
            v = rng.standard_normal(3) * 2
            step = rng.uniform(0.1, 3)
            got = reg.prox(v, step)
            want = O.prox_brute(name, reg.lam, getattr(reg, "lam2", 0.0), v, step)
            np.testing.assert_allclose(got, want, atol=1e-6)

    def test_group_zero_vector(self):
        assert np.array_equal(GroupL2(1.0).prox(np.zeros(3), 0.5), np.zeros(3))

    def test_group_threshold(self):
        v = np.array([3.0, 4.0])
        assert np.array_equal(GroupL2(1.0).prox(v, 5.0), np.zeros(2))
        np.testing.assert_allclose(GroupL2(1.0).prox(v, 1.0), v * 0.8)

    def test_noreg_is_identity(self):
        v = np.array([1.0, -2.0])
        assert np.array_equal(NoReg().prox(v, 3.0), v)

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            L1(1.0).prox(np.ones(2), 0.0)

    def test_factory(self):
        assert isinstance(make_regularizer("enet", 1, 2), ElasticNet)
        with pytest.raises(ValueError):
            make_regularizer("tv")

    @settings(max_examples=200, deadline=None)
    @given(st.sampled_from(["l1", "group_l2", "elastic_net"]),
           st.lists(st.floats(-50, 50), min_size=1, max_size=5),
           st.lists(st.floats(-50, 50), min_size=1, max_size=5),
           st.floats(1e-3, 10))
    def test_nonexpansive_and_optimal(self, name, a, b, step):
        reg = REGS[name]
        size = min(len(a), len(b))
        u, w = np.array(a[:size]), np.array(b[:size])
        pu, pw = reg.prox(u, step), reg.prox(w, step)
        assert np.linalg.norm(pu - pw) <= np.linalg.norm(u - w) * (1 + 1e-12) + 1e-12
        # prox optimality: u - p is a step-scaled subgradient, so for any z
        # step*g(z) >= step*g(p) + <u - p, z - p>
        rng = np.random.default_rng(size)
        for z in rng.standard_normal((5, size)) * 10:
            lhs = step * reg.value(z)
            rhs = step * reg.value(pu) + (u - pu) @ (z - pu)
            assert lhs >= rhs - 1e-9 * max(1.0, abs(lhs))


def test_prox_block_checks_size(quad):
    with pytest.raises(ValueError):
        quad.prox_block(0, np.ones(5), 1.0)
