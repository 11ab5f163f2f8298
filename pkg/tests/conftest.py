import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from asyncbcd.data import SyntheticSpec, gen_synthetic  # noqa: E402
from asyncbcd.problem import (L1, BlockPartition, CompositeProblem, DatasetMatrix,  # noqa: E402
                              ElasticNet, GroupL2, NoReg)


def small_problem(loss="squared", reg=None, n=6, l=5, k=3, ridge=0.0, seed=0, density=1.0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((l, n))
    if density < 1:
        A *= rng.random((l, n)) < density
        for i in range(l):
            if not A[i].any():
                A[i, rng.integers(n)] = 1.0
    if loss == "logistic":
        b = np.where(rng.standard_normal(l) >= 0, 1.0, -1.0)
    else:
        b = rng.standard_normal(l)
    reg = NoReg() if reg is None else reg
    return CompositeProblem(DatasetMatrix.from_dense(A, b), loss, reg, BlockPartition.contiguous(n, k), ridge)


REGS = {"none": NoReg(), "l1": L1(0.1), "group_l2": GroupL2(0.2), "elastic_net": ElasticNet(0.1, 0.3)}


@pytest.fixture
def quad():
    """5 components, 6 coordinates, 3 blocks, squared loss."""
    return small_problem()


@pytest.fixture(params=sorted(REGS))
def any_reg_problem(request):
    return small_problem(reg=REGS[request.param], ridge=0.05, seed=1)


def lasso_instance(n, l, k, lam=0.05, seed=0, density=0.2, noise=0.01):
    inst = gen_synthetic(SyntheticSpec(n=n, l=l, density=density, noise=noise, kind="lasso", seed=seed))
    return CompositeProblem(inst.data, "squared", L1(lam), BlockPartition.contiguous(n, k))


ACCEPTANCE_LINES = []


def record(num, title, ok, detail, status=None):
    """Store and print one acceptance verdict line; the caller asserts ``ok``."""
    status = status or ("PASS" if ok else "FAIL")
    line = f"[{status}] criterion {num}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
