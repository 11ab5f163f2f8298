"""Composite objectives F(x) = f(x) + g(x).

``f`` is the mean of generalized-linear components
``f_i(x) = phi(a_i^T x, b_i) + (ridge / 2) ||x||^2`` over sparse rows ``a_i``;
``g`` is separable over the blocks of a :class:`BlockPartition`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels as K

# components per chunk of the full-gradient reduction; tied to l only so the
# summation tree never depends on how many workers evaluate it
_MIN_CHUNK = 1024
_MAX_CHUNKS = 64


class BlockPartition:
    """Ordered partition of ``range(n)`` into nonempty coordinate groups."""

    def __init__(self, n: int, groups: Sequence[Sequence[int]]):
        n = int(n)
        if n < 1:
            raise ValueError("partition needs n >= 1")
        if len(groups) < 1:
            raise ValueError("partition needs at least one group")
        arrs = []
        for j, g in enumerate(groups):
            a = np.asarray(g, dtype=np.int64).ravel()
            if a.size == 0:
                raise ValueError(f"group {j} is empty")
            arrs.append(np.sort(a))
        order = np.concatenate(arrs)
        if order.min() < 0 or order.max() >= n:
            raise ValueError("group index out of range [0, n)")
        if order.size != n or np.unique(order).size != n:
            raise ValueError("groups must be disjoint and cover every coordinate exactly once")
        self.n = n
        self.groups = arrs
        self.order = order
        self.ptr = np.zeros(len(arrs) + 1, dtype=np.int64)
        self.ptr[1:] = np.cumsum([a.size for a in arrs])
        self.coord_block = np.empty(n, dtype=np.int64)
        self.coord_pos = np.empty(n, dtype=np.int64)
        for j, a in enumerate(arrs):
            self.coord_block[a] = j
            self.coord_pos[a] = np.arange(a.size)

    @classmethod
    def contiguous(cls, n: int, k: int) -> "BlockPartition":
        """k contiguous groups of size n // k; the last one absorbs the remainder."""
        if not 1 <= k <= n:
            raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
        size = n // k
        bounds = [j * size for j in range(k)] + [n]
        return cls(n, [range(bounds[j], bounds[j + 1]) for j in range(k)])

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def max_size(self) -> int:
        return int(np.diff(self.ptr).max())

    def size(self, j: int) -> int:
        return self.groups[j].size

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[g] for g in self.groups]

    def join(self, parts: Sequence[np.ndarray]) -> np.ndarray:
        x = np.empty(self.n)
        for g, part in zip(self.groups, parts):
            x[g] = part
        return x

    def scatter(self, j: int, values: np.ndarray) -> np.ndarray:
        """Full-length vector that is ``values`` on block j and zero elsewhere."""
        out = np.zeros(self.n)
        out[self.groups[j]] = values
        return out

    def __repr__(self):
        return f"BlockPartition(n={self.n}, k={self.k})"


class DatasetMatrix:
    """Sparse rows ``a_i`` (CSR, canonical: sorted, duplicate-free) and labels ``b_i``."""

    def __init__(self, rows: sp.spmatrix, labels, n: int | None = None):
        A = sp.csr_matrix(rows, dtype=np.float64)
        if n is not None:
            if A.nnz and A.indices.max() >= n:
                raise ValueError(f"column index >= n={n}")
            A = sp.csr_matrix((A.data, A.indices, A.indptr), shape=(A.shape[0], n))
        if not A.has_canonical_format:
            B = A.copy()
            B.sum_duplicates()
            if B.nnz != A.nnz:
                raise ValueError("duplicate column index within a row")
            A = B
        b = np.asarray(labels, dtype=np.float64).ravel()
        if b.size != A.shape[0]:
            raise ValueError(f"{A.shape[0]} rows but {b.size} labels")
        self.A = A
        self.b = b

    @classmethod
    def from_dense(cls, A, b) -> "DatasetMatrix":
        return cls(sp.csr_matrix(np.asarray(A, dtype=np.float64)), b)

    @classmethod
    def from_rows(cls, rows: Sequence[dict], labels, n: int) -> "DatasetMatrix":
        indptr = [0]
        indices, data = [], []
        for r, row in enumerate(rows):
            for c in sorted(row):
                if not 0 <= c < n:
                    raise ValueError(f"row {r}: index {c} outside [0, {n})")
                indices.append(c)
                data.append(row[c])
            indptr.append(len(indices))
        A = sp.csr_matrix((np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64),
                           np.asarray(indptr, dtype=np.int64)), shape=(len(rows), n))
        return cls(A, labels)

    @property
    def l(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.A.indptr[i], self.A.indptr[i + 1]
        return self.A.indices[lo:hi], self.A.data[lo:hi]


@dataclass(frozen=True)
class Loss:
    """phi(z, b) for a generalized linear component; ``curvature`` bounds phi''."""
    name: str
    code: int
    curvature: float

    def value(self, z, b):
        z = np.asarray(z, dtype=np.float64)
        if self.code == K.SQUARED:
            return 0.5 * (z - b) ** 2
        return np.logaddexp(0.0, -b * z)

    def deriv(self, z, b):
        z = np.asarray(z, dtype=np.float64)
        if self.code == K.SQUARED:
            return z - b
        t = -b * z
        # -b * sigmoid(t) in the overflow-free branch form
        e = np.exp(-np.abs(t))
        sig = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return -b * sig


SQUARED = Loss("squared", K.SQUARED, 1.0)
LOGISTIC = Loss("logistic", K.LOGISTIC, 0.25)
LOSSES = {"squared": SQUARED, "logistic": LOGISTIC}


def _check_step(step):
    if not step > 0:
        raise ValueError(f"prox step must be positive, got {step}")


@dataclass(frozen=True)
class NoReg:
    name = "none"
    code = K.REG_NONE

    def value(self, u) -> float:
        return 0.0

    def prox(self, v, step):
        _check_step(step)
        return np.array(v, dtype=np.float64)

    @property
    def params(self):
        return 0.0, 0.0


@dataclass(frozen=True)
class L1:
    """lam * ||u||_1 on every block."""
    lam: float
    name = "l1"
    code = K.REG_L1

    def value(self, u) -> float:
        return self.lam * float(np.abs(u).sum())

    def prox(self, v, step):
        _check_step(step)
        v = np.asarray(v, dtype=np.float64)
        return np.sign(v) * np.maximum(np.abs(v) - step * self.lam, 0.0)

    @property
    def params(self):
        return float(self.lam), 0.0


@dataclass(frozen=True)
class GroupL2:
    """lam * ||u||_2 per block (the group Lasso penalty with groups = blocks)."""
    lam: float
    name = "group_l2"
    code = K.REG_GROUP_L2

    def value(self, u) -> float:
        return self.lam * float(np.linalg.norm(u))

    def prox(self, v, step):
        _check_step(step)
        v = np.asarray(v, dtype=np.float64)
        nrm = np.linalg.norm(v)
        if nrm <= step * self.lam:
            return np.zeros_like(v)
        return (1.0 - step * self.lam / nrm) * v

    @property
    def params(self):
        return float(self.lam), 0.0


@dataclass(frozen=True)
class ElasticNet:
    """lam * ||u||_1 + (lam2 / 2) * ||u||_2^2."""
    lam: float
    lam2: float
    name = "elastic_net"
    code = K.REG_ELASTIC_NET

    def value(self, u) -> float:
        u = np.asarray(u)
        return self.lam * float(np.abs(u).sum()) + 0.5 * self.lam2 * float(u @ u)

    def prox(self, v, step):
        _check_step(step)
        v = np.asarray(v, dtype=np.float64)
        st = np.sign(v) * np.maximum(np.abs(v) - step * self.lam, 0.0)
        return st / (1.0 + step * self.lam2)

    @property
    def params(self):
        return float(self.lam), float(self.lam2)


def make_regularizer(name: str, lam: float = 0.0, lam2: float = 0.0):
    if name in ("none", "zero"):
        return NoReg()
    if name == "l1":
        return L1(lam)
    if name in ("group_l2", "group"):
        return GroupL2(lam)
    if name in ("elastic_net", "enet"):
        return ElasticNet(lam, lam2)
    raise ValueError(f"unknown regularizer {name!r}")


@dataclass
class CompositeProblem:
    """``F(x) = (1/l) sum_i f_i(x) + sum_j g(x_{G_j})``.

    All oracles are read-only and safe to call from many threads.
    """
    data: DatasetMatrix
    loss: Loss
    reg: object
    partition: BlockPartition
    ridge: float = 0.0

    def __post_init__(self):
        if isinstance(self.loss, str):
            try:
                self.loss = LOSSES[self.loss]
            except KeyError:
                raise ValueError(f"unknown loss {self.loss!r}") from None
        if self.partition.n != self.data.n:
            raise ValueError(f"partition covers {self.partition.n} coordinates, data has {self.data.n}")
        if self.loss is LOGISTIC and not np.all(np.abs(self.data.b) == 1.0):
            raise ValueError("logistic loss needs labels in {-1, +1}")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")

    @property
    def l(self) -> int:
        return self.data.l

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def k(self) -> int:
        return self.partition.k

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {x.shape}")
        return x

    def _check_i(self, i):
        if not 0 <= i < self.l:
            raise IndexError(f"component index {i} outside [0, {self.l})")

    def margins(self, x) -> np.ndarray:
        return self.data.A @ self._check_x(x)

    def component_value(self, i: int, x) -> float:
        self._check_i(i)
        x = self._check_x(x)
        idx, val = self.data.row(i)
        z = val @ x[idx]
        return float(self.loss.value(z, self.data.b[i])) + 0.5 * self.ridge * float(x @ x)

    def grad_component(self, i: int, x) -> np.ndarray:
        """Dense gradient of f_i at x (support = support(a_i) when ridge is 0)."""
        self._check_i(i)
        x = self._check_x(x)
        idx, val = self.data.row(i)
        d = float(self.loss.deriv(val @ x[idx], self.data.b[i]))
        g = self.ridge * x if self.ridge else np.zeros(self.n)
        g[idx] += d * val
        return g

    def block_grad_component(self, i: int, j: int, x) -> np.ndarray:
        """Block-j slice of grad f_i(x); only that slice is materialized."""
        self._check_i(i)
        x = self._check_x(x)
        idx, val = self.data.row(i)
        d = float(self.loss.deriv(val @ x[idx], self.data.b[i]))
        P = self.partition
        out = self.ridge * x[P.groups[j]] if self.ridge else np.zeros(P.size(j))
        mask = P.coord_block[idx] == j
        out[P.coord_pos[idx[mask]]] += d * val[mask]
        return out

    def grad_full(self, x, workers: int = 1, executor=None) -> np.ndarray:
        """(1/l) sum_i grad f_i(x), bitwise independent of ``workers``."""
        x = self._check_x(x)
        dphi = self.loss.deriv(self.margins(x), self.data.b)
        return self.smooth_gradient_from_derivs(x, dphi, executor if workers > 1 else None)

    def smooth_gradient_from_derivs(self, x, dphi, executor=None) -> np.ndarray:
        A = self.data.A
        l = self.l
        coef = np.ascontiguousarray(dphi / l)
        chunk = max(_MIN_CHUNK, -(-l // _MAX_CHUNKS))
        spans = [(lo, min(lo + chunk, l)) for lo in range(0, l, chunk)]
        parts = [np.empty(self.n) for _ in spans]

        def work(s):
            lo, hi = spans[s]
            K.weighted_row_sum(A.indptr, A.indices, A.data, coef, lo, hi, parts[s])

        if executor is None:
            for s in range(len(spans)):
                work(s)
        else:
            list(executor.map(work, range(len(spans))))
        # fixed pairwise tree over chunks
        while len(parts) > 1:
            nxt = [parts[a] + parts[a + 1] for a in range(0, len(parts) - 1, 2)]
            if len(parts) % 2:
                nxt.append(parts[-1])
            parts = nxt
        g = parts[0]
        if self.ridge:
            g = g + self.ridge * x
        return g

    def prox_block(self, j: int, v, step: float) -> np.ndarray:
        """argmin_u step * g(u) + 0.5 ||u - v||^2 for block j."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.partition.size(j),):
            raise ValueError(f"block {j} has {self.partition.size(j)} coordinates, got {v.shape}")
        return self.reg.prox(v, step)

    def smooth_value(self, x) -> float:
        x = self._check_x(x)
        f = float(np.mean(self.loss.value(self.margins(x), self.data.b)))
        if self.ridge:
            f += 0.5 * self.ridge * float(x @ x)
        return f

    def reg_value(self, x) -> float:
        x = self._check_x(x)
        reg = self.reg
        if isinstance(reg, NoReg):
            return 0.0
        if isinstance(reg, GroupL2):
            P = self.partition
            sq = np.add.reduceat(x[P.order] ** 2, P.ptr[:-1])
            return reg.lam * float(np.sqrt(sq).sum())
        # coordinate-separable: block order does not matter
        return reg.value(x)

    def objective(self, x) -> float:
        return self.smooth_value(x) + self.reg_value(x)

    def kernel_args(self):
        """Arrays and codes the compiled worker loop consumes."""
        A = self.data.A
        P = self.partition
        lam, lam2 = self.reg.params
        return dict(indptr=A.indptr.astype(np.int64), indices=A.indices.astype(np.int64),
                    data=A.data, labels=self.data.b, loss_kind=self.loss.code,
                    ridge=float(self.ridge), gptr=P.ptr, order=P.order,
                    coord_block=P.coord_block, coord_pos=P.coord_pos,
                    reg_kind=self.reg.code, lam=lam, lam2=lam2)


def lasso(data: DatasetMatrix, lam: float, k: int, ridge: float = 0.0) -> CompositeProblem:
    return CompositeProblem(data, SQUARED, L1(lam), BlockPartition.contiguous(data.n, k), ridge)
