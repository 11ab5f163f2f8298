"""LIBSVM reading/writing and synthetic instance generation."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .problem import BlockPartition, DatasetMatrix

KINDS = ("lasso", "strongly_convex", "logistic")


class LibsvmFormatError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def load_libsvm(path, n: int | None = None) -> DatasetMatrix:
    """Parse ``<label> <index>:<value> ...`` lines (1-based indices, ``#`` comments).

    ``n`` defaults to the largest index seen.
    """
    labels, indptr, indices, values = [], [0], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError:
                raise LibsvmFormatError(path, lineno, f"bad label {parts[0]!r}") from None
            seen = set()
            row = []
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    c = int(idx)
                    v = float(val)
                except ValueError:
                    c = None
                if not sep or c is None:
                    raise LibsvmFormatError(path, lineno, f"bad feature {tok!r}")
                if c < 1:
                    raise LibsvmFormatError(path, lineno, f"index {c} < 1 (indices are 1-based)")
                if c in seen:
                    raise LibsvmFormatError(path, lineno, f"duplicate index {c}")
                seen.add(c)
                row.append((c - 1, v))
            row.sort()
            indices.extend(c for c, _ in row)
            values.extend(v for _, v in row)
            indptr.append(len(indices))
    if not labels:
        raise ValueError(f"{path}: no data rows")
    width = (max(indices) + 1) if indices else 0
    if n is None:
        n = max(width, 1)
    elif width > n:
        raise ValueError(f"{path}: index {width} exceeds n={n}")
    A = sp.csr_matrix((np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64),
                       np.asarray(indptr, dtype=np.int64)), shape=(len(labels), n))
    return DatasetMatrix(A, labels)


def save_libsvm(data: DatasetMatrix, path):
    """Write with shortest round-trip float formatting."""
    with open(path, "w", newline="\n") as fh:
        for i in range(data.l):
            idx, val = data.row(i)
            feats = " ".join(f"{c + 1}:{v!r}" for c, v in zip(idx.tolist(), val.tolist()))
            fh.write(f"{float(data.b[i])!r} {feats}".rstrip() + "\n")


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 100
    l: int = 200
    density: float = 0.1
    noise: float = 0.01
    kind: str = "lasso"
    seed: int = 0
    ridge: float = 1e-2       # only used by kind="strongly_convex"
    support: float = 0.1      # fraction of nonzeros in the planted solution

    def validate(self):
        if self.n < 1 or self.l < 1:
            raise ValueError("n and l must be >= 1")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.kind == "strongly_convex":
            if self.l < self.n:
                raise ValueError("strongly_convex instances need l >= n")
            if not self.ridge > 0:
                raise ValueError("strongly_convex instances need ridge > 0")


@dataclass
class SyntheticInstance:
    data: DatasetMatrix
    x_planted: np.ndarray
    ridge: float
    spec: SyntheticSpec

    @property
    def loss(self) -> str:
        return "logistic" if self.spec.kind == "logistic" else "squared"


def gen_synthetic(spec: SyntheticSpec) -> SyntheticInstance:
    """Sparse N(0, 1) design with a planted sparse solution.

    Every row gets at least one nonzero. Labels are ``A x* + noise`` (signs of
    that for logistic). ``strongly_convex`` adds ``ridge/2 ||x||^2`` to f.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, l = spec.n, spec.l
    if spec.density >= 1:
        A = sp.csr_matrix(rng.standard_normal((l, n)))
    else:
        counts = np.maximum(1, rng.binomial(n, spec.density, size=l))
        indptr = np.zeros(l + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(counts)
        indices = np.concatenate([np.sort(rng.choice(n, size=c, replace=False)) for c in counts])
        values = rng.standard_normal(indptr[-1])
        A = sp.csr_matrix((values, indices, indptr), shape=(l, n))
    nnz = max(1, int(round(spec.support * n)))
    x = np.zeros(n)
    x[rng.choice(n, size=nnz, replace=False)] = rng.standard_normal(nnz)
    b = A @ x + spec.noise * rng.standard_normal(l)
    if spec.kind == "logistic":
        b = np.where(b >= 0, 1.0, -1.0)
    ridge = spec.ridge if spec.kind == "strongly_convex" else 0.0
    return SyntheticInstance(DatasetMatrix(A, b), x, ridge, spec)


def read_partition(path, n: int):
    """One block per line, whitespace-separated 0-based coordinate indices."""
    groups = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            groups.append([int(t) for t in line.split()])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: partition lines hold integer indices") from None
    return BlockPartition(n, groups)
