"""Lock-free asynchronous proximal block coordinate descent with variance reduction.

Each epoch freezes a snapshot ``x_tilde``, computes ``mu = grad f(x_tilde)``,
then ``p`` workers repeatedly

1. read ``x`` without a lock (``x_hat``, possibly mixing concurrent writes),
2. draw a mini-batch ``B`` and a block ``j`` and form
   ``v = mean_B[grad_j f_i(x_hat) - grad_j f_i(x_tilde)] + mu_j``,
3. write ``prox_{(gamma/L_max) g_j}(x_j - (gamma/L_max) v)`` into block ``j``
   cell by cell, again without a lock.

Workers are Python threads running a compiled loop with the GIL released, so
the updates genuinely race on the shared array.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .lipschitz import LipschitzEstimates, estimate_closed_form
from .problem import CompositeProblem
from .theory import DEFAULT_RHO, ResolvedGamma, TheoryParams, auto_gamma, gamma_bound

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """Iterates became non-finite or the objective blew up."""


@dataclass
class SolverConfig:
    threads: int = 1
    epochs: int = 10
    inner_iters: int | None = None  # total per epoch; None -> 2 * max(l, k)
    minibatch: int = 1
    gamma: float | str = "auto"
    rho: float = DEFAULT_RHO
    seed: int = 0
    max_extra_staleness: int = 0
    trace_every: int = 1  # epochs between trace records; the last epoch is always recorded
    per_thread_m: bool = False  # literal reading: every worker runs m iterations

    def validate(self):
        if self.threads < 1 or self.epochs < 1 or self.minibatch < 1 or self.trace_every < 1:
            raise ValueError("threads, epochs, minibatch and trace_every must be >= 1")
        if self.inner_iters is not None and self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.max_extra_staleness < 0:
            raise ValueError("max_extra_staleness must be >= 0")
        if self.gamma != "auto":
            g = float(self.gamma)
            if not (g >= 0 and math.isfinite(g)):
                raise ValueError(f"gamma must be a finite nonnegative number or 'auto', got {self.gamma}")

    def m(self, problem: CompositeProblem) -> int:
        return self.inner_iters if self.inner_iters is not None else 2 * max(problem.l, problem.k)

    def iters_per_worker(self, problem: CompositeProblem) -> int:
        m = self.m(problem)
        return m if self.per_thread_m else -(-m // self.threads)


def theory_params(problem: CompositeProblem, config: SolverConfig,
                  est: LipschitzEstimates, l_osc: float = 0.0) -> TheoryParams:
    # nominal delay bound: every other worker in flight plus the injected hold
    tau = (config.threads - 1) + config.max_extra_staleness
    m = config.m(problem) * (config.threads if config.per_thread_m else 1)
    return TheoryParams(rho=config.rho, tau=tau, m=m, k=problem.k,
                        lambda_res=est.lambda_res, lambda_nor=est.lambda_nor,
                        l_osc=l_osc, L_max=est.L_max)


def resolve_gamma(problem: CompositeProblem, config: SolverConfig,
                  est: LipschitzEstimates | None = None) -> ResolvedGamma:
    est = est or estimate_closed_form(problem)
    params = theory_params(problem, config, est)
    if config.gamma == "auto":
        return auto_gamma(params)
    g = float(config.gamma)
    gb = gamma_bound(params)
    return ResolvedGamma(g, gb.feasible and 0 < g <= gb.value, gb, params)


@dataclass
class SharedState:
    """Shared iterate plus the per-epoch read-only snapshot and full gradient."""
    x: np.ndarray
    snapshot: np.ndarray
    full_grad: np.ndarray
    dphi_snap: np.ndarray
    epoch: int = 0

    @classmethod
    def create(cls, problem: CompositeProblem, x0=None) -> "SharedState":
        x = np.zeros(problem.n) if x0 is None else np.array(x0, dtype=np.float64)
        if x.shape != (problem.n,):
            raise ValueError(f"x0 must have length {problem.n}")
        empty = np.zeros(problem.n)
        return cls(x, empty, empty, np.zeros(problem.l))

    def begin_epoch(self, problem: CompositeProblem, executor=None):
        """Barrier work: x_tilde <- x, mu <- grad f(x_tilde). Both frozen until the next call."""
        snap = self.x.copy()
        A = problem.data.A
        z = np.empty(problem.l)
        dphi = np.empty(problem.l)
        spans = _spans(problem.l)

        def work(span):
            lo, hi = span
            K.margins(A.indptr, A.indices, A.data, snap, lo, hi, z)
            K.loss_derivs(problem.loss.code, z, problem.data.b, lo, hi, dphi)

        _map(executor, work, spans)
        grad = problem.smooth_gradient_from_derivs(snap, dphi, executor)
        for arr in (snap, grad, dphi):
            arr.setflags(write=False)
        self.snapshot, self.full_grad, self.dphi_snap = snap, grad, dphi


def _spans(l, chunk=4096):
    return [(lo, min(lo + chunk, l)) for lo in range(0, l, chunk)] or [(0, 0)]


def _map(executor, fn, items):
    if executor is None:
        return [fn(it) for it in items]
    return list(executor.map(fn, items))


def inconsistent_read(state: SharedState) -> np.ndarray:
    """Lock-free copy of the shared iterate; concurrent block writes may interleave per cell."""
    return np.array(state.x, copy=True)


def vr_block_gradient(problem: CompositeProblem, batch, j: int, x_hat, snapshot, full_grad) -> np.ndarray:
    """Block-j slice of ``mean_B grad f_i(x_hat) - mean_B grad f_i(x_tilde) + grad f(x_tilde)``."""
    batch = np.atleast_1d(np.asarray(batch, dtype=np.int64))
    if batch.size == 0:
        raise ValueError("empty mini-batch")
    if not 0 <= j < problem.k:
        raise IndexError(f"block index {j} outside [0, {problem.k})")
    cur = sum(problem.block_grad_component(int(i), j, x_hat) for i in batch) / batch.size
    old = sum(problem.block_grad_component(int(i), j, snapshot) for i in batch) / batch.size
    return cur - old + np.asarray(full_grad)[problem.partition.groups[j]]


class InnerStep(NamedTuple):
    block: int
    batch: np.ndarray
    v_hat: np.ndarray
    base: np.ndarray   # block j of x as read right before the write
    delta: np.ndarray  # applied change on block j


def apply_step(problem: CompositeProblem, state: SharedState, batch, j: int, step: float,
               x_hat=None) -> InnerStep:
    """One Read/Compute/Update with a given sample; ``x_hat`` defaults to a fresh read."""
    if x_hat is None:
        x_hat = inconsistent_read(state)
    v = vr_block_gradient(problem, batch, j, x_hat, state.snapshot, state.full_grad)
    G = problem.partition.groups[j]
    base = state.x[G].copy()
    u = problem.prox_block(j, base - step * v, step)
    if not np.all(np.isfinite(u)):
        raise DivergenceError(f"non-finite block update on block {j}; try a smaller gamma")
    state.x[G] = u
    return InnerStep(j, np.atleast_1d(batch), v, base, u - base)


def inner_step(problem: CompositeProblem, state: SharedState, rng: np.random.Generator,
               step: float, batch_size: int = 1) -> InnerStep:
    """Uniform mini-batch (with replacement) and uniform block, then :func:`apply_step`."""
    batch = rng.integers(0, problem.l, size=batch_size)
    j = int(rng.integers(0, problem.k))
    return apply_step(problem, state, batch, j, step)


class WorkerPlan(NamedTuple):
    batches: np.ndarray
    blocks: np.ndarray
    holds: np.ndarray


def worker_plan(seed: int, worker: int, epoch: int, iters: int, l: int, k: int,
                batch: int, max_extra: int = 0) -> WorkerPlan:
    """Samples for one worker-epoch from a counter-based stream keyed on (seed, worker, epoch)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, worker, epoch])))
    batches = rng.integers(0, l, size=(iters, batch), dtype=np.int64)
    blocks = rng.integers(0, k, size=iters, dtype=np.int64)
    if max_extra > 0:
        holds = rng.integers(0, max_extra + 1, size=iters, dtype=np.int64)
    else:
        holds = np.zeros(iters, dtype=np.int64)
    return WorkerPlan(batches, blocks, holds)


@dataclass
class TraceRecord:
    epoch: int
    inner_iter: int
    time_ms: float
    objective: float
    max_staleness: int
    gap: float | None = None
    distance: float | None = None


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)
    initial_objective: float | None = None
    f_star: float | None = None

    def __len__(self):
        return len(self.records)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def deterministic_view(self):
        """Records without wall-clock time, for replay comparisons."""
        return [(r.epoch, r.inner_iter, r.objective, r.max_staleness, r.gap, r.distance)
                for r in self.records]


@dataclass
class StalenessReport:
    per_epoch_max: list[int] = field(default_factory=list)
    histogram: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    natural_max: int = 0  # largest part of a delay not explained by an injected hold
    hold_max: int = 0

    @property
    def max_observed(self) -> int:
        return max(self.per_epoch_max, default=0)

    def add(self, stale: np.ndarray, natural: np.ndarray, holds: np.ndarray):
        if stale.size == 0:
            self.per_epoch_max.append(0)
            return
        self.per_epoch_max.append(int(stale.max()))
        h = np.bincount(stale)
        if h.size > self.histogram.size:
            h[: self.histogram.size] += self.histogram
            self.histogram = h
        else:
            self.histogram[: h.size] += h
        self.natural_max = max(self.natural_max, int(natural.max()))
        self.hold_max = max(self.hold_max, int(holds.max()))


@dataclass
class SolveResult:
    solution: np.ndarray
    trace: Trace
    staleness: StalenessReport
    gamma: ResolvedGamma
    step: float
    lipschitz: LipschitzEstimates
    epoch_seconds: list[float]


class _Inline:
    """No-op concurrency layer: everything runs in the calling thread."""

    def map(self, fn, items):
        return map(fn, items)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _solve(problem: CompositeProblem, config: SolverConfig, layer, x0=None,
           f_star=None, x_ref=None, lipschitz=None) -> SolveResult:
    config.validate()
    est = lipschitz or estimate_closed_form(problem)
    rg = resolve_gamma(problem, config, est)
    step = rg.gamma / est.L_max
    p = config.threads
    iters = config.iters_per_worker(problem)
    ka = problem.kernel_args()
    state = SharedState.create(problem, x0)
    f0 = problem.objective(state.x)
    if not math.isfinite(f0):
        raise DivergenceError("objective is not finite at the starting point")
    limit = DIVERGENCE_FACTOR * max(abs(f0), 1.0)
    trace = Trace(initial_objective=f0, f_star=f_star)
    report = StalenessReport()
    bs = problem.partition.max_size
    bufs = [(np.empty(bs), np.empty(bs), np.empty(bs)) for _ in range(p)]
    counts = np.zeros(p, dtype=np.int64)
    done = np.zeros(p, dtype=np.int64)
    holding = np.zeros(p, dtype=np.int64)
    status = np.zeros(p, dtype=np.int64)
    executor = None if isinstance(layer, _Inline) else layer
    epoch_seconds = []
    elapsed = 0.0
    total_inner = 0

    for s in range(config.epochs):
        t0 = time.perf_counter()
        state.begin_epoch(problem, executor)
        state.epoch = s
        plans = [worker_plan(config.seed, w, s, iters, problem.l, problem.k,
                             config.minibatch, config.max_extra_staleness) for w in range(p)]
        stale = [np.zeros(iters, dtype=np.int64) for _ in range(p)]
        held = [np.zeros(iters, dtype=np.int64) for _ in range(p)]
        for arr in (counts, done, holding, status):
            arr[:] = 0

        def work(w):
            pl = plans[w]
            vb, xb, ub = bufs[w]
            K.worker_loop(w, state.x, state.snapshot, state.full_grad, state.dphi_snap,
                          ka["indptr"], ka["indices"], ka["data"], ka["labels"], ka["loss_kind"],
                          ka["ridge"], ka["gptr"], ka["order"], ka["coord_block"], ka["coord_pos"],
                          ka["reg_kind"], ka["lam"], ka["lam2"], step,
                          pl.batches, pl.blocks, pl.holds,
                          counts, done, holding, status, stale[w], held[w], vb, xb, ub)

        list(layer.map(work, range(p)))
        dt = time.perf_counter() - t0
        epoch_seconds.append(dt)
        elapsed += dt
        if status.any():
            raise DivergenceError(f"non-finite block update in epoch {s}; try a smaller gamma "
                                  f"(current gamma={rg.gamma:g})")
        total_inner += int(counts.sum())
        st = np.concatenate(stale)
        hold_part = np.minimum(np.concatenate([pl.holds for pl in plans]), np.concatenate(held))
        report.add(st, st - hold_part, np.concatenate([pl.holds for pl in plans]))

        x_copy = state.x.copy()
        F = problem.objective(x_copy)
        if not math.isfinite(F) or F > limit:
            raise DivergenceError(f"objective {F:.6g} at epoch {s} exceeds divergence guard "
                                  f"{limit:.3g}; try a smaller gamma (current gamma={rg.gamma:g})")
        if (s + 1) % config.trace_every == 0 or s == config.epochs - 1:
            trace.records.append(TraceRecord(
                epoch=s + 1, inner_iter=total_inner, time_ms=elapsed * 1e3, objective=F,
                max_staleness=report.per_epoch_max[-1],
                gap=None if f_star is None else F - f_star,
                distance=None if x_ref is None else float(np.linalg.norm(x_copy - x_ref))))
    return SolveResult(state.x.copy(), trace, report, rg, step, est, epoch_seconds)


def run(problem: CompositeProblem, config: SolverConfig, x0=None, *, f_star=None,
        x_ref=None, lipschitz=None) -> SolveResult:
    """Run the asynchronous solver with ``config.threads`` worker threads.

    With one thread and a fixed seed the result is bit-identical across runs and
    to :func:`asyncbcd.reference.run_sequential`.
    """
    config.validate()
    with ThreadPoolExecutor(max_workers=config.threads, thread_name_prefix="asybcd") as pool:
        return _solve(problem, config, pool, x0, f_star, x_ref, lipschitz)
