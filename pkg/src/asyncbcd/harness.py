"""Deterministic interleaving simulator for the asynchronous inner loop.

Thread timing on a real machine is not reproducible, so staleness claims are
checked here on a virtual machine instead. ``p`` virtual workers advance one
micro-step per round, in a seeded random order each round:

* read phase: one shared cell per micro-step, into a private ``x_hat``;
* hold phase: wait until the other workers have landed ``d`` more writes
  (``d`` drawn per iteration from ``[0, max_extra]``), or until every other
  worker is finished or holding too;
* write step: compute the variance-reduced block gradient at ``x_hat`` and
  replace block ``j`` by ``prox(x_j - step * v)`` with ``x_j`` the current
  shared block, as one store.

Iterations are numbered in the order their writes land. For each iteration
``t`` the simulator records which earlier writes each read cell had seen,
which yields the set ``K(t)`` of missing updates and per-update cell masks.
:func:`simulate` then checks ``x_t = x_hat_t + sum_{t' in K(t)} M_t' delta_t'``
with ``x_t`` the state produced by applying all writes in index order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import CompositeProblem
from .solver import SharedState, vr_block_gradient, worker_plan

_READ, _HOLD, _DONE = 0, 1, 2


@dataclass
class WriteRecord:
    worker: int
    block: int
    delta: np.ndarray
    x_hat: np.ndarray
    seen: np.ndarray   # seen[c]: number of writes landed when cell c was read
    hold: int


@dataclass
class HarnessResult:
    staleness: list[int] = field(default_factory=list)  # t - min K(t), 0 when K(t) is empty
    holds: list[int] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    reconstruction_error: float = 0.0
    natural_window: int = 0
    max_extra: int = 0
    solution: np.ndarray | None = None

    @property
    def max_observed(self) -> int:
        return max(self.staleness, default=0)

    @property
    def bound(self) -> int:
        return self.max_extra + self.natural_window

    @property
    def within_bound(self) -> bool:
        return self.max_observed <= self.bound


def natural_window(p: int, r_max: int, r_min: int) -> int:
    """Writes other workers can land while one iteration is in flight, holds excluded.

    Each other worker lands at most ``r_max // r_min + 1`` writes over ``r_max``
    rounds, plus one for the round in which the hold is released.
    """
    return (p - 1) * (r_max // r_min + 2)


class _Worker:
    def __init__(self, plan, n):
        self.plan = plan
        self.it = 0
        self.phase = _READ
        self.cell = 0
        self.x_hat = np.empty(n)
        self.seen = np.empty(n, dtype=np.int64)
        self.hold_base = 0

    def finished(self):
        return self.phase == _DONE


def _run_epoch(problem, state, step, plans, rng, log):
    n = problem.n
    p = len(plans)
    workers = [_Worker(pl, n) for pl in plans]
    for w in workers:
        if len(w.plan.blocks) == 0:
            w.phase = _DONE
    landed = np.zeros(p, dtype=np.int64)  # writes per worker
    groups = problem.partition.groups
    x = state.x

    while not all(w.finished() for w in workers):
        for wi in rng.permutation(p):
            w = workers[wi]
            if w.finished():
                continue
            if w.phase == _READ:
                w.x_hat[w.cell] = x[w.cell]
                w.seen[w.cell] = len(log)
                w.cell += 1
                if w.cell == n:
                    w.phase = _HOLD
                    w.hold_base = int(landed.sum() - landed[wi])
                continue
            # hold phase: release check costs no step; waiting does
            d = int(w.plan.holds[w.it])
            others = int(landed.sum() - landed[wi])
            idle = all(o.finished() or o.phase == _HOLD for k, o in enumerate(workers) if k != wi)
            if d > 0 and others - w.hold_base < d and not idle:
                continue
            j = int(w.plan.blocks[w.it])
            v = vr_block_gradient(problem, w.plan.batches[w.it], j, w.x_hat,
                                  state.snapshot, state.full_grad)
            G = groups[j]
            base = x[G].copy()
            u = problem.prox_block(j, base - step * v, step)
            x[G] = u
            log.append(WriteRecord(int(wi), j, u - base, w.x_hat.copy(), w.seen.copy(), d))
            landed[wi] += 1
            w.it += 1
            w.cell = 0
            w.phase = _DONE if w.it == len(w.plan.blocks) else _READ


def _reconstruct(problem, start, log, res):
    """Replay writes in index order and rebuild each read from the missing-update masks."""
    groups = problem.partition.groups
    x_t = start.copy()
    err = 0.0
    for t, rec in enumerate(log):
        missing = x_t.copy()
        oldest = t
        for tp in range(min(rec.seen.min(), t), t):
            G = groups[log[tp].block]
            mask = rec.seen[G] <= tp
            if mask.any():
                oldest = min(oldest, tp)
                missing[G[mask]] -= log[tp].delta[mask]
        err = max(err, float(np.max(np.abs(missing - rec.x_hat), initial=0.0)))
        res.staleness.append(t - oldest)
        res.holds.append(rec.hold)
        G = groups[rec.block]
        x_t[G] += rec.delta
    return x_t, err


def simulate(problem: CompositeProblem, step: float, threads: int, iters_per_worker: int, *,
             max_extra: int = 0, epochs: int = 1, seed: int = 0, minibatch: int = 1,
             schedule_seed: int | None = None, x0=None) -> HarnessResult:
    """Run ``epochs`` epochs on the virtual machine; samples match :func:`worker_plan`."""
    if threads < 1 or iters_per_worker < 0 or max_extra < 0 or epochs < 1:
        raise ValueError("need threads >= 1, iters_per_worker >= 0, max_extra >= 0, epochs >= 1")
    rng = np.random.default_rng(seed if schedule_seed is None else schedule_seed)
    state = SharedState.create(problem, x0)
    r = problem.n + 1  # micro-steps per iteration outside holds
    res = HarnessResult(natural_window=natural_window(threads, r, r), max_extra=max_extra)
    for s in range(epochs):
        state.begin_epoch(problem)
        plans = [worker_plan(seed, w, s, iters_per_worker, problem.l, problem.k, minibatch, max_extra)
                 for w in range(threads)]
        start = state.x.copy()
        log: list[WriteRecord] = []
        _run_epoch(problem, state, step, plans, rng, log)
        replay, err = _reconstruct(problem, start, log, res)
        err = max(err, float(np.max(np.abs(replay - state.x), initial=0.0)))
        res.reconstruction_error = max(res.reconstruction_error, err)
        res.objectives.append(problem.objective(state.x))
    res.solution = state.x.copy()
    return res
