"""Sequential reference: the same epoch recursion with one worker and no threads.

It calls the identical compiled inner loop as :func:`asyncbcd.solver.run`, just
through a no-op concurrency layer, so single-thread equivalence is structural.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .problem import CompositeProblem
from .solver import DivergenceError, SolverConfig, Trace, _Inline, _solve

log = logging.getLogger(__name__)


@dataclass
class ReferenceResult:
    solution: np.ndarray
    objectives: np.ndarray  # F(x^s) for s = 1..S
    f_star: float           # best objective seen
    trace: Trace
    gamma: float


def run_sequential(problem: CompositeProblem, config: SolverConfig, x0=None, *,
                   f_star=None, x_ref=None) -> ReferenceResult:
    """One worker, consistent reads, same sample stream as worker 0 of the async engine."""
    cfg = replace(config, threads=1)
    res = _solve(problem, cfg, _Inline(), x0, f_star, x_ref)
    objs = res.trace.objectives
    return ReferenceResult(res.solution, objs, float(objs.min()), res.trace, res.gamma.gamma)


@dataclass
class HighAccuracyResult:
    f_star: float
    solution: np.ndarray
    converged: bool
    epochs: int
    gamma: float


def solve_high_accuracy(problem: CompositeProblem, *, gamma: float = 1.0, minibatch: int = 1,
                        inner_iters: int | None = None, tol: float = 1e-12,
                        max_epochs: int = 20000, chunk: int = 25, seed: int = 0,
                        x0=None) -> HighAccuracyResult:
    """Run the reference recursion until F changes by < ``tol`` (relative) over an epoch.

    ``gamma`` is halved, restarting from the best point, whenever a chunk of
    epochs fails to improve on it or diverges. Hitting ``max_epochs`` returns the
    best point with ``converged=False``.
    """
    x = np.zeros(problem.n) if x0 is None else np.array(x0, dtype=np.float64)
    fx = problem.objective(x)
    best_f = fx
    g = gamma
    done = 0
    while done < max_epochs:
        n_ep = min(chunk, max_epochs - done)
        cfg = SolverConfig(threads=1, epochs=n_ep, inner_iters=inner_iters, minibatch=minibatch,
                           gamma=g, seed=seed + done)
        done += n_ep
        try:
            res = run_sequential(problem, cfg, x0=x)
        except DivergenceError:
            g *= 0.5
            log.debug("high-accuracy solve diverged; gamma -> %g", g)
            continue
        objs = res.objectives
        if objs[-1] > fx + tol * max(1.0, abs(fx)):
            g *= 0.5
            continue
        seq = np.concatenate([[fx], objs])
        rel = np.abs(np.diff(seq)) / np.maximum(np.abs(seq[1:]), np.finfo(float).tiny)
        x, fx = res.solution, float(objs[-1])
        best_f = min(best_f, float(objs.min()))
        if np.any(rel < tol):
            return HighAccuracyResult(best_f, x, True, done, g)
    return HighAccuracyResult(best_f, x, False, done, g)
