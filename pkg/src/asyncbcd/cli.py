"""Command line: ``solve``, ``bench``, ``theory``, ``validate``.

Flags override values from ``--config`` (key=value file, keys are the long
flag names). Every ``solve`` trace starts with a ``#`` line holding the fully
resolved run specification as JSON.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .data import SyntheticSpec, gen_synthetic, load_libsvm, read_partition
from .lipschitz import estimate_closed_form, validate_by_sampling
from .problem import BlockPartition, CompositeProblem, make_regularizer
from .reference import solve_high_accuracy
from .solver import DivergenceError, SolverConfig, resolve_gamma, run
from .theory import TheoryParams, predict, theta1, theta2, theta_prime
from .traceio import write_trace, write_vector

log = logging.getLogger(__name__)

DEFAULTS = {
    "data": "synthetic:lasso",
    "loss": None,          # from the synthetic kind, else squared
    "reg": "l1",
    "lambda_": 0.01,
    "lambda2": 0.0,
    "ridge": None,         # from the synthetic kind, else 0
    "blocks": None,        # min(n, 100)
    "threads": 1,
    "epochs": 10,
    "inner": None,
    "batch": 1,
    "gamma": "auto",
    "rho": 2.0,
    "tau": 0,
    "seed": 0,
    "delay": 0,
    "format": "text",
    "fstar": None,
    "timing": True,
    "lres": 1.0,
    "lnor": 1.0,
    "losc": 0.0,
    "lmax": 1.0,
    "dist0": 1.0,
    "gap0": 1.0,
    "trials": 200,
}

TINY_GAMMA = 1e-6

SYNTH_KEYS = {"n": int, "l": int, "density": float, "noise": float, "seed": int,
              "ridge": float, "support": float}


class CliError(Exception):
    pass


@dataclass
class RunSpec:
    data: str
    loss: str
    reg: str
    lam: float
    lam2: float
    ridge: float
    blocks: int | str
    threads: int
    epochs: int
    inner: int
    batch: int
    gamma: float | str
    rho: float
    seed: int
    delay: int
    trace: str | None = None
    out: str | None = None
    resolved: dict = field(default_factory=dict)


def parse_synthetic(text: str) -> SyntheticSpec:
    """``synthetic:kind,n=..,l=..`` (every part optional)."""
    body = text.split(":", 1)[1] if ":" in text else ""
    kw = {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        key, sep, val = part.partition("=")
        if not sep:
            kw["kind"] = key
            continue
        if key not in SYNTH_KEYS:
            raise CliError(f"unknown synthetic field {key!r} (known: kind, {', '.join(SYNTH_KEYS)})")
        try:
            kw[key] = SYNTH_KEYS[key](val)
        except ValueError:
            raise CliError(f"synthetic field {key}: bad value {val!r}") from None
    spec = SyntheticSpec(**kw)
    try:
        spec.validate()
    except ValueError as e:
        raise CliError(f"synthetic spec: {e}") from None
    return spec


def _gamma(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"gamma must be a number or 'auto', got {text!r}") from None


def _int_list(text):
    try:
        out = [int(t) for t in str(text).split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("thread counts must be >= 1")
    return out


def _bool(text):
    if isinstance(text, bool):
        return text
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _problem_flags(sp):
    sp.add_argument("--data", help="LIBSVM file or synthetic:kind,n=..,l=..,density=..,noise=..,seed=..")
    sp.add_argument("--loss", choices=["squared", "logistic"])
    sp.add_argument("--reg", choices=["none", "l1", "group_l2", "elastic_net"])
    sp.add_argument("--lambda", dest="lambda_", type=float)
    sp.add_argument("--lambda2", type=float, help="ridge part of the elastic net")
    sp.add_argument("--ridge", type=float, help="mu/2 ||x||^2 added to every component")
    sp.add_argument("--blocks", help="block count k or a partition file")
    sp.add_argument("--config", help="key=value file; flags take precedence")


def _solver_flags(sp, threads_list=False):
    if threads_list:
        sp.add_argument("--threads", type=_int_list, help="comma-separated worker counts")
    else:
        sp.add_argument("--threads", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--inner", type=int, help="inner iterations per epoch, total over workers")
    sp.add_argument("--batch", type=int)
    sp.add_argument("--gamma", type=_gamma)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--delay", type=int, help="max extra staleness injected per iteration")
    sp.add_argument("--format", choices=["text", "json"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asyncbcd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="run the asynchronous solver")
    _problem_flags(sp)
    _solver_flags(sp)
    sp.add_argument("--trace", help="trace CSV path")
    sp.add_argument("--out", help="solution vector path (one value per line)")
    sp.add_argument("--fstar", help="optimal value for the gap column, or 'auto'")
    sp.add_argument("--timing", type=_bool, help="false leaves time_ms empty (byte-stable traces)")

    sp = sub.add_parser("bench", help="per-epoch wall time and speedup across thread counts")
    _problem_flags(sp)
    _solver_flags(sp, threads_list=True)

    sp = sub.add_parser("theory", help="evaluate the step-size bound and rate predictors")
    sp.add_argument("--blocks", type=int, help="block count k")
    sp.add_argument("--rho", type=float)
    sp.add_argument("--tau", type=int)
    sp.add_argument("--inner", type=int, help="inner iterations per epoch m")
    sp.add_argument("--lres", type=float, help="Lambda_res = L_res / L_max")
    sp.add_argument("--lnor", type=float, help="Lambda_nor = L_nor / L_max")
    sp.add_argument("--losc", type=float, help="optimal strong convexity parameter (0: general convex)")
    sp.add_argument("--lmax", type=float, help="L_max")
    sp.add_argument("--gamma", type=_gamma, help="evaluate rates at this step instead of the bound")
    sp.add_argument("--epochs", type=int, help="epoch index for the sublinear bound")
    sp.add_argument("--dist0", type=float, help="squared distance of x0 to the solution set")
    sp.add_argument("--gap0", type=float, help="initial objective gap")
    sp.add_argument("--format", choices=["text", "json"])
    sp.add_argument("--config")

    sp = sub.add_parser("validate", help="Lipschitz sampling and finite-difference gradient checks")
    _problem_flags(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--format", choices=["text", "json"])
    return ap


def _merge_config(ap, args):
    if not getattr(args, "config", None):
        return
    from .traceio import read_config
    try:
        cfg = read_config(args.config)
    except OSError as e:
        raise CliError(f"cannot read config: {e}") from None
    except ValueError as e:
        raise CliError(str(e)) from None
    sub = next(a for a in ap._subparsers._group_actions[0].choices.values()
               if a.prog.endswith(" " + args.command))
    actions = {a.dest: a for a in sub._actions}
    for key, val in cfg.items():
        dest = "lambda_" if key == "lambda" else key
        if dest not in actions or dest in ("config", "help"):
            raise CliError(f"{args.config}: unknown key {key!r} for {args.command}")
        if getattr(args, dest) is not None:
            continue
        conv = actions[dest].type
        try:
            value = conv(val) if conv else val
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise CliError(f"{args.config}: {key}: {e}") from None
        if actions[dest].choices and value not in actions[dest].choices:
            raise CliError(f"{args.config}: {key}: {value!r} not in {sorted(actions[dest].choices)}")
        setattr(args, dest, value)


def _fill_defaults(args):
    for key, val in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, val)


def load_problem(args):
    """Problem plus the synthetic instance (or None) described by the flags."""
    inst = None
    if args.data.startswith("synthetic"):
        inst = gen_synthetic(parse_synthetic(args.data))
        data = inst.data
    else:
        try:
            data = load_libsvm(args.data)
        except OSError as e:
            raise CliError(f"cannot read data: {e}") from None
    loss = args.loss or (inst.loss if inst else "squared")
    ridge = args.ridge if args.ridge is not None else (inst.ridge if inst else 0.0)
    blocks = args.blocks
    if blocks is None:
        part = BlockPartition.contiguous(data.n, min(data.n, 100))
    elif str(blocks).isdigit():
        kb = int(blocks)
        if not 1 <= kb <= data.n:
            raise CliError(f"--blocks must lie in [1, n={data.n}], got {kb}")
        part = BlockPartition.contiguous(data.n, kb)
    else:
        try:
            part = read_partition(blocks, data.n)
        except OSError as e:
            raise CliError(f"cannot read partition: {e}") from None
    reg = make_regularizer(args.reg, args.lambda_, args.lambda2)
    return CompositeProblem(data, loss, reg, part, ridge), inst


def _config(args, threads):
    return SolverConfig(threads=threads, epochs=args.epochs, inner_iters=args.inner,
                        minibatch=args.batch, gamma=args.gamma, rho=args.rho, seed=args.seed,
                        max_extra_staleness=args.delay)


def _warn_gamma(rg):
    if not rg.guaranteed and rg.bound.value is None:
        print(f"warning: step-size bound infeasible for k={rg.params.k}; using gamma={rg.gamma:g} "
              "without convergence guarantee", file=sys.stderr)
    elif not rg.guaranteed:
        print(f"warning: gamma={rg.gamma:g} exceeds the theoretical bound {rg.bound.value:.6g}",
              file=sys.stderr)
    elif rg.gamma < TINY_GAMMA:
        print(f"warning: theoretical step gamma={rg.gamma:.3g} is too small to make progress "
              f"(the bound shrinks like rho^(-m/2) with m={rg.params.m}); "
              "pass --gamma or a smaller --inner", file=sys.stderr)


def cmd_solve(args) -> int:
    problem, inst = load_problem(args)
    cfg = _config(args, args.threads)
    cfg.validate()
    rg = resolve_gamma(problem, cfg)
    _warn_gamma(rg)
    f_star = None
    if args.fstar == "auto":
        f_star = solve_high_accuracy(problem, gamma=0.5, seed=args.seed).f_star
    elif args.fstar is not None:
        f_star = float(args.fstar)
    res = run(problem, cfg, f_star=f_star)
    spec = RunSpec(args.data, problem.loss.name, args.reg, args.lambda_, args.lambda2, problem.ridge,
                   args.blocks if args.blocks is not None else problem.k, cfg.threads, cfg.epochs,
                   cfg.m(problem), cfg.minibatch, cfg.gamma, cfg.rho, cfg.seed,
                   cfg.max_extra_staleness, args.trace, args.out,
                   {"gamma": res.gamma.gamma, "guaranteed": res.gamma.guaranteed,
                    "gamma_bound": res.gamma.bound.value, "step": res.step,
                    "L_max": res.lipschitz.L_max, "L_res": res.lipschitz.L_res,
                    "L_nor": res.lipschitz.L_nor, "k": problem.k, "n": problem.n, "l": problem.l,
                    "f_star": f_star})
    if args.trace:
        write_trace(res.trace, args.trace, comment=asdict(spec), timing=args.timing)
    if args.out:
        write_vector(res.solution, args.out)
    last = res.trace.records[-1]
    summary = {"objective": last.objective, "gap": last.gap, "epochs": last.epoch,
               "gamma": res.gamma.gamma, "max_staleness": res.staleness.max_observed,
               "time_ms": last.time_ms, "nnz": int(np.count_nonzero(res.solution))}
    if args.format == "json":
        print(json.dumps(summary))
    else:
        for key, val in summary.items():
            print(f"{key} = {val}")
    return 0


def cmd_bench(args) -> int:
    if args.data == DEFAULTS["data"]:
        args.data = "synthetic:lasso,n=10000,l=10000,density=0.001"
    problem, _ = load_problem(args)
    counts = args.threads if isinstance(args.threads, list) else [int(args.threads)]
    # compile and warm caches outside the measurement
    run(problem, SolverConfig(threads=1, epochs=1, inner_iters=max(1, problem.k), gamma=args.gamma))
    rows = []
    base = None
    for p in counts:
        res = run(problem, _config(args, p))
        per_epoch = float(np.median(res.epoch_seconds)) * 1e3
        base = base or per_epoch
        rows.append({"threads": p, "epoch_ms": per_epoch, "speedup": base / per_epoch,
                     "objective": res.trace.records[-1].objective,
                     "max_staleness": res.staleness.max_observed})
    if args.format == "json":
        print(json.dumps(rows))
    else:
        print(f"{'threads':>7} {'epoch_ms':>12} {'speedup':>8} {'objective':>14} {'max_stale':>9}")
        for r in rows:
            print(f"{r['threads']:>7} {r['epoch_ms']:>12.3f} {r['speedup']:>8.3f} "
                  f"{r['objective']:>14.6g} {r['max_staleness']:>9}")
    return 0


def cmd_theory(args) -> int:
    if args.blocks is None:
        args.blocks = 1
    try:
        p = TheoryParams(rho=args.rho, tau=args.tau, m=args.inner or 1, k=args.blocks,
                         lambda_res=args.lres, lambda_nor=args.lnor, l_osc=args.losc, L_max=args.lmax)
    except ValueError as e:
        raise CliError(str(e)) from None
    gamma = None if args.gamma in (None, "auto") else float(args.gamma)
    pred = predict(p, gamma)
    out = {"theta1": theta1(p.rho, p.tau), "theta2": theta2(p.rho, p.m),
           "theta_prime": theta_prime(p.rho, p.tau), "term1": pred.bound.term1,
           "term2": pred.bound.term2, "gamma_max": pred.gamma_max,
           "rate_condition": pred.bound.rate_condition, "gamma": pred.gamma,
           "linear_factor": pred.linear_factor, "sublinear_bound": None}
    if pred.gamma is not None and pred.gamma > 0:
        s = args.epochs if args.epochs is not None else DEFAULTS["epochs"]
        out["sublinear_epoch"] = s
        out["sublinear_bound"] = pred.sublinear_bound_at(s, args.dist0, args.gap0)
    if pred.gamma_max is None:
        print(f"warning: no admissible step: needs sqrt(k)(1 - 1/rho) > 4, got k={p.k}, rho={p.rho:g}",
              file=sys.stderr)
    if args.format == "json":
        print(json.dumps(out))
    else:
        for key, val in out.items():
            print(f"{key} = {'infeasible' if val is None and key == 'gamma_max' else val}")
    return 0


def fd_gradient_check(problem: CompositeProblem, trials: int, seed: int, h: float = 1e-6):
    """Central differences of one component along random directions; max relative error."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        i = int(rng.integers(problem.l))
        x = rng.standard_normal(problem.n)
        d = rng.standard_normal(problem.n)
        d /= np.linalg.norm(d)
        fd = (problem.component_value(i, x + h * d) - problem.component_value(i, x - h * d)) / (2 * h)
        an = float(problem.grad_component(i, x) @ d)
        worst = max(worst, abs(fd - an) / max(abs(an), abs(fd), 1e-8))
    return worst


def cmd_validate(args) -> int:
    problem, _ = load_problem(args)
    est = estimate_closed_form(problem)
    rep = validate_by_sampling(problem, est, trials=args.trials, seed=args.seed)
    fd = fd_gradient_check(problem, args.trials, args.seed)
    ok = rep.passed and fd <= 1e-5
    if args.format == "json":
        print(json.dumps({"L_nor": est.L_nor, "L_res": est.L_res, "L_max": est.L_max,
                          "observed": [rep.max_ratio_nor, rep.max_ratio_res, rep.max_ratio_max],
                          "fd_max_rel_err": fd, "passed": ok}))
    else:
        for line in rep.lines():
            print(line)
        print(f"finite differences: max relative error {fd:.3e} over {args.trials} checks")
        print("PASS" if ok else "FAIL")
    return 0 if ok else 1


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "theory": cmd_theory, "validate": cmd_validate}


def cli_main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _merge_config(ap, args)
        _fill_defaults(args)
        return COMMANDS[args.command](args)
    except (CliError, DivergenceError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())
