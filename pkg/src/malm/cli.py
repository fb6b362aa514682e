"""``malm`` command-line entry point: gen | run | bench | verify | plot.

Exit codes: 0 success, 1 usage error, 2 divergence, 3 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .exceptions import DivergenceError, MalmError
from .metrics import average_traces, format_float, kkt_residuals, read_trace_csv, select_output, write_trace_csv
from .numerics import spectral_info
from .plot import svg_plot
from .problems import generate_quadratic, generate_regression, load_problem, save_problem
from .solvers import SOLVERS, ScheduleConstants, eta_threshold, run_solver, schedule_for
from .verify import CHECKS, VerifyConfig, run_suite, write_reports_csv

log = logging.getLogger("malm")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def make_problem(spec):
    if spec.family == "regression":
        return generate_regression(spec.d, spec.N, spec.m, spec.sparsity, spec.label_noise_std, spec.seed)
    return generate_quadratic(spec.d, spec.m, spec.condition, spec.sigma, spec.seed)


def resolve_constants(solver_spec, problem, K):
    """Turn a solver spec with possible ``auto`` entries into concrete constants."""
    s = solver_spec
    c_eta = s.c_eta
    if c_eta == cfgmod.AUTO:
        c_eta = s.eta_margin * eta_threshold(problem.L, s.c_alpha, s.c_theta)
    c_beta = s.c_beta
    if c_beta == cfgmod.AUTO:
        c_beta = c_eta * s.penalty_ratio / spectral_info(problem.A, 1.0).lambda_max
    return ScheduleConstants(s.c_alpha, float(c_eta), float(c_beta), s.c_theta, int(K))


def _spd_steps(solver_spec, params):
    if solver_spec.tau is None and solver_spec.rho is None:
        return None
    tau = solver_spec.tau if solver_spec.tau is not None else 1.0 / params.eta
    rho = solver_spec.rho if solver_spec.rho is not None else params.beta
    return tau, rho


def _load_or_make(cfg):
    if cfg.run.problem_path:
        return load_problem(cfg.run.problem_path)
    return make_problem(cfg.problem)


def _base_config(args):
    cfg = cfgmod.load_config(args.config) if getattr(args, "config", None) else cfgmod.RunConfig()
    seed = cfgmod.default_seed()
    # MALM_SEED only fills seeds not set by file or flag
    if not getattr(args, "config", None):
        cfg = cfgmod.override(cfg, "problem", seed=seed)
        cfg = cfgmod.override(cfg, "run", seed=seed)
    return cfg


def _apply_problem_flags(cfg, args):
    return cfgmod.override(cfg, "problem", family=args.family, d=args.d, N=args.N, m=args.m,
                           sparsity=args.sparsity, label_noise_std=args.label_noise_std,
                           condition=args.condition, sigma=args.sigma, seed=args.problem_seed)


def _apply_solver_flags(cfg, args):
    return cfgmod.override(cfg, "solver", solver=getattr(args, "solver", None), c_alpha=args.c_alpha,
                           c_eta=args.c_eta, c_beta=args.c_beta, c_theta=args.c_theta,
                           tau=args.tau, rho=args.rho)


def _add_problem_flags(p):
    g = p.add_argument_group("problem")
    g.add_argument("--family", choices=("regression", "quadratic"))
    g.add_argument("--d", type=int)
    g.add_argument("--N", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--sparsity", type=float)
    g.add_argument("--label-noise-std", type=float)
    g.add_argument("--condition", type=float)
    g.add_argument("--sigma", type=float)
    g.add_argument("--problem-seed", type=int)
    g.add_argument("--problem", dest="problem_path", help="MALMPB1 problem file")


def _const(raw):
    return raw if raw == cfgmod.AUTO else float(raw)


def _add_solver_flags(p, solver=True):
    g = p.add_argument_group("solver")
    if solver:
        g.add_argument("--solver", choices=SOLVERS)
    g.add_argument("--c-alpha", type=float)
    g.add_argument("--c-eta", type=_const)
    g.add_argument("--c-beta", type=_const)
    g.add_argument("--c-theta", type=float)
    g.add_argument("--tau", type=float, help="SPD primal stepsize")
    g.add_argument("--rho", type=float, help="SPD dual stepsize")


def _add_run_flags(p):
    g = p.add_argument_group("run")
    g.add_argument("--K", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--record-every", type=int)
    g.add_argument("--no-timing", dest="timing", action="store_false", default=None,
                   help="record elapsed_ns as 0 so traces are byte-reproducible")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    cfg = _apply_problem_flags(_base_config(args), args)
    cfg.validate()
    spec = cfg.problem
    if spec.seed is None:
        spec.seed = 0
    problem = make_problem(spec)
    out = Path(args.out)
    save_problem(problem, out)
    info = spectral_info(problem.A, 1.0)
    print(f"wrote {out}: family={problem.family} d={problem.d} N={problem.N} m={problem.m} "
          f"L={problem.L:.6g} lambda_min_nonzero={info.lambda_min_nonzero:.6g} "
          f"norm_A={info.op_norm_A:.6g} sigma={problem.sigma:.6g}")
    return EXIT_OK


def _run_config(args):
    cfg = _base_config(args)
    cfg = _apply_problem_flags(cfg, args)
    cfg = _apply_solver_flags(cfg, args)
    cfg = cfgmod.override(cfg, "run", K=args.K, seed=args.seed, record_every=args.record_every,
                          timing=args.timing, problem_path=args.problem_path, out=args.out)
    for key in ("trials", "workers", "output_mode"):
        if getattr(args, key, None) is not None:
            cfg = cfgmod.override(cfg, "run", **{key: getattr(args, key)})
    return cfg.validate()


def cmd_run(args):
    cfg = _run_config(args)
    problem = _load_or_make(cfg)
    constants = resolve_constants(cfg.solver, problem, cfg.run.K)
    params, validity = schedule_for(problem, constants)
    if not validity.eta_condition_ok and not args.force:
        raise UsageError(f"c_eta={constants.c_eta:.6g} violates the stepsize lower bound "
                         f"{eta_threshold(problem.L, constants.c_alpha, constants.c_theta):.6g}; "
                         "pass --force to run anyway")
    try:
        trace = run_solver(problem, cfg.solver.solver, constants, seed=cfg.run.seed, trial=args.trial,
                           record_every=cfg.run.record_every, spd_steps=_spd_steps(cfg.solver, params),
                           timing=cfg.run.timing, params=params)
    except DivergenceError as exc:
        if cfg.run.out and exc.trace is not None:
            write_trace_csv(exc.trace, cfg.run.out)
        print(f"diverged at r={exc.r}", file=sys.stderr)
        return EXIT_DIVERGED
    if cfg.run.out:
        write_trace_csv(trace, cfg.run.out)
    last = trace.final
    idx, x, mu = select_output(trace, cfg.run.output_mode)
    line = (f"solver={trace.solver} K={constants.K} stationarity={format_float(last.stationarity)} "
            f"feasibility={format_float(last.feasibility)} grad_evals={last.grad_evals} "
            f"elapsed_ns={last.elapsed_ns}")
    if x is not None:
        st, fe = kkt_residuals(problem, x, mu)
        line += (f" output={cfg.run.output_mode}:{idx} output_stationarity={format_float(st)} "
                 f"output_feasibility={format_float(fe)}")
    print(line)
    return EXIT_OK


def _bench_trial(job):
    problem, solver, constants, seed, trial, record_every, spd_steps, timing = job
    try:
        return run_solver(problem, solver, constants, seed=seed, trial=trial,
                          record_every=record_every, spd_steps=spd_steps, timing=timing)
    except DivergenceError as exc:
        return exc


GRID_KEYS = ("c_alpha", "c_eta", "c_beta", "c_theta", "tau", "rho")


def parse_grid(raw):
    """``"tau=0.001,0.01"`` -> ``("tau", [0.001, 0.01])``."""
    key, sep, values = raw.partition("=")
    key = key.strip().replace("-", "_")
    if not sep or key not in GRID_KEYS:
        raise UsageError(f"--grid expects KEY=v1,v2,... with KEY in {GRID_KEYS}")
    try:
        vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--grid values must be numbers: {values!r}") from None
    if not vals:
        raise UsageError("--grid needs at least one value")
    return key, vals


def _bench_variants(cfg, solvers, grid):
    """Yield ``(label, solver, solver_spec)`` for every solver and grid value."""
    for solver in solvers:
        spd_only = grid is not None and grid[0] in ("tau", "rho")
        if grid is None or (spd_only and solver != "spd"):
            yield solver, solver, cfg.solver
            continue
        key, vals = grid
        for v in vals:
            yield f"{solver}_{key}={format_float(v)}", solver, dataclasses.replace(cfg.solver, **{key: v})


def _bench_one(cfg, problem, solver, spec, budget):
    K = cfg.run.K
    per = 2 if solver == "storm_alm" else 1
    if budget:
        K = max(1, (budget - 1) // per)
    constants = resolve_constants(spec, problem, K)
    params, _ = schedule_for(problem, constants)
    spd = _spd_steps(spec, params) if solver == "spd" else None
    jobs = [(problem, solver, constants, cfg.run.seed, t, cfg.run.record_every, spd, cfg.run.timing)
            for t in range(cfg.run.trials)]
    if cfg.run.workers > 1:
        with ProcessPoolExecutor(cfg.run.workers) as pool:
            results = list(pool.map(_bench_trial, jobs))
    else:
        results = [_bench_trial(j) for j in jobs]
    # results keep trial order, so averages do not depend on execution order
    traces = [r for r in results if not isinstance(r, DivergenceError)]
    for t in traces:
        if t.final.grad_evals != per * K + 1:
            raise AssertionError(f"{solver}: grad_evals {t.final.grad_evals} != {per * K + 1}")
    return K, traces, len(results) - len(traces)


def cmd_bench(args):
    cfg = _run_config(args)
    problem = _load_or_make(cfg)
    out_dir = Path(cfg.run.out or "bench")
    out_dir.mkdir(parents=True, exist_ok=True)
    solvers = args.solvers.split(",") if args.solvers else list(SOLVERS)
    for s in solvers:
        if s not in SOLVERS:
            raise UsageError(f"unknown solver {s!r}")
    grid = parse_grid(args.grid) if args.grid else None
    rows = []
    for label, solver, spec in _bench_variants(cfg, solvers, grid):
        K, traces, diverged = _bench_one(cfg, problem, solver, spec, args.budget)
        if traces:
            curve = average_traces(traces, "by_iter")
            curve.solver = label
            write_trace_csv(curve, out_dir / f"{label}.csv")
            rows.append((label, K, traces[0].final.grad_evals, len(traces), diverged,
                         statistics.median(t.final.stationarity for t in traces),
                         statistics.median(t.final.feasibility for t in traces),
                         statistics.median(t.final.elapsed_ns for t in traces)))
        else:
            rows.append((label, K, 0, 0, diverged, float("nan"), float("nan"), 0))
    header = ("solver", "K", "grad_evals", "trials", "diverged", "median_stationarity",
              "median_feasibility", "median_elapsed_ns")
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join((r[0], str(r[1]), str(r[2]), str(r[3]), str(r[4]),
                               format_float(r[5]), format_float(r[6]), str(int(r[7])))))
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n")
    width = max(10, *(len(r[0]) for r in rows))
    print(f"{'solver':<{width}} {'K':>7} {'evals':>7} {'ok':>3} {'div':>3} "
          f"{'stationarity':>13} {'feasibility':>13}")
    for r in rows:
        print(f"{r[0]:<{width}} {r[1]:>7} {r[2]:>7} {r[3]:>3} {r[4]:>3} {r[5]:>13.4e} {r[6]:>13.4e}")
    return EXIT_OK


def cmd_verify(args):
    vc = VerifyConfig()
    seed = args.seed if args.seed is not None else cfgmod.default_seed()
    vc.seed = seed
    if args.checks:
        vc.checks = tuple(c.strip() for c in args.checks.split(",") if c.strip())
        bad = [c for c in vc.checks if c not in CHECKS]
        if bad:
            raise UsageError(f"unknown checks {bad}; expected a subset of {','.join(CHECKS)}")
    if args.perturb:
        kind, eps = args.perturb
        try:
            vc.perturb = (kind, float(eps))
        except ValueError:
            raise UsageError(f"bad perturbation size {eps!r}") from None
    if args.n_resamples is not None:
        vc.n_resamples = args.n_resamples
    if args.z is not None:
        vc.z = args.z
    reports = run_suite(vc)
    out = Path(args.out)
    write_reports_csv(reports, out)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check} lhs={r.lhs:.6g} rhs={r.rhs:.6g} "
              f"n={r.n_samples} stderr={r.stderr:.3g}")
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed; report written to {out}")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_plot(args):
    traces = [read_trace_csv(p) for p in args.csv]
    labels = args.labels.split(",") if args.labels else None
    if labels and len(labels) != len(traces):
        raise UsageError("--labels needs one entry per CSV")
    text = svg_plot(traces, axis=args.axis, metric=args.metric, labels=labels, title=args.title)
    Path(args.out).write_text(text)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = _Parser(prog="malm", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file with [problem], [solver], [run]")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    p = sub.add_parser("gen", parents=[common], help="generate a problem instance")
    _add_problem_flags(p)
    p.add_argument("--seed", dest="problem_seed", type=int, help="alias of --problem-seed")
    p.add_argument("--out", default="problem.malmpb")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", parents=[common], help="run one trial and write its trace")
    _add_problem_flags(p)
    _add_solver_flags(p)
    _add_run_flags(p)
    p.add_argument("--trial", type=int, default=0, help="trial index (RNG stream id)")
    p.add_argument("--output-mode", choices=("uniform_random", "best_combined", "last"))
    p.add_argument("--out", help="trace CSV path")
    p.add_argument("--force", action="store_true", help="run even if c_eta is below its bound")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", parents=[common], help="multi-trial comparison of all solvers")
    _add_problem_flags(p)
    _add_solver_flags(p, solver=False)
    _add_run_flags(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--solvers", help="comma-separated subset of " + ",".join(SOLVERS))
    p.add_argument("--budget", type=int, help="equalize gradient evaluations instead of iterations")
    p.add_argument("--grid", help="KEY=v1,v2,... runs one variant per value; KEY in "
                   + ",".join(GRID_KEYS))
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="numeric checks of the per-step convergence inequalities")
    p.add_argument("--seed", type=int)
    p.add_argument("--checks", help="comma-separated subset of " + ",".join(CHECKS))
    p.add_argument("--perturb", nargs=2, metavar=("KIND", "EPS"),
                   help="inject a fault: dual-update, primal-update or momentum")
    p.add_argument("--n-resamples", type=int)
    p.add_argument("--z", type=float)
    p.add_argument("--out", default="verify.csv")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="SVG plot of trace CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--axis", choices=("iter", "grad_evals", "time"), default="iter")
    p.add_argument("--metric", choices=("stationarity", "feasibility"), default="stationarity")
    p.add_argument("--labels")
    p.add_argument("--title")
    p.add_argument("--out", default="plot.svg")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0; usage errors already printed their message
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, MalmError, OSError) as exc:
        print(f"malm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
