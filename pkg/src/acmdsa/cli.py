"""Command line entry point: ``acmdsa run | trials | eval``."""
import argparse
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import _accel
from .artifacts import (coerce_config, emit_artifacts, read_density_csv, read_keyvalues,
                        write_keyvalues)
from .driver import ACMDSAConfig, run_acmdsa
from .errors import ACMDSAError, ParameterError, PreconditionError, RunError
from .problems import HOOK_PRESETS, REGISTRY, get_problem, with_options
from .stochastic import RngStream, RobustCompliance, RtoWeights, evaluate_design

log = logging.getLogger("acmdsa")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

MC_DEFAULTS = {"m": 1000, "N_max": 100, "N_min": 100}
TRIAL_FIELDS = ("seed", "J_hat", "mu_hat", "sigma_hat", "N_step", "N_solve", "wall_s")

class UsageError(Exception):
    pass

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)

def _problem_args(p):
    p.add_argument("--problem", default="simple-column", help=f"one of: {', '.join(sorted(REGISTRY))}")
    p.add_argument("--vf", type=float, default=None, help="volume fraction (default 0.3)")
    p.add_argument("--elements", type=int, default=12_672,
                   help=f"double-hook preset size, one of {sorted(HOOK_PRESETS)}")
    p.add_argument("--grid", type=int, default=100, help="simple-column mesh is grid x grid elements")
    p.add_argument("--deterministic", action="store_true", help="replace the random load by its mean")
    p.add_argument("--no-symmetry", action="store_true", help="do not mirror the gradient")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--solver", choices=("auto", "direct", "cg"), default="auto")
    p.add_argument("--cg-tol", type=float, default=1e-8)

def _run_args(p):
    _problem_args(p)
    p.add_argument("--theta", type=float, default=None, help="step scale; default is the problem preset")
    p.add_argument("--mode", choices=("acmdsa", "mdsa", "mc"), default="acmdsa")
    p.add_argument("--samples", "-m", type=int, default=None, help="samples per step")
    p.add_argument("--move", type=float, default=None, help="initial move limit")
    p.add_argument("--m-eval", type=int, default=None, help="samples for the final evaluation")
    p.add_argument("--config", type=Path, default=None, help="key=value file overriding defaults")

def build_parser():
    parser = _Parser(prog="acmdsa", description="Robust topology optimization with two-sample AC-MDSA.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="one optimization run")
    _run_args(run)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", type=Path, default=Path("out"))

    trials = sub.add_parser("trials", help="independent runs over consecutive seeds")
    _run_args(trials)
    trials.add_argument("--n-trials", type=int, default=5)
    trials.add_argument("--base-seed", type=int, default=0)
    trials.add_argument("--workers", type=int, default=1)
    trials.add_argument("--out", type=Path, default=Path("trials"))

    ev = sub.add_parser("eval", help="re-evaluate a density.csv design")
    _problem_args(ev)
    ev.add_argument("density", type=Path)
    ev.add_argument("--m-eval", type=int, default=10_000)
    ev.add_argument("--seed", type=int, default=0)
    return parser

def make_problem(args, mode="acmdsa"):
    kwargs = {}
    if args.vf is not None:
        kwargs["Vf"] = args.vf
    if args.problem == "double-hook":
        kwargs["n_elements"] = args.elements
    elif args.problem == "simple-column":
        if args.grid < 2 or args.grid % 2:
            raise ParameterError("--grid must be an even integer >= 2")
        kwargs["nx"] = kwargs["ny"] = args.grid
    if mode == "mc":
        kwargs["mc"] = True
    problem = get_problem(args.problem, **kwargs)
    weights = RtoWeights.for_model(args.kappa, problem.loads)
    if args.deterministic:
        problem = problem.deterministic()
    if args.no_symmetry:
        problem = with_options(problem, symmetric=False)
    return problem, weights

def make_config(args, problem):
    values = dict(problem.defaults)
    if args.mode == "mc":
        values.update(MC_DEFAULTS)
    if args.config is not None:
        values.update(coerce_config(read_keyvalues(args.config), ACMDSAConfig))
    if args.theta is not None:
        values["theta"] = args.theta
    values.setdefault("theta", problem.default_theta(args.kappa))
    for flag, key in (("samples", "m"), ("move", "move"), ("m_eval", "m_eval")):
        if getattr(args, flag) is not None:
            values[key] = getattr(args, flag)
    values.update(mode=args.mode, solver=args.solver, cg_tol=args.cg_tol)
    cfg = ACMDSAConfig(**values)
    cfg.validate()
    return cfg

def _echo(problem, weights, schedule):
    return [
        ("problem", problem.name), ("n_elements", problem.mesh.n), ("Vf", problem.Vf),
        ("w", weights.w), ("nu", problem.nu), ("E0", problem.material.E0),
        ("E_min", problem.material.E_min), ("p", problem.material.p),
        ("symmetric", int(problem.symmetric)),
        ("R_start", schedule.R_start), ("R_end", schedule.R_end),
        ("R_begin_step", schedule.start), ("R_interval", schedule.interval),
        ("backend", _accel.backend_name()),
    ]

def _single_run(problem, weights, cfg, seed, out):
    record = run_acmdsa(problem, weights, cfg, seed)
    emit_artifacts(record, problem.mesh, out, _echo(problem, weights, problem.schedule))
    return record

def cmd_run(args):
    problem, weights = make_problem(args, args.mode)
    cfg = make_config(args, problem)
    record = _single_run(problem, weights, cfg, args.seed, args.out)
    print(f"J_hat={record.J_hat:.6g} mu_hat={record.mu_hat:.6g} sigma_hat={record.sigma_hat:.6g} "
          f"N_step={record.N_step} N_solve={record.N_solve} wall_s={record.wall_s:.1f}")
    return EXIT_OK

def _trial_worker(payload):
    args, seed = payload
    problem, weights = make_problem(args, args.mode)
    cfg = make_config(args, problem)
    try:
        rec = _single_run(problem, weights, cfg, seed, args.out / f"seed_{seed}")
    except RunError as exc:
        return seed, None, str(exc)
    return seed, {k: getattr(rec, k) for k in TRIAL_FIELDS}, None

def aggregate(rows):
    """mean/min/max/std (sample) of each numeric trial column."""
    out = {}
    for key in TRIAL_FIELDS[1:]:
        vals = [float(r[key]) for r in rows]
        out[key] = {"mean": statistics.fmean(vals), "min": min(vals), "max": max(vals),
                    "std": statistics.stdev(vals) if len(vals) > 1 else 0.0}
    return out

def representative(rows):
    """Trial whose J_hat is closest to the mean J_hat; lowest seed wins ties."""
    mean = statistics.fmean(r["J_hat"] for r in rows)
    return min(rows, key=lambda r: (abs(r["J_hat"] - mean), r["seed"]))

def write_trials_csv(path, rows, agg):
    lines = [",".join(TRIAL_FIELDS)]
    for r in sorted(rows, key=lambda r: r["seed"]):
        lines.append(",".join(repr(float(r[k])) if k != "seed" else str(r[k]) for k in TRIAL_FIELDS))
    for stat in ("mean", "min", "max", "std"):
        lines.append(",".join([stat] + [repr(agg[k][stat]) for k in TRIAL_FIELDS[1:]]))
    Path(path).write_text("\n".join(lines) + "\n")

def cmd_trials(args):
    if args.n_trials < 1:
        raise ParameterError("--n-trials must be >= 1")
    problem, _ = make_problem(args, args.mode)
    make_config(args, problem)  # validate before spawning anything
    args.out.mkdir(parents=True, exist_ok=True)
    seeds = range(args.base_seed, args.base_seed + args.n_trials)
    payloads = [(args, s) for s in seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_trial_worker, payloads))
    else:
        results = [_trial_worker(p) for p in payloads]
    rows = [r for _, r, err in results if r is not None]
    for seed, _, err in results:
        if err is not None:
            log.warning("trial seed=%d failed: %s", seed, err)
    if not rows:
        print("all trials failed", file=sys.stderr)
        return EXIT_SOLVER
    agg = aggregate(rows)
    write_trials_csv(args.out / "trials.csv", rows, agg)
    rep = representative(rows)
    write_keyvalues(args.out / "representative.txt",
                    [("seed", rep["seed"]), ("J_hat", rep["J_hat"]), ("mean_J_hat", agg["J_hat"]["mean"]),
                     ("n_ok", len(rows)), ("n_failed", len(results) - len(rows))])
    print(f"trials ok={len(rows)}/{len(results)} mean J_hat={agg['J_hat']['mean']:.6g} "
          f"representative seed={rep['seed']}")
    return EXIT_OK

def cmd_eval(args):
    problem, weights = make_problem(args)
    xbar = read_density_csv(args.density, problem.mesh)
    if args.m_eval < 2:
        raise ParameterError("--m-eval must be at least 2")
    ctx = RobustCompliance(problem.fem, problem.material, problem.loads, weights,
                           solver=args.solver, tol=args.cg_tol)
    ev = evaluate_design(xbar, ctx, args.m_eval, RngStream(args.seed))
    print(f"J_hat={ev.J!r} mu_hat={ev.mu!r} sigma_hat={ev.sigma!r} se_J={ev.se_J!r}")
    return EXIT_OK

COMMANDS = {"run": cmd_run, "trials": cmd_trials, "eval": cmd_eval}

def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"acmdsa: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ParameterError, PreconditionError) as exc:
        print(f"acmdsa: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunError as exc:
        print(f"acmdsa: run failed at step {exc.step}: {exc.cause}", file=sys.stderr)
        return EXIT_SOLVER
    except ACMDSAError as exc:
        print(f"acmdsa: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"acmdsa: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

if __name__ == "__main__":
    sys.exit(main())
