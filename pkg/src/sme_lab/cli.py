"""``sme-lab`` command line: simulate, compare, moments, plan-batch, sweep, reproduce.

Every run writes ``manifest.json`` (argv, parameters, seeds, outputs) into
its output directory; ``sme-lab --replay DIR/manifest.json`` re-executes it.
Exit codes: 0 success, 2 usage or invalid parameters, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, control, export, moments, presets, svg
from .discrete import DivergenceError
from .ensemble import METHODS, SimSpec, basin_fractions, run_ensemble, weak_error
from .objectives import CATALOG, builtin_objective, load_coefficients, minimizers_1d

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValueError):
    pass


def _sigma_mode(text: str) -> tuple[str, float | None]:
    if text in ("evolve", "freeze"):
        return text, None
    if text.startswith("const:"):
        try:
            v = float(text.split(":", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad constant in {text!r}") from None
        if v < 0:
            raise argparse.ArgumentTypeError("constant Sigma must be >= 0")
        return "const", v
    raise argparse.ArgumentTypeError("expected evolve, freeze or const:<value>")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(text: str) -> np.ndarray:
    """``start:stop:count`` or a comma list."""
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    return np.array(_floats(text))


def _add_objective(p: argparse.ArgumentParser) -> None:
    p.add_argument("--objective", default="quad1d", choices=CATALOG)
    p.add_argument("--dim", type=int, default=100, help="dimension of the *-nd problems")
    p.add_argument("--coeff-seed", type=int, default=presets.ND_SEED)
    p.add_argument("--coeff-file", help="coefficients for the *-nd problems, one per line")
    p.add_argument("--a", type=float, default=1.0, help="curvature of scaled-quad")
    p.add_argument("--shift", type=float, default=0.0, help="component shift of scaled-quad")
    p.add_argument("--n", type=int, default=100, help="component count of linquad")


def _add_run(p: argparse.ArgumentParser) -> None:
    _add_objective(p)
    p.add_argument("--mu", type=float, default=0.9)
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--mu-prime", type=float)
    p.add_argument("--eta-prime", type=float)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=_floats, default=(1.0,), help="scalar (broadcast) or comma list")
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--sigma-mode", type=_sigma_mode, default=("evolve", None))
    p.add_argument("--batch-file", help="per-iteration batch sizes for asgd-batch")
    p.add_argument("--per-sample-staleness", action="store_true")
    p.add_argument("--staleness-sigma", action="store_true",
                   help="SME-SGD with the staleness-augmented covariance (experimental)")
    p.add_argument("--allow-divergence", action="store_true")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--workers", type=int)


def _add_out(p: argparse.ArgumentParser, default: str) -> None:
    p.add_argument("--out", default=default)
    p.add_argument("--format", action="append", choices=("csv", "json", "svg"),
                   help="outputs to write (repeatable; default csv and json)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sme-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--replay", metavar="MANIFEST", help="re-run the command stored in a manifest")
    sub = parser.add_subparsers(dest="verb")

    p = sub.add_parser("simulate", help="ensemble statistics for one model")
    p.add_argument("--method", choices=METHODS, default="asgd")
    _add_run(p)
    _add_out(p, "sme_lab_out/simulate")

    p = sub.add_parser("compare", help="several models on one problem, with weak errors")
    p.add_argument("--methods", default="asgd,sme-asgd,sme-sgd")
    _add_run(p)
    _add_out(p, "sme_lab_out/compare")

    p = sub.add_parser("moments", help="closed-form moments for f = a x^2 / 2")
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=0.9)
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--u", type=float, default=0.0)
    _add_out(p, "sme_lab_out/moments")

    p = sub.add_parser("plan-batch", help="optimal mini-batch schedule")
    p.add_argument("--gamma", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--mu", type=float, default=0.9)
    p.add_argument("--eta", type=float, default=0.02)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--a", type=float, default=2.0, help="surrogate curvature for Re(lambda)")
    p.add_argument("--z0", type=float, default=0.0)
    p.add_argument("--clock", choices=("eta", "dt"), default="eta")
    p.add_argument("--fit", type=_floats, metavar="KSTAR,BATCH",
                   help="choose gamma and T to hit this transition step and final batch")
    _add_out(p, "sme_lab_out/plan")

    p = sub.add_parser("sweep", help="second-moment decay rate over a grid of mu")
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--mu-grid", type=_grid, default=_grid("0.90:0.99:19"))
    p.add_argument("--T", type=float, default=40.0)
    p.add_argument("--window", type=_floats, default=(10.0, 30.0))
    p.add_argument("--points", type=int, default=401)
    _add_out(p, "sme_lab_out/sweep")

    p = sub.add_parser("reproduce", help="figure presets")
    p.add_argument("figure", choices=sorted(presets.PRESETS))
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int)
    _add_out(p, "")
    return parser


def make_objective(args):
    name = args.objective
    if name in ("sep-quad-nd", "sep-quartic-nd"):
        if args.coeff_file:
            return builtin_objective(name, coeffs=load_coefficients(args.coeff_file))
        return builtin_objective(name, dim=args.dim, seed=args.coeff_seed)
    if name == "scaled-quad":
        return builtin_objective(name, a=args.a, shift=args.shift)
    if name == "linquad":
        return builtin_objective(name, n=args.n)
    return builtin_objective(name)


def make_spec(args, method: str, obj=None) -> SimSpec:
    obj = obj or make_objective(args)
    x0 = args.x0 * obj.dim if len(args.x0) == 1 else args.x0
    mode, const = args.sigma_mode
    batches = None
    if args.batch_file:
        batches = export.read_batch_file(args.batch_file)
        if len(batches) < args.steps:
            raise UsageError(f"batch file has {len(batches)} entries, need >= steps = {args.steps}")
        batches = batches[: args.steps]
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    return SimSpec(method, obj, x0, args.steps, mu=args.mu, eta=args.eta, mu_prime=args.mu_prime,
                   eta_prime=args.eta_prime, substeps=args.substeps, sigma_mode=mode,
                   Sigma_const=const, batch_sizes=batches,
                   per_sample_staleness=args.per_sample_staleness,
                   staleness_sigma=args.staleness_sigma, checkpoint_every=args.checkpoint_every)


def _formats(args) -> set[str]:
    return set(args.format or ("csv", "json"))


def _stats_summary(stats, obj) -> dict:
    out = {"samples": stats.sample_count, "divergences": stats.divergences,
           "final_mean": stats.mean[-1], "final_second_moment": stats.second_moment_norm[-1]}
    if obj.dim == 1 and obj.name == "doublewell":
        mins = minimizers_1d(obj)
        out["basin_fractions"] = basin_fractions(stats.finals, mins)[0]
        out["minimizers"] = mins
    return out


def cmd_simulate(args, out: Path) -> dict:
    spec = make_spec(args, args.method)
    stats = run_ensemble(spec, args.samples, args.seed, args.workers,
                         allow_divergence=args.allow_divergence)
    fmt = _formats(args)
    if "csv" in fmt:
        export.write_stats(out / "stats.csv", stats)
    if "svg" in fmt:
        svg.emit_chart(out / "mean.svg", [svg.mean_band_series(args.method, stats)],
                       title=f"{args.method} on {spec.objective.name}", xlabel="time", ylabel="E[x]")
    return {"method": args.method, "objective": spec.objective.name, **_stats_summary(stats, spec.objective)}


def cmd_compare(args, out: Path) -> dict:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or len(methods) < 2:
        raise UsageError(f"--methods needs two or more of {', '.join(METHODS)}; got {args.methods!r}")
    obj = make_objective(args)
    stats = {}
    for i, m in enumerate(methods):
        spec = make_spec(args, m, obj)
        stats[m] = run_ensemble(spec, args.samples, args.seed + i, args.workers,
                                allow_divergence=args.allow_divergence)
    fmt = _formats(args)
    if "csv" in fmt:
        for m, s in stats.items():
            export.write_stats(out / f"stats_{m}.csv", s)
    if "svg" in fmt:
        series = []
        for m, s in stats.items():
            ser = svg.mean_band_series(m, s)
            ser.x = s.checkpoints
            series.append(ser)
        svg.emit_chart(out / "compare.svg", series, title=f"{obj.name}", xlabel="iteration k",
                       ylabel="E[x_k]")
    ref = methods[0]
    return {"reference": ref, "objective": obj.name,
            "weak_error": {m: weak_error(stats[ref], stats[m]) for m in methods[1:]},
            "per_method": {m: _stats_summary(s, obj) for m, s in stats.items()}}


def cmd_moments(args, out: Path) -> dict:
    sys_ = moments.build_moment_system(args.a, args.mu, args.eta, args.sigma)
    _, v0 = moments.initial_moments(args.x0, args.a, args.mu, args.eta)
    t = np.linspace(0.0, args.T, args.points)
    series = moments.integrate_moment_ode(sys_, v0, t, u=args.u)
    fmt = _formats(args)
    if "csv" in fmt:
        export.write_csv(out / "moments.csv", *export.moment_rows(t, series, sys_, args.u))
    if "svg" in fmt:
        svg.emit_chart(out / "moments.svg", [svg.Series("E[X^2]", t, series[:, 0])],
                       title=f"second moment, a={args.a:g}, mu={args.mu:g}", xlabel="t", ylabel="E[X^2]")
    return {"first_moment_eigenvalues": sys_.first_moment_spectrum(),
            "second_moment_eigenvalues": moments.second_moment_eigenvalues(args.a, args.mu, args.eta),
            "lambda_plus": moments.lambda_plus(args.a, args.mu, args.eta),
            "stationary": moments.stationary_moments(args.a, args.mu, args.eta, args.sigma, args.u),
            "mu_opt": moments.mu_opt(args.a, args.eta), "final": series[-1]}


def cmd_plan(args, out: Path) -> dict:
    if args.fit:
        if len(args.fit) != 2:
            raise UsageError("--fit expects KSTAR,BATCH")
        fit = control.fit_schedule(int(args.fit[0]), args.fit[1], args.mu, args.eta, args.sigma,
                                   a=args.a, clock=args.clock)
        problem, sched = fit.problem, fit.schedule
    else:
        if args.gamma is None or args.T is None:
            raise UsageError("plan-batch needs --gamma and --T (or --fit)")
        problem = control.ControlProblem(args.gamma, args.T, args.sigma, args.mu, args.eta,
                                         a=args.a, z0=args.z0)
        sched = control.plan_batches(problem, args.clock)
    fmt = _formats(args)
    if "csv" in fmt:
        export.write_schedule(out / "schedule.csv", sched)
    if "svg" in fmt:
        svg.emit_chart(out / "schedule.svg",
                       [svg.Series("batch size", np.arange(sched.steps), sched.batch_sizes, step=True)],
                       title="planned batch sizes", xlabel="iteration k", ylabel="1 + u")
    return {**export.schedule_summary(sched), "gamma": problem.gamma, "T": problem.T,
            "Re_lambda": problem.lam, "final_batch": int(sched.batch_sizes[-1]) if sched.steps else None}


def cmd_sweep(args, out: Path) -> dict:
    if len(args.window) != 2:
        raise UsageError("--window expects START,END")
    rows = presets.decay_sweep(args.a, args.eta, args.mu_grid, args.T, tuple(args.window), args.points)
    fmt = _formats(args)
    if "csv" in fmt:
        export.write_csv(out / "sweep.csv", ["mu", "closed_form_rate", "fitted_rate"], rows)
    if "svg" in fmt:
        mu = [r[0] for r in rows]
        svg.emit_chart(out / "sweep.svg", [svg.Series("closed form", mu, [-r[1] for r in rows]),
                                           svg.Series("fitted", mu, [-r[2] for r in rows], dashed=True)],
                       title="second-moment decay rate", xlabel="mu", ylabel="-rate")
    best = min(rows, key=lambda r: r[2])
    return {"mu_opt": moments.mu_opt(args.a, args.eta), "fastest_fitted_mu": best[0],
            "fastest_fitted_rate": best[2]}


def cmd_reproduce(args, out: Path) -> dict:
    fn = presets.PRESETS[args.figure]
    return fn(samples=args.samples, seed=args.seed, out=out if _formats(args) & {"csv", "svg"} else None,
              workers=args.workers)


COMMANDS = {"simulate": cmd_simulate, "compare": cmd_compare, "moments": cmd_moments,
            "plan-batch": cmd_plan, "sweep": cmd_sweep, "reproduce": cmd_reproduce}


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("replay",)}


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    if args.replay:
        try:
            manifest = json.loads(Path(args.replay).read_text())
            stored = manifest["argv"]
        except (OSError, KeyError, ValueError) as e:
            print(f"sme-lab: cannot replay {args.replay}: {e}", file=sys.stderr)
            return EXIT_USAGE
        return run(stored)
    if args.verb is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or f"sme_lab_out/{args.figure}")
    try:
        summary = COMMANDS[args.verb](args, out)
    except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"sme-lab: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError) as e:
        print(f"sme-lab: {e}", file=sys.stderr)
        return EXIT_USAGE
    if "json" in _formats(args):
        export.write_json(out / "summary.json", summary)
    outputs = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()
                     and p.name != "manifest.json")
    export.write_json(out / "manifest.json", {
        "argv": list(argv), "verb": args.verb, "params": _params(args),
        "seed": getattr(args, "seed", None), "version": __version__, "outputs": outputs})
    print(json.dumps(export._jsonable(summary), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    return run(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
