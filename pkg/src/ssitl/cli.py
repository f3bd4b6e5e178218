"""Command-line front end.

Exit codes: 0 success, 2 configuration, 3 model, 4 numerical, 5 budget.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .coupling import observable
from .errors import ConfigError, FitError, ModelError, SSITLError
from .kernels import METHODS, NewtonConfig, simulate_path
from .model import ReactionNetwork, load_model
from .stability import coarsest_stable_level, stability_report

log = logging.getLogger("ssitl")

SIMULATE = 6  # stream purpose tag for the simulate subcommand


def _model(path: str) -> ReactionNetwork:
    try:
        return load_model(path)
    except OSError as exc:
        raise ModelError(f"cannot read model {path!r}: {exc}") from exc


def _newton(args) -> NewtonConfig:
    if args.newton_mode == "fixed":
        return NewtonConfig.fixed(args.newton_iters or 3)
    return NewtonConfig(max_iters=args.newton_iters or 50)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_manifest(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    return str(o)


def _base_manifest(args, command: str) -> dict:
    keep = {k: v for k, v in vars(args).items() if k != "func"}
    return {"command": command, "argv": sys.argv[1:], "config": keep}


def _units(net: ReactionNetwork) -> list[str]:
    return [f"{s} [molecules]" for s in net.species]


def cmd_simulate(args) -> int:
    net = _model(args.model)
    cfg = _newton(args)
    out = _out(args)
    if args.method == "ssa":
        h = None
    elif args.h is not None:
        h = args.h
    else:
        h = net.T / 2.0**args.level
    rows = []
    children = np.random.SeedSequence(args.seed, spawn_key=(SIMULATE,)).spawn(args.paths)
    for i, ss in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(ss))
        res = simulate_path(net, args.method, h, rng, cfg, record=args.trajectories)
        rows.append([i, *res.final_state.tolist(), res.steps, res.poisson_draws, res.newton_iters_total,
                     res.negativity_events])
        if args.trajectories:
            _write_csv(out / f"trajectory_{i:04d}.csv", ["time [s]", *_units(net)],
                       ([float(t), *x.tolist()] for t, x in zip(res.times, res.trajectory)))
    _write_csv(out / "finals.csv",
               ["path", *_units(net), "steps [count]", "poisson_draws [count]", "newton_solves [count]",
                "negativity_events [count]"], rows)
    _write_manifest(out / "manifest.json", {**_base_manifest(args, "simulate"), "h": h})
    finals = np.array([r[1:1 + net.d] for r in rows], dtype=float)
    print(f"{args.paths} {args.method} paths to T={net.T:g}; mean final state:")
    for name, m in zip(net.species, finals.mean(axis=0)):
        print(f"  {name}: {m:.6g}")
    return 0


def _levels(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out or min(out) < 0:
        raise ConfigError(f"invalid level list {text!r}")
    return out


def cmd_converge(args) -> int:
    from scipy import stats as sps

    from .mlmc.fitting import LevelStats, fit_and_extrapolate
    from .mlmc.sampling import BOOTSTRAP, PILOT, sample, stream

    net = _model(args.model)
    g = observable(net, args.observable)
    cfg = _newton(args)
    out = _out(args)
    rows, stats = [], []
    for lv in _levels(args.levels):
        acc = sample(net, args.method, lv, g, args.samples, args.seed, PILOT, cfg, args.batch,
                     workers=args.workers, keep=True)
        x = acc.values
        ci = {}
        for name, fn in (("mean", np.mean), ("var", lambda v, axis: np.var(v, ddof=1, axis=axis))):
            if acc.var == 0:
                ci[name] = (fn(x, axis=0), fn(x, axis=0))
                continue
            r = sps.bootstrap((x,), fn, n_resamples=200, vectorized=True, method="percentile",
                              rng=stream(args.seed, BOOTSTRAP, args.method, lv, 0), batch=20)
            ci[name] = (r.confidence_interval.low, r.confidence_interval.high)
        steps = acc.n * 2**lv
        stats.append(LevelStats(lv, args.method, acc.mean, acc.var, acc.work / steps, acc.n))
        rows.append([lv, args.method, acc.n, acc.mean, *ci["mean"], acc.var, *ci["var"], acc.work / steps,
                     int(acc.counters[3])])
        print(f"level {lv:2d}  mean {acc.mean:+.4e}  var {acc.var:.4e}  (n={acc.n})", flush=True)
    _write_csv(out / "convergence.csv",
               ["level", "kind", "n_samples [count]", "mean_diff [molecules]", "mean_lo [molecules]",
                "mean_hi [molecules]", "var_diff [molecules^2]", "var_lo [molecules^2]", "var_hi [molecules^2]",
                "cost [proxy units/step]", "negativity_events [count]"], rows)
    manifest = _base_manifest(args, "converge")
    try:
        fit = fit_and_extrapolate(stats, [])
        manifest["weak_slope"] = -fit.bias_slope
        manifest["variance_slope"] = -fit.var_slope
        print(f"weak order {-fit.bias_slope:.3f}, variance order {-fit.var_slope:.3f}")
    except FitError as exc:
        manifest["fit_error"] = str(exc)
        print(f"fit error: {exc}", file=sys.stderr)
    _write_manifest(out / "manifest.json", manifest)
    return 0


def _tols(values) -> list[float]:
    tols = [float(v) for v in values]
    for t in tols:
        if not t > 0 or not math.isfinite(t):
            raise ConfigError(f"TOL must be positive, got {t}")
    return tols


def cmd_estimate(args) -> int:
    from .mlmc.estimator import EstimatorConfig, run_estimator

    tols = _tols(args.tol)
    net = _model(args.model)
    g = observable(net, args.observable)
    config = EstimatorConfig(theta=args.theta, C_alpha=args.c_alpha, safety=args.safety, mode=args.method,
                             L_int=args.l_int, newton=_newton(args), workers=args.workers, cost_mode=args.cost_mode)
    out = _out(args)
    summary = []
    for tol in tols:
        res = run_estimator(net, g, tol, config, args.seed)
        sub = out if len(tols) == 1 else out / f"tol_{tol:g}"
        sub.mkdir(parents=True, exist_ok=True)
        (sub / "levels.csv").write_text(res.levels_csv())
        doc = res.manifest()
        doc["replay"] = _base_manifest(args, "estimate")
        doc["observable"] = repr(g)
        _write_manifest(sub / "manifest.json", doc)
        p = res.plan
        print(f"TOL={tol:g}: estimate {res.estimate:.6f}  stat bound {res.stat_error_bound:.3g}  "
              f"L={p.L} L_c_exp={p.L_c_exp} L_int={p.L_int} work {res.work_proxy:.4g}")
        summary.append([tol, res.estimate, res.stat_error_bound, res.bias_estimate, p.L, p.L_c_exp,
                        -1 if p.L_int is None else p.L_int, res.work_proxy, res.wall_time])
    if len(tols) > 1:
        _write_csv(out / "summary.csv",
                   ["tol [molecules]", "estimate [molecules]", "stat_error_bound [molecules]",
                    "bias_estimate [molecules]", "L", "L_c_exp", "L_int", "work_proxy [units]", "wall_time [s]"],
                   summary)
    return 0


def cmd_stability(args) -> int:
    net = _model(args.model)
    ref = None if args.ref_state is None else [float(v) for v in args.ref_state.split(",")]
    rep = stability_report(net, ref_state=ref, along_ode=args.along_ode)
    lines = [f"model: {args.model}", f"reference state: {list(rep.ref_state)}", "eigenvalues:"]
    lines += [f"  {e.real:+.6e} {e.imag:+.6e}i" for e in rep.eigenvalues]
    if rep.has_positive_real_part:
        log.warning("drift Jacobian has eigenvalues with positive real part")
        lines.append("warning: eigenvalues with positive real part present")
    if rep.bounded:
        level = coarsest_stable_level(rep.tau_limit, net.T, args.safety)
        lines += [f"tau_limit: {rep.tau_limit:.6e} s", f"coarsest_stable_level (safety {args.safety:g}): {level}"]
    else:
        level = None
        log.warning("no eigenvalue with negative real part: tau_limit unbounded")
        lines.append("tau_limit: unbounded")
    print("\n".join(lines))
    if args.out:
        out = _out(args)
        _write_csv(out / "eigenvalues.csv", ["index", "real [1/s]", "imag [1/s]"],
                   ([i, e.real, e.imag] for i, e in enumerate(rep.eigenvalues)))
        _write_csv(out / "stability.csv", ["tau_limit [s]", "coarsest_stable_level", "safety",
                                           "has_positive_real_part"],
                   [[rep.tau_limit if rep.bounded else "unbounded", "" if level is None else level, args.safety,
                     int(rep.has_positive_real_part)]])
        _write_manifest(out / "manifest.json", _base_manifest(args, "stability"))
    return 0


def cmd_calibrate(args) -> int:
    from .mlmc.cost import calibrate_cost_model

    net = _model(args.model)
    cm = calibrate_cost_model(net, cfg=_newton(args), seed=args.seed, mode=args.cost_mode)
    for k, v in cm.as_dict().items():
        print(f"{k}: {v}")
    if args.out:
        out = _out(args)
        _write_manifest(out / "cost_model.json", {**_base_manifest(args, "calibrate"), "cost_model": cm.as_dict()})
    return 0


def cmd_report(args) -> int:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if "plan" not in doc:
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0
    p = doc["plan"]
    print(f"estimate          {doc['estimate']:.6f}")
    print(f"stat error bound  {doc['stat_error_bound']:.4g}  (target {p['theta'] * p['TOL']:.4g})")
    print(f"bias estimate     {doc['bias_estimate']:.4g}  (target {(1 - p['theta']) * p['TOL']:.4g})")
    print(f"levels            L_c_imp={p['L_c_imp']} L_c_exp={p['L_c_exp']} L_int={p['L_int']} L={p['L']}")
    print(f"work proxy        {doc['work_proxy']:.4g}   wall time {doc['wall_time_s']:.1f} s")
    print("level  kind             n_samples      mean_diff       var_diff")
    for r in doc["levels"]:
        print(f"{r['level']:5d}  {r['kind']:15s} {r['n_samples']:10d} {r['mean_diff']:+14.6e} {r['var_diff']:14.6e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default="example1", help="model file or bundled example name")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--observable", default=None, help="species name or 1-based index (default: last)")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--safety", type=float, default=1.0)
    common.add_argument("--newton-mode", choices=("tolerance", "fixed"), default="tolerance")
    common.add_argument("--newton-iters", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ssitl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate paths")
    s.add_argument("--method", choices=tuple(METHODS), default="ssi")
    s.add_argument("--paths", type=int, default=1)
    s.add_argument("--level", type=int, default=10, help="step size T / 2**level")
    s.add_argument("--h", type=float, default=None, help="step size in seconds (overrides --level)")
    s.add_argument("--trajectories", action="store_true", help="write one trajectory CSV per path")
    s.set_defaults(func=cmd_simulate, out_default="simulate_out")

    s = sub.add_parser("converge", parents=[common], help="level statistics of coupled differences")
    s.add_argument("--method", choices=("imp-imp", "exp-imp", "exp-exp"), default="imp-imp")
    s.add_argument("--levels", default="1-6")
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--batch", type=int, default=10_000)
    s.set_defaults(func=cmd_converge, out_default="converge_out")

    s = sub.add_parser("estimate", parents=[common], help="multilevel estimate of E[g(X(T))]")
    s.add_argument("--tol", nargs="+", required=True)
    s.add_argument("--method", choices=("auto", "ssi", "hybrid", "explicit", "mc"), default="auto")
    s.add_argument("--theta", type=float, default=0.5)
    s.add_argument("--c-alpha", type=float, default=1.96)
    s.add_argument("--l-int", type=int, default=None)
    s.add_argument("--cost-mode", choices=("proxy", "wall"), default="proxy")
    s.set_defaults(func=cmd_estimate, out_default="estimate_out")

    s = sub.add_parser("stability", parents=[common], help="explicit tau-leap stability limit")
    s.add_argument("--ref-state", default=None, help="comma-separated reference state (default: x0)")
    s.add_argument("--along-ode", action="store_true")
    s.set_defaults(func=cmd_stability, out_default=None)

    s = sub.add_parser("calibrate", parents=[common], help="fit the per-step cost model")
    s.add_argument("--cost-mode", choices=("proxy", "wall"), default="proxy")
    s.set_defaults(func=cmd_calibrate, out_default=None)

    s = sub.add_parser("report", help="summarise an estimate manifest")
    s.add_argument("manifest", help="manifest.json or its directory")
    s.set_defaults(func=cmd_report, out_default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "out", None) is None and args.out_default is not None:
        args.out = args.out_default
    del args.out_default
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except SSITLError as exc:
        stage = getattr(exc, "stage", args.command)
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return exc.exit_code
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
