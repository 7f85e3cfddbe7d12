"""
Command-line front end.

    selftrig simulate --config FILE [--out DIR] [--seed N] [--override KEY=VALUE ...]
    selftrig triggers --config FILE [--grid N] [--radius R]
    selftrig verify   --config FILE [--points N]
    selftrig compare  FILE FILE [...]

Exit codes: 0 everything passed, 1 a monitor or check failed, 2 bad usage or
configuration.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import Resolved, load_config, resolve, to_dict
from .dynamics import sample_ball
from .errors import SelfTrigError
from .oracle import (LyapunovDecrease, SafetyBall, oracle_hold_time, oracle_max_norm,
                     pair_sampler)
from .sim import Trace, check_lyapunov_decrease, run_scenario
from .trigger import (Region, TriggerMode, check_admissible, compute_phi2,
                      estimate_M2, hold_times, lipschitz_factors, nu_threshold)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _num(v):
    return format(float(v), ".17g")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


# --------------------------------------------------------------------------
# exports

def trace_csv(trace: Trace) -> str:
    n = trace.states.shape[1]
    p = trace.controls.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(p)]
               + ["V", "event"])
    for t, x, u, v, lab in zip(trace.times, trace.states, trace.controls, trace.V_values,
                               trace.labels):
        w.writerow([_num(t)] + [_num(a) for a in x] + [_num(a) for a in u] + [_num(v), lab])
    return buf.getvalue()


def bounds_summary(res: Resolved) -> dict:
    policy = res.policy
    out = {"M2": None, "M3": None, "tau_min": None, "delta_max": None, "nu": None}
    if policy is not None:
        pc = policy.precomputed
        out.update(M2=pc.M2, M3=pc.M3, tau_min=pc.tau_min, delta_max=pc.delta_max,
                   L_f0=pc.L_f0, L_kappa=pc.L_kappa, L_x=pc.L_x)
        if policy.mode.is_safety and policy.budget.theta_g > 0:
            out["nu"] = nu_threshold(policy.cert, policy.delta, policy.budget.theta_g)
    return out


def monitor_verdicts(res: Resolved, trace: Trace) -> dict:
    v = {"completed": trace.completed, "diverged": trace.diverged,
         "domain_exit": trace.domain_exit, "internal_error": trace.internal_error}
    if trace.safety is not None:
        v["safety"] = {"safe": trace.safety.safe,
                       "first_violation": trace.safety.first_violation,
                       "max_norm": trace.safety.max_norm}
    policy = res.policy
    if policy is not None and policy.mode is TriggerMode.STABILITY:
        dec = check_lyapunov_decrease(trace, res.certificate, policy.budget.total)
        v["decrease"] = {"ok": dec.ok, "worst_margin": dec.worst_margin,
                         "n_checked": dec.n_checked, "first_violation": dec.first_violation}
    ok = trace.completed
    ok &= v.get("safety", {"safe": True})["safe"]
    ok &= v.get("decrease", {"ok": True})["ok"]
    v["pass"] = bool(ok)
    return v


def run_summary(res: Resolved, trace: Trace) -> dict:
    stats = trace.stats
    return _jsonable({
        "name": res.config.name,
        "version": __version__,
        "seed": res.scenario.rng_seed,
        "bounds": bounds_summary(res),
        "monitors": monitor_verdicts(res, trace),
        "stats": None if stats is None else {
            "n_samples": stats.n_samples, "mean_interval": stats.mean_interval,
            "min_interval": stats.min_interval, "max_interval": stats.max_interval,
            "mean_delay": stats.mean_delay, "max_delay": stats.max_delay,
            "samples_per_second": stats.samples_per_second},
        "config": to_dict(res.config),
    })


# --------------------------------------------------------------------------
# subcommands

def _load(args):
    cfg = load_config(args.config, args.override or ())
    return resolve(cfg, seed=args.seed)


def cmd_simulate(args) -> int:
    res = _load(args)
    trace = run_scenario(res.scenario)
    summary = run_summary(res, trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / res.config.output.trace).write_text(trace_csv(trace))
    (out / res.config.output.summary).write_text(json.dumps(summary, indent=2) + "\n")
    st = summary["stats"] or {}
    print(f"{res.config.name}: samples={st.get('n_samples')} "
          f"mean_interval={st.get('mean_interval')} pass={summary['monitors']['pass']}")
    return EXIT_OK if summary["monitors"]["pass"] else EXIT_FAIL


def _grid_points(n, count, radius):
    # integer construction keeps the grid exactly symmetric with 0 on odd counts
    axis = radius * (2.0 * np.arange(count) - (count - 1)) / (count - 1)
    return np.array(list(itertools.product(axis, repeat=n)))


def cmd_triggers(args) -> int:
    res = _load(args)
    policy = res.policy
    if policy is None:
        raise SelfTrigError("triggers needs a self-triggered sampler")
    limit = policy.delta if policy.mode.is_safety else policy.system.domain_radius
    radius = args.radius if args.radius is not None else 0.99 * limit
    if not 0 < radius <= limit:
        raise SelfTrigError(f"grid radius {radius} exceeds the domain radius {limit}")
    pts = _grid_points(policy.system.n, args.grid, radius)
    norms = np.linalg.norm(pts, axis=1)
    inside = norms < limit if policy.mode.is_safety else norms <= limit
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = policy.system.n
    w.writerow([f"x{i + 1}" for i in range(n)] + ["M1", "tau_prime", "tau_s"])
    for x in pts[inside]:
        M1, tp, ts = hold_times(policy, x)
        w.writerow([_num(a) for a in x] + [_num(M1), _num(tp), _num(ts)])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / res.config.output.triggers).write_text(buf.getvalue())
    print(f"{res.config.name}: {int(inside.sum())} grid points, "
          f"tau_min={policy.precomputed.tau_min}")
    return EXIT_OK


def conservativeness_sweep(policy, n_points: int, rng) -> list[dict]:
    """Points where ``tau_s`` exceeds the brute-force hold time."""
    rng = np.random.default_rng(rng)
    sys, fb, cert = policy.system, policy.feedback, policy.cert
    if policy.mode.is_safety:
        xs = sample_ball(rng, sys.n, policy.delta, n_points)
        criterion = SafetyBall(policy.delta, policy.precomputed.delta_max)
    else:
        xs = sample_ball(rng, sys.n, policy.region.radius, n_points,
                         inner=min(cert.inner_radius, policy.region.radius))
        xs = xs[policy.region.contains(xs)]
        criterion = LyapunovDecrease(cert, policy.budget.theta1)
    bad = []
    for x in xs:
        tau = hold_times(policy, x)[2]
        extra = getattr(criterion, "horizon", 0.0)
        o = oracle_hold_time(sys, fb, x, criterion, h_max=2.0 * tau + extra + 1e-3,
                             tol=1e-6 * (1.0 + tau))
        if tau > o.hold:
            bad.append({"x_k": x.tolist(), "tau_s": tau, "oracle": o.hold})
    return bad


def bound_validation(policy, rng) -> list[dict]:
    """Compare sampled M2 / M3 against 10x denser brute-force maxima."""
    rng = np.random.default_rng(rng)
    sys, fb, b = policy.system, policy.feedback, policy.bounds
    radius = policy.region.radius
    region = Region(radius)
    out = []
    m2 = estimate_M2(policy, region=region, bounds=b, rng=rng)
    dense = oracle_max_norm(
        lambda z: compute_phi2(sys, fb, z[:, :sys.n], z[:, sys.n:], b.fd_step),
        pair_sampler(sys.n, radius), 10 * b.n_level_samples, rng)
    if m2 < dense:
        out.append({"bound": "M2", "estimate": m2, "dense": dense})
    L = lipschitz_factors(sys, fb, region, b.n_lipschitz_samples, rng)
    m3 = b.safety_margin * float(np.prod(L))
    dense_L = lipschitz_factors(sys, fb, region, 10 * b.n_lipschitz_samples, rng)
    if m3 < float(np.prod(dense_L)):
        out.append({"bound": "M3", "estimate": m3, "dense": float(np.prod(dense_L))})
    return out


def cmd_verify(args) -> int:
    res = _load(args)
    policy = res.policy
    if policy is None:
        raise SelfTrigError("verify needs a self-triggered sampler")
    seed = res.scenario.rng_seed
    report = {"name": res.config.name}
    breaches = conservativeness_sweep(policy, args.points, seed)
    report["conservativeness"] = {"n_points": args.points, "breaches": breaches}
    bounds = bound_validation(policy, seed + 1)
    report["bound_validation"] = {"failures": bounds}
    ok = not breaches and not bounds
    if policy.mode.is_safety:
        theta_g = policy.budget.theta_g
        if theta_g > 0:
            adm = check_admissible(policy.system, policy.feedback, policy.cert, policy.delta,
                                   theta_g, rng=seed + 2)
            report["admissibility"] = {"admissible": adm.admissible, "margin": adm.margin,
                                       "nu": adm.nu, "max_norm": adm.max_norm}
            ok &= adm.admissible
        else:
            zero = not np.any(policy.system.d_bounds.lower) and not np.any(
                policy.system.d_bounds.upper) and not np.any(
                policy.system.mu_bounds.lower) and not np.any(policy.system.mu_bounds.upper)
            report["admissibility"] = {"admissible": zero, "margin": 0.0, "nu": 0.0,
                                       "max_norm": 0.0 if zero else None}
            ok &= zero
    report["pass"] = bool(ok)
    print(json.dumps(_jsonable(report), indent=2))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise SelfTrigError("compare needs at least two configs")
    cfgs = [load_config(p, args.override or ()) for p in args.configs]
    systems = {c.system.name for c in cfgs}
    if len(systems) != 1:
        raise SelfTrigError(f"configs use different systems: {sorted(systems)}")
    rows = []
    for cfg in cfgs:
        res = resolve(cfg, seed=args.seed)
        trace = run_scenario(res.scenario)
        st = trace.stats
        safe = trace.safety.safe if trace.safety is not None else None
        dmax = res.policy.precomputed.delta_max if res.policy is not None else None
        # a diverging run stops early, so rates use the simulated span
        span = float(trace.times[-1] - trace.times[0])
        rows.append({"name": cfg.name, "n_samples": st.n_samples,
                     "samples_per_100s": 100.0 * st.n_samples / span,
                     "mean_interval": st.mean_interval, "safe": safe, "delta_max": dmax})
    cols = list(rows[0])
    text = io.StringIO()
    w = csv.writer(text, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r[c] is None else (_num(r[c]) if isinstance(r[c], float) else r[c])
                    for c in cols])
    widths = [max(len(c), 12) for c in cols]
    print("  ".join(c.ljust(wd) for c, wd in zip(cols, widths)))
    for r in rows:
        cells = [("-" if r[c] is None else f"{r[c]:.6g}" if isinstance(r[c], float)
                  else str(r[c])) for c in cols]
        print("  ".join(s.ljust(wd) for s, wd in zip(cells, widths)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(text.getvalue())
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selftrig", description=__doc__.strip().splitlines()[0])
    ap.add_argument("--version", action="version", version=f"selftrig {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="scenario YAML file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="set a dotted config key, e.g. sampler.theta1=0.9")

    p = sub.add_parser("simulate", help="run a scenario, write trace CSV and summary")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("triggers", help="tabulate tau_s over a state grid")
    common(p)
    p.add_argument("--grid", type=int, default=21, help="points per axis")
    p.add_argument("--radius", type=float, default=None, help="half-width of the grid")
    p.set_defaults(func=cmd_triggers)
    p = sub.add_parser("verify", help="oracle conservativeness and bound checks")
    common(p)
    p.add_argument("--points", type=int, default=100, help="random sampled states")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("compare", help="side-by-side run statistics")
    common(p, config=False)
    p.add_argument("configs", nargs="+", help="scenario YAML files")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "grid", 2) < 2 or getattr(args, "points", 1) < 1:
        print("error: --grid must be >= 2 and --points >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (SelfTrigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
