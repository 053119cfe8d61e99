"""Command-line front end; every command is deterministic given its flags,
input files, and seed.  Exit codes: 0 ok, 1 verification failure, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import adversary, evsim, offline, ota
from .core import (
    AGGREGATE,
    SEPARABLE,
    InvalidSetupError,
    ParseError,
    Setup,
    ValidationError,
    dumps_canonical,
    load_instance,
    save_instance,
)
from .thresholds import (
    Variant,
    boundary_checks,
    equality_residual,
    make_family,
    verify_necessary_condition,
    verify_sufficient_ode,
)

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_INPUT = 2


def _setup_from_args(args) -> Setup:
    caps = tuple(float(c) for c in args.capacities.split(",")) if args.capacities else (1.0,)
    lo = args.lower
    return Setup(capacities=caps, lower_bound=lo, upper_bound=lo * args.theta)


def _family_from_args(args):
    setup = _setup_from_args(args)
    return make_family(Variant(args.family), setup, c=args.c)


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(path).write_text(text if text.endswith("\n") else text + "\n")


def cmd_ratio(args) -> int:
    fam = _family_from_args(args)
    report = {
        "family": fam.variant.value,
        "theta": args.theta,
        "c": args.c,
        "alpha": fam.ratio,
        "knee_per_unit_capacity": [k / c for k, c in zip(fam.knees, fam.setup.capacities)],
        "ode_max_violation": max(
            verify_sufficient_ode(fam, m, 2000) for m in range(fam.num_knapsacks)
        ),
    }
    _write(args.out, dumps_canonical(report))
    return EXIT_OK


def cmd_ratio_curve(args) -> int:
    rows = ["theta,alpha"]
    for th_val in np.linspace(args.theta_min, args.theta_max, args.points):
        setup = Setup(capacities=(1.0,), lower_bound=1.0, upper_bound=float(th_val))
        fam = make_family(Variant(args.family), setup, c=args.c)
        rows.append(f"{format(float(th_val), '.12g')},{format(fam.ratio, '.12g')}")
    _write(args.out, "\n".join(rows))
    return EXIT_OK


def cmd_run(args) -> int:
    inst = load_instance(args.instance)
    setup = inst.setup
    fam = make_family(Variant(args.family), setup, c=args.c)
    if args.policy == "ota":
        policy = ota.ota_policy(fam, mode=inst.value_mode)
    elif args.policy == "ota-integral":
        policy = ota.ota_integral_policy(fam, mode=inst.value_mode)
    else:
        policy = ota.fta_policy(setup, fixed_price=args.fixed_price, mode=inst.value_mode)
    result = ota.run(policy, inst)
    report = {
        "policy": args.policy,
        "family": args.family,
        "total_value": result.total_value,
        "final_utilizations": list(result.final_state.utilizations),
        "per_item_values": list(result.per_item_values),
    }
    _write(args.out, dumps_canonical(report))
    if args.trace:
        with open(args.trace, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["item", "assignment", "value", "utilizations_after"])
            util = np.zeros(setup.num_knapsacks)
            for i, (a, v) in enumerate(zip(result.assignments, result.per_item_values)):
                util += np.asarray(a.fractions)
                w.writerow([
                    i,
                    ";".join(format(y, ".12g") for y in a.fractions),
                    format(v, ".12g"),
                    ";".join(format(u, ".12g") for u in util),
                ])
    return EXIT_OK


def cmd_offline(args) -> int:
    inst = load_instance(args.instance)
    if args.mode:
        want = AGGREGATE if args.mode == "agg" else SEPARABLE
        if want != inst.value_mode:
            raise ParseError(f"instance mode is {inst.value_mode}, not {want}")
    sol = offline.offline_value(inst, max_iter=args.max_iter, gap_tol=args.gap_tol)
    report = {
        "value": sol.value,
        "dual_value": sol.dual_value,
        "gap": sol.gap,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "knapsack_prices": list(sol.knapsack_prices),
        "item_prices": list(sol.item_prices),
        "assignments": [list(a.fractions) for a in sol.assignments],
    }
    _write(args.out, dumps_canonical(report))
    return EXIT_OK


def cmd_adversary(args) -> int:
    setup = _setup_from_args(args)
    if args.kind == "cnd":
        inst = adversary.gen_rising(setup, args.top if args.top else setup.upper_bound,
                                    args.epsilon)
    elif args.kind == "case3":
        inst = adversary.gen_split_load(setup, args.split)
    else:
        inst = adversary.gen_random(setup, args.seed, args.n_items,
                                    mode=SEPARABLE if args.separable else AGGREGATE)
    save_instance(inst, args.out or "instance.json")
    return EXIT_OK


def cmd_empirical_cr(args) -> int:
    paths = sorted(Path(args.instances).glob("*.json"))
    if not paths:
        raise ParseError(f"no instance files under {args.instances}")
    instances = [load_instance(p) for p in paths]
    setup = instances[0].setup
    fam = make_family(Variant(args.family), setup, c=args.c)
    if args.policy == "ota":
        policy = ota.ota_policy(fam, mode=instances[0].value_mode)
    else:
        policy = ota.fta_policy(setup, mode=instances[0].value_mode)
    rep = adversary.empirical_cr(policy, instances)
    rows = ["instance,ratio"]
    for p, r in zip(paths, rep.ratios):
        rows.append(f"{p.name},{'inf' if math.isinf(r) else format(r, '.12g')}")
    rows.append(f"max,{format(rep.max_ratio, '.12g')}")
    _write(args.out, "\n".join(rows))
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.synthetic:
        sessions = evsim.synthetic_sessions(args.synthetic, seed=args.seed, slots=args.slots)
    else:
        if not args.sessions:
            raise ParseError("simulate needs --sessions CSV or --synthetic N")
        sessions = evsim.load_sessions(args.sessions, slots=args.slots,
                                       slot_length=args.slot_length, day_split=args.day_split)
    config = evsim.SimConfig(
        slots=args.slots,
        spread=args.theta,
        congestion=args.congestion if args.congestion in evsim.COVERAGE_PRESETS
        else float(args.congestion),
        trials=args.trials,
        seed=args.seed,
        value_kind=args.values,
        adaptive=args.adaptive,
        day_count=args.days,
    )
    report = evsim.run_comparison(config, sessions, policy_names=tuple(args.policy_set.split(",")))
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    evsim.emit_cdf(report, outdir / "cdf.csv", outdir / "summary.json")
    evsim.emit_trials(report, outdir / "trials.csv")
    return EXIT_OK


def cmd_verify(args) -> int:
    failures = []
    checks = {}
    for th_val in (float(t) for t in args.theta_grid.split(",")):
        setup = Setup(capacities=(args.capacity,), lower_bound=1.0, upper_bound=th_val)
        fam = make_family(Variant(args.family), setup, c=args.c)
        if args.perturb_alpha:
            fam = type(fam)(
                variant=fam.variant, setup=fam.setup,
                ratio=fam.ratio * (1.0 + args.perturb_alpha),
                knees=fam.knees, c=fam.c,
            )
        scale = 1e-6 * setup.upper_bound * args.capacity
        entry = {}
        entry["ode_max_violation"] = verify_sufficient_ode(fam, 0, 10_000)
        entry["ode_equality_residual"] = equality_residual(fam, 0, 10_000)
        entry.update(boundary_checks(fam, 0))
        if entry["ode_max_violation"] > scale:
            failures.append(f"theta={th_val}: sufficient condition violated")
        if not args.perturb_alpha and entry["ode_equality_residual"] > scale:
            failures.append(f"theta={th_val}: equality residual too large")
        if entry["ceiling_error"] > 1e-9 * setup.upper_bound:
            failures.append(f"theta={th_val}: price at capacity misses the ceiling")
        if fam.variant is Variant.SINGLE:
            nec = verify_necessary_condition(fam)
            entry.update(nec)
            if nec["stream_value_residual"] > 1e-6 * setup.upper_bound * args.capacity:
                failures.append(f"theta={th_val}: lower-bound stream condition violated")
            if nec["start_error"] > 1e-9 * args.capacity or nec["end_error"] > 1e-9 * args.capacity:
                failures.append(f"theta={th_val}: utilization curve endpoints off")
            if nec["inverse_error"] > 1e-9 * setup.upper_bound:
                failures.append(f"theta={th_val}: price/utilization inverse mismatch")
        checks[format(th_val, ".12g")] = entry
    report = {"family": args.family, "failures": failures, "checks": checks}
    _write(args.out, dumps_canonical(report))
    return EXIT_VERIFY_FAIL if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="okra", description=__doc__)
    p.add_argument("--log-level", default="warning")
    sub = p.add_subparsers(dest="command", required=True)

    def common_family(q, family_required=True):
        q.add_argument("--family", required=family_required,
                       choices=[v.value for v in Variant], default=None if family_required else "got")
        q.add_argument("--theta", type=float, default=36.0,
                       help="ratio of the max to min marginal value")
        q.add_argument("--lower", type=float, default=1.0, help="marginal-value floor L")
        q.add_argument("--capacities", default="1.0", help="comma-separated knapsack capacities")
        q.add_argument("--c", type=float, default=1.0, help="relaxed-family average-value parameter")

    q = sub.add_parser("ratio", help="competitive ratio, knee, and ODE check for one family")
    common_family(q)
    q.add_argument("--out", default="-")
    q.set_defaults(fn=cmd_ratio)

    q = sub.add_parser("ratio-curve", help="CSV of (theta, alpha) over a theta range")
    common_family(q)
    q.add_argument("--theta-min", type=float, default=1.0)
    q.add_argument("--theta-max", type=float, default=100.0)
    q.add_argument("--points", type=int, default=100)
    q.add_argument("--out", default="-")
    q.set_defaults(fn=cmd_ratio_curve)

    q = sub.add_parser("run", help="run an online policy over an instance file")
    common_family(q)
    q.add_argument("--policy", choices=["ota", "fta", "ota-integral"], required=True)
    q.add_argument("--instance", required=True)
    q.add_argument("--fixed-price", type=float, default=None)
    q.add_argument("--out", default="-")
    q.add_argument("--trace", default=None, help="per-item CSV path")
    q.set_defaults(fn=cmd_run)

    q = sub.add_parser("offline", help="offline oracle with certified gap")
    q.add_argument("--instance", required=True)
    q.add_argument("--mode", choices=["agg", "sep"], default=None)
    q.add_argument("--max-iter", type=int, default=10_000)
    q.add_argument("--gap-tol", type=float, default=1e-5)
    q.add_argument("--out", default="-")
    q.set_defaults(fn=cmd_offline)

    q = sub.add_parser("adversary", help="generate a hard or random instance")
    common_family(q, family_required=False)
    q.add_argument("--kind", choices=["cnd", "case3", "random"], required=True)
    q.add_argument("--top", type=float, default=None, help="top marginal value for cnd")
    q.add_argument("--epsilon", type=float, default=0.07, help="cnd slope increment")
    q.add_argument("--split", type=float, default=0.5)
    q.add_argument("--n-items", type=int, default=50)
    q.add_argument("--separable", action="store_true")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", default="instance.json")
    q.set_defaults(fn=cmd_adversary)

    q = sub.add_parser("empirical-cr", help="offline/online ratios over a directory of instances")
    common_family(q)
    q.add_argument("--policy", choices=["ota", "fta"], default="ota")
    q.add_argument("--instances", required=True)
    q.add_argument("--out", default="-")
    q.set_defaults(fn=cmd_empirical_cr)

    q = sub.add_parser("simulate", help="EV charging comparison study")
    q.add_argument("--sessions", default=None)
    q.add_argument("--synthetic", type=int, default=None,
                   help="generate this many synthetic sessions instead of reading a CSV")
    q.add_argument("--slots", type=int, default=24)
    q.add_argument("--slot-length", type=float, default=1.0)
    q.add_argument("--day-split", action="store_true")
    q.add_argument("--theta", type=float, default=36.0)
    q.add_argument("--congestion", default="high")
    q.add_argument("--trials", type=int, default=20)
    q.add_argument("--policy-set", default="ota,fta")
    q.add_argument("--values", choices=["linear", "quadratic", "classes9"], default="linear")
    q.add_argument("--adaptive", action="store_true")
    q.add_argument("--days", type=int, default=None,
                   help="partition the trace into this many days, one per trial")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", default="simout")
    q.set_defaults(fn=cmd_simulate)

    q = sub.add_parser("verify", help="numerical verification suite for a family")
    common_family(q)
    q.add_argument("--theta-grid", default="2.718281828459045,10,36")
    q.add_argument("--capacity", type=float, default=1.0)
    q.add_argument("--perturb-alpha", type=float, default=0.0,
                   help="negative control: fractional ratio perturbation")
    q.add_argument("--out", default="-")
    q.set_defaults(fn=cmd_verify)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        return args.fn(args)
    except (ParseError, ValidationError, InvalidSetupError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
