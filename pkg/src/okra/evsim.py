"""EV-charging case study: time slots as knapsacks, sessions as items.

Charging sessions (arrival/departure slot, energy demand, per-slot rate cap)
become items whose rate limits are zero outside the availability window.
Per-trial value functions are sampled, the online packers commit schedules
on arrival, and an offline oracle with a certified gap supplies the
denominator for empirical profit ratios.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    AGGREGATE,
    Instance,
    Item,
    ParseError,
    Setup,
    dumps_canonical,
    linear_value,
    quadratic_value,
)
from .offline import offline_multi
from .ota import OnlinePolicy, fta_policy, ota_policy, run
from .thresholds import Variant, make_family

log = logging.getLogger(__name__)

COVERAGE_PRESETS = {"low": 0.55, "medium": 0.10, "high": 0.027}


@dataclass(frozen=True)
class Session:
    """One charging request, already bucketed into slots."""

    arrival_slot: int
    departure_slot: int
    demand: float
    rate_limit: float

    def window(self, slots: int) -> range:
        return range(self.arrival_slot, min(self.departure_slot, slots - 1) + 1)


@dataclass(frozen=True)
class SimConfig:
    slots: int = 24
    spread: float = 36.0
    lower_bound: float = 1.0
    congestion: str | float = "high"
    trials: int = 20
    seed: int = 0
    value_kind: str = "linear"  # linear | quadratic | classes9
    adaptive: bool = False
    day_count: int | None = None  # partition the trace into this many days,
    # one day per trial; None packs the whole trace every trial
    oracle_max_iter: int = 800
    oracle_gap_tol: float = 1e-3

    @property
    def coverage(self) -> float:
        if isinstance(self.congestion, str):
            return COVERAGE_PRESETS[self.congestion.lower()]
        return float(self.congestion)

    @property
    def upper_bound(self) -> float:
        return self.lower_bound * self.spread


# ---------------------------------------------------------------------------
# session ingestion
# ---------------------------------------------------------------------------


def load_sessions(path, slots: int = 24, slot_length: float = 1.0,
                  day_split: bool = False) -> list[Session]:
    """Read sessions from CSV with columns arrival, departure, demand, rate.

    Times may be slot indices or hours; they are divided by ``slot_length``
    and floored into slots (wrapped modulo the horizon when ``day_split`` is
    set, clipped otherwise).  Rows with nonpositive demand or rate, or with
    departure before arrival, are dropped and counted in a warning.
    """
    sessions = []
    dropped = 0
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            return []
        for n, row in enumerate(reader):
            where = f"row {n + 2}"
            try:
                arrival = float(row["arrival"])
                departure = float(row["departure"])
                demand = float(row["demand"])
                rate = float(row["rate"])
            except (KeyError, TypeError) as e:
                raise ParseError(f"{where}: missing column") from e
            except ValueError as e:
                raise ParseError(f"{where}: non-numeric value") from e
            if departure < arrival or demand <= 0 or rate <= 0:
                dropped += 1
                continue
            a = int(arrival // slot_length)
            d = int(departure // slot_length)
            if day_split:
                a %= slots
                d %= slots
                if d < a:
                    d = slots - 1  # window crosses midnight: truncate at horizon
            a = min(max(a, 0), slots - 1)
            d = min(max(d, a), slots - 1)
            sessions.append(Session(a, d, demand, rate))
    if dropped:
        log.warning("load_sessions: dropped %d invalid rows", dropped)
    return sessions


def save_sessions(sessions, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["arrival", "departure", "demand", "rate"])
        for s in sessions:
            w.writerow([s.arrival_slot, s.departure_slot, repr(s.demand), repr(s.rate_limit)])


def synthetic_sessions(n: int, seed: int = 0, slots: int = 24) -> list[Session]:
    """Deterministic synthetic trace: long-dwell fleet plus daytime commuters.

    Thirty percent of sessions are overnight fleet vehicles (large demand,
    low charging rate, windows spanning most of the horizon); the rest are
    commuters with moderate demand and a few-hour window.  Generation order
    is kept so consecutive runs of the list act as days.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        if rng.random() < 0.30:
            a = int(rng.integers(0, 8))
            stay = int(rng.integers(14, 24))
            demand = float(rng.uniform(30.0, 60.0))
            rate = float(rng.uniform(1.5, 3.0))
        else:
            a = int(rng.integers(0, 20))
            stay = int(rng.integers(4, 10))
            demand = float(rng.uniform(8.0, 25.0))
            rate = float(rng.uniform(4.0, 8.0))
        out.append(Session(a, min(a + stay, slots - 1), demand, rate))
    return out


# ---------------------------------------------------------------------------
# instance construction
# ---------------------------------------------------------------------------


def _sample_value(rng, kind: str, lo: float, hi: float, size: float):
    if kind == "linear":
        return linear_value(float(rng.uniform(lo, hi)))
    if kind == "quadratic":
        u = float(rng.uniform(lo, hi))
        floor = float(rng.uniform(lo, u))
        return quadratic_value(u, (u - floor) / (2.0 * size), size)
    if kind == "classes9":
        # nine demand classes with means 20, 40, ..., 180, clipped into range
        cls = int(rng.integers(0, 9))
        mean = 20.0 * (cls + 1)
        slope = float(np.clip(rng.normal(mean, mean / 4.0), lo, hi))
        return linear_value(slope)
    raise ValueError(f"unknown value kind {kind!r}")


def build_instance(sessions, config: SimConfig, trial_seed: int) -> Instance:
    """Slots become knapsacks; values are sampled per trial; capacity is set
    so total capacity covers the configured fraction of total demand."""
    if not sessions:
        raise ValueError("no sessions to build an instance from")
    total_demand = sum(s.demand for s in sessions)
    if total_demand <= 0:
        raise ValueError("sessions carry no demand")
    cap = config.coverage * total_demand / config.slots
    setup = Setup(
        capacities=(cap,) * config.slots,
        lower_bound=config.lower_bound,
        upper_bound=config.upper_bound,
    )
    rng = np.random.default_rng(trial_seed)
    items = []
    for s in sorted(sessions, key=lambda t: (t.arrival_slot, t.departure_slot, t.demand)):
        rl = np.zeros(config.slots)
        rl[s.arrival_slot : min(s.departure_slot, config.slots - 1) + 1] = s.rate_limit
        vf = _sample_value(rng, config.value_kind, config.lower_bound, config.upper_bound, s.demand)
        items.append(Item(size=s.demand, rate_limits=tuple(rl), value=vf))
    return Instance(setup=setup, items=tuple(items), value_mode=AGGREGATE)


# ---------------------------------------------------------------------------
# adaptive slot-by-slot adjustment
# ---------------------------------------------------------------------------


def adaptive_adjust(result, instance: Instance, sessions) -> "object":
    """Grant leftover slot capacity to present EVs with demand and rate slack.

    Forward pass over slots; within a slot, EVs are served in decreasing
    order of their current marginal value.  Delivered energy never
    decreases, so neither does any EV's value.
    """
    from .core import Assignment, KnapsackState, RunResult

    m = instance.setup.num_knapsacks
    caps = instance.setup.capacities
    sessions = sorted(sessions, key=lambda s: (s.arrival_slot, s.departure_slot, s.demand))
    y = np.array([a.fractions for a in result.assignments])
    totals = y.sum(axis=1)
    for slot in range(m):
        used = float(y[:, slot].sum())
        residual = caps[slot] - used
        if residual <= 1e-12 * max(1.0, caps[slot]):
            continue
        present = [
            i
            for i, s in enumerate(sessions)
            if s.arrival_slot <= slot <= s.departure_slot
            and totals[i] < instance.items[i].size - 1e-12
            and y[i, slot] < instance.items[i].rate_limits[slot] - 1e-12
        ]
        present.sort(key=lambda i: -instance.items[i].value.derivative(totals[i]))
        for i in present:
            if residual <= 0:
                break
            item = instance.items[i]
            grant = min(
                residual,
                item.rate_limits[slot] - y[i, slot],
                item.size - totals[i],
            )
            if grant > 0:
                y[i, slot] += grant
                totals[i] += grant
                residual -= grant
    assignments = tuple(Assignment(fractions=tuple(row)) for row in y)
    values = tuple(it.value_of(a.fractions) for it, a in zip(instance.items, assignments))
    state = KnapsackState(m)
    for a in assignments:
        state.apply(a)
    return RunResult(
        assignments=assignments,
        final_state=state,
        total_value=float(sum(values)),
        per_item_values=values,
    )


# ---------------------------------------------------------------------------
# comparison harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    config: SimConfig
    policies: tuple[str, ...]
    ratios: dict  # policy -> tuple of per-trial ratios (included trials only)
    trial_rows: tuple  # (trial, policy, online_value, offline_value, ratio, gap_rel)
    excluded_trials: tuple[int, ...]
    theoretical_ratio: float

    def summary(self) -> dict:
        out = {
            "slots": self.config.slots,
            "spread": self.config.spread,
            "congestion": str(self.config.congestion),
            "coverage": self.config.coverage,
            "trials": self.config.trials,
            "value_kind": self.config.value_kind,
            "seed": self.config.seed,
            "excluded_trials": len(self.excluded_trials),
            "theoretical_ratio": self.theoretical_ratio,
            "policies": {},
        }
        base = {}
        for pol in self.policies:
            rs = self.ratios[pol]
            if rs:
                stats = {
                    "mean_ratio": float(np.mean(rs)),
                    "max_ratio": float(np.max(rs)),
                    "trials": len(rs),
                }
            else:
                stats = {"mean_ratio": None, "max_ratio": None, "trials": 0}
            out["policies"][pol] = stats
            base[pol] = stats
        if "ota" in base and "fta" in base and base["fta"]["trials"]:
            fm, om = base["fta"]["max_ratio"], base["ota"]["max_ratio"]
            fa, oa = base["fta"]["mean_ratio"], base["ota"]["mean_ratio"]
            out["improvement_worst_case_pct"] = 100.0 * (fm - om) / fm if fm else None
            out["improvement_mean_pct"] = 100.0 * (fa - oa) / fa if fa else None
        return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("OKRA_THREADS", "1")))
    except ValueError:
        return 1


def _day_slices(sessions, day_count):
    n = len(sessions)
    bounds = [round(i * n / day_count) for i in range(day_count + 1)]
    return [sessions[a:b] for a, b in zip(bounds, bounds[1:]) if b > a]


def run_comparison(config: SimConfig, sessions, policy_names=("ota", "fta")) -> ComparisonReport:
    """Per trial: sample values, run each policy and the offline oracle, and
    collect profit ratios.  With ``day_count`` set, trial t packs day
    t mod day_count of the trace instead of the whole list.  Trials whose
    oracle gap misses the certification threshold are excluded from the
    statistics and reported by index.  Deterministic for a given config and
    session list."""
    if not sessions:
        raise ValueError("run_comparison needs sessions")
    root = np.random.SeedSequence(config.seed)
    trial_seeds = [int(s.generate_state(1)[0]) for s in root.spawn(config.trials)]
    days = _day_slices(sessions, config.day_count) if config.day_count else [list(sessions)]

    def sessions_for(t):
        return days[t % len(days)]

    setup_probe = build_instance(sessions_for(0), config, trial_seeds[0]).setup
    family_ratio = make_family(Variant.AGGREGATE, setup_probe).ratio
    for name in policy_names:
        if name not in ("ota", "fta"):
            raise ValueError(f"unknown policy {name!r}")
    reported = list(policy_names) + (
        [f"{p}_adaptive" for p in policy_names] if config.adaptive else []
    )
    ratios = {p: [] for p in reported}
    rows = []
    excluded = []
    warm = {"lam": None}

    def one_trial(t, warm_lam=None):
        day = sessions_for(t)
        inst = build_instance(day, config, trial_seeds[t])
        budget = config.oracle_max_iter if len(day) >= 400 else max(
            config.oracle_max_iter, 6000
        )
        off = offline_multi(
            inst,
            max_iter=budget,
            gap_tol=config.oracle_gap_tol,
            check_every=50,
            warm_start=warm_lam,
        )
        family = make_family(Variant.AGGREGATE, inst.setup)
        results = {}
        for name in policy_names:
            pol = ota_policy(family) if name == "ota" else fta_policy(inst.setup)
            res = run(pol, inst)
            results[name] = res
            if config.adaptive:
                results[f"{name}_adaptive"] = adaptive_adjust(res, inst, day)
        return t, inst, off, results

    outs = []
    nthreads = _threads()
    if nthreads > 1:
        # oracle warm starts are disabled across threads to keep determinism
        with ThreadPoolExecutor(max_workers=nthreads) as ex:
            futs = [ex.submit(one_trial, t) for t in range(config.trials)]
            outs = [f.result() for f in futs]
        outs.sort(key=lambda r: r[0])
    else:
        for t in range(config.trials):
            out = one_trial(t, warm["lam"] if config.day_count is None else None)
            warm["lam"] = np.asarray(out[2].knapsack_prices)
            outs.append(out)

    for t, inst, offline, results in outs:
        gap_rel = offline.gap / max(offline.value, 1e-12)
        ok = offline.converged
        if not ok:
            excluded.append(t)
        for name in reported:
            res = results[name]
            ratio = offline.value / res.total_value if res.total_value > 0 else math.inf
            rows.append((t, name, res.total_value, offline.value, ratio, gap_rel))
            if ok:
                ratios[name].append(ratio)
    return ComparisonReport(
        config=config,
        policies=tuple(reported),
        ratios={p: tuple(v) for p, v in ratios.items()},
        trial_rows=tuple(rows),
        excluded_trials=tuple(excluded),
        theoretical_ratio=family_ratio,
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def cdf_points(values) -> list[tuple[float, float]]:
    """Step-plot points of the empirical CDF: starts at 0, ends at 1."""
    vs = sorted(values)
    if not vs:
        return []
    pts = [(vs[0], 0.0)]
    n = len(vs)
    for i, v in enumerate(vs, start=1):
        pts.append((v, i / n))
    return pts


def emit_cdf(report: ComparisonReport, csv_path, summary_path=None):
    """Write (policy, ratio, cumulative_fraction) rows plus a summary JSON."""
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["policy", "ratio", "cumulative_fraction"])
        for pol in report.policies:
            for ratio, frac in cdf_points(report.ratios[pol]):
                w.writerow([pol, format(ratio, ".12g"), format(frac, ".12g")])
    if summary_path is not None:
        with open(summary_path, "w") as f:
            f.write(dumps_canonical(report.summary()))
            f.write("\n")


def emit_trials(report: ComparisonReport, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trial", "policy", "online_value", "offline_value", "ratio", "oracle_gap_rel"])
        for t, pol, ov, fv, ratio, gap in report.trial_rows:
            w.writerow([t, pol, format(ov, ".12g"), format(fv, ".12g"),
                        format(ratio, ".12g"), format(gap, ".12g")])
