"""Hard-instance generators and an empirical competitive-ratio harness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AGGREGATE,
    SEPARABLE,
    Instance,
    Item,
    Setup,
    general_concave_value,
    linear_value,
    quadratic_value,
    validate_instance,
)
from .offline import offline_multi, offline_single
from .ota import OnlinePolicy, ota_policy, run
from .thresholds import ThresholdFamily, Variant, make_family


def gen_rising(setup: Setup, top_value: float, increment: float) -> Instance:
    """Full-size linear items with marginal values climbing from the floor.

    Slopes go L, L+inc, ... up to ``top_value`` (last step possibly smaller);
    every item has size equal to the capacity.  This is the worst-case
    stream for the single-knapsack family: its offline optimum is exactly
    top_value * capacity.
    """
    setup.require_valid()
    if setup.num_knapsacks != 1:
        raise ValueError("rising streams are single-knapsack instances")
    lo = setup.lower_bound
    if not (lo <= top_value <= setup.upper_bound):
        raise ValueError("top value outside the marginal-value bounds")
    if increment <= 0:
        raise ValueError("increment must be positive")
    c = setup.capacities[0]
    slopes = [lo]
    while slopes[-1] < top_value - 1e-15 * max(1.0, top_value):
        slopes.append(min(slopes[-1] + increment, top_value))
    items = tuple(
        Item(size=c, rate_limits=(c,), value=linear_value(v)) for v in slopes
    )
    return Instance(setup=setup, items=items, value_mode=AGGREGATE)


def gen_split_load(setup: Setup, split: float = 0.5,
                   family: ThresholdFamily | None = None,
                   steps: int = 60) -> Instance:
    """Instance steering the packer so an index prefix of knapsacks finishes
    under its price knee while the rest fill past theirs.

    The prefix knapsacks (fraction ``split`` of them, at least one, at most
    all but one) each receive a single floor-valued item half the knee in
    size; the remaining knapsacks get rate-restricted rising streams that
    drive them to capacity.  Raises if the intended split fails to
    materialize under the packer it was built for.
    """
    setup.require_valid()
    m = setup.num_knapsacks
    if m < 2:
        raise ValueError("split-load instances need at least two knapsacks")
    if family is None:
        family = make_family(Variant.AGGREGATE, setup)
    n_low = min(max(int(round(split * m)), 1), m - 1)
    lo, hi = setup.lower_bound, setup.upper_bound
    items = []
    for j in range(n_low):
        rl = [0.0] * m
        size = family.knees[j] / 2.0
        rl[j] = size
        items.append(Item(size=size, rate_limits=tuple(rl), value=linear_value(lo)))
    inc = (hi - lo) / steps
    for j in range(n_low, m):
        c = setup.capacities[j]
        v = lo
        while True:
            rl = [0.0] * m
            rl[j] = c
            items.append(Item(size=c, rate_limits=tuple(rl), value=linear_value(v)))
            if v >= hi:
                break
            v = min(v + inc, hi)
    inst = Instance(setup=setup, items=tuple(items), value_mode=AGGREGATE)
    result = run(ota_policy(family), inst)
    w = result.final_state.utilizations
    for j in range(n_low):
        if not w[j] < family.knees[j]:
            raise RuntimeError(
                f"split not realized: knapsack {j} at {w[j]} >= knee {family.knees[j]}"
            )
    for j in range(n_low, m):
        if not w[j] >= family.knees[j]:
            raise RuntimeError(
                f"split not realized: knapsack {j} at {w[j]} < knee {family.knees[j]}"
            )
    return inst


def gen_random(setup: Setup, seed: int, n_items: int,
               size_dist: tuple = ("uniform", 0.05, 0.6),
               value_dist: str = "mixed",
               mode: str = AGGREGATE,
               sparsity: float = 0.3) -> Instance:
    """Reproducible random instance with slopes clipped into [L, U].

    Sizes are drawn as fractions of the mean capacity per ``size_dist``
    ("uniform", lo, hi); rate limits are random with a ``sparsity`` chance
    of zero per knapsack (items may end up unassignable, which is legal).
    ``value_dist`` is "linear", "quadratic", "general", or "mixed".
    """
    setup.require_valid()
    rng = np.random.default_rng(seed)
    m = setup.num_knapsacks
    lo, hi = setup.lower_bound, setup.upper_bound
    cbar = float(np.mean(setup.capacities))
    kind_name, s_lo, s_hi = size_dist
    if kind_name != "uniform":
        raise ValueError("only uniform size distributions are supported")
    items = []
    for _ in range(n_items):
        size = float(rng.uniform(s_lo, s_hi) * cbar)
        rates = rng.uniform(0.1, 1.0, size=m) * size
        rates[rng.random(m) < sparsity] = 0.0
        kind = value_dist
        if kind == "mixed":
            kind = rng.choice(["linear", "quadratic", "general"], p=[0.6, 0.3, 0.1])
        if mode == SEPARABLE:
            vfs = tuple(_random_value(rng, kind, lo, hi, max(min(size, r), 1e-9))
                        for r in np.maximum(rates, 1e-9))
            items.append(Item(size=size, rate_limits=tuple(rates), value=vfs))
        else:
            items.append(Item(size=size, rate_limits=tuple(rates),
                              value=_random_value(rng, kind, lo, hi, size)))
    inst = Instance(setup=setup, items=tuple(items), value_mode=mode)
    bad = validate_instance(inst)
    if bad:
        raise RuntimeError("generator produced an invalid instance: " + "; ".join(bad))
    return inst


def _random_value(rng, kind, lo, hi, span):
    if kind == "linear":
        return linear_value(float(rng.uniform(lo, hi)))
    if kind == "quadratic":
        top = float(rng.uniform(lo, hi))
        floor = float(rng.uniform(lo, top))
        return quadratic_value(top, (top - floor) / (2.0 * span), span)
    # concave piecewise-linear derivative, non-increasing within [lo, hi]
    knots = np.sort(rng.uniform(lo, hi, size=5))[::-1]
    return general_concave_value(knots, span)


@dataclass(frozen=True)
class CrReport:
    """Empirical competitive ratios of one policy over an instance batch."""

    ratios: tuple[float, ...]
    max_ratio: float
    argmax_instance: int
    unbounded: tuple[int, ...]  # instances where online value was zero
    failed: tuple[int, ...]     # instances whose oracle did not certify
    epsilon: float | None = None


def empirical_cr(policy, instances, oracle_kwargs=None, epsilon=None) -> CrReport:
    """Offline-to-online value ratios, instance by instance.

    ``policy`` is an OnlinePolicy or any callable mapping an instance to a
    result with a ``total_value``.  Zero against zero counts as ratio 1; a
    zero online value against positive offline is tagged unbounded and kept
    out of the max.  Oracle non-convergence marks the instance failed.
    """
    oracle_kwargs = dict(oracle_kwargs or {})
    ratios = []
    unbounded = []
    failed = []
    for idx, inst in enumerate(instances):
        if callable(policy):
            res = policy(inst)
        else:
            res = run(policy, inst)
        if inst.setup.num_knapsacks == 1:
            off = offline_single(inst)
        else:
            off = offline_multi(inst, **oracle_kwargs)
        if not off.converged:
            failed.append(idx)
            ratios.append(math.nan)
            continue
        if res.total_value > 0:
            ratios.append(off.value / res.total_value)
        elif off.value <= 0:
            ratios.append(1.0)
        else:
            unbounded.append(idx)
            ratios.append(math.inf)
    finite = [(r, i) for i, r in enumerate(ratios) if math.isfinite(r)]
    if finite:
        max_ratio, argmax = max(finite)
    else:
        max_ratio, argmax = math.nan, -1
    return CrReport(
        ratios=tuple(ratios),
        max_ratio=max_ratio,
        argmax_instance=argmax,
        unbounded=tuple(unbounded),
        failed=tuple(failed),
        epsilon=epsilon,
    )


def rising_sweep(setup: Setup, family: ThresholdFamily, points: int = 50,
                 epsilon: float | None = None) -> CrReport:
    """Empirical ratio of the threshold packer over the rising worst-case
    family, sweeping the top value across [L, U]."""
    lo, hi = setup.lower_bound, setup.upper_bound
    if epsilon is None:
        epsilon = (hi - lo) / 500.0
    tops = np.linspace(lo, hi, points)
    instances = [gen_rising(setup, float(p), epsilon) for p in tops]
    return empirical_cr(ota_policy(family), instances, epsilon=epsilon)
