"""Online packing policies: threshold-priced water filling and a fixed-price baseline.

Each arriving item is packed by maximizing its value minus the integral of
the knapsacks' threshold prices over the added utilization, subject to the
item's demand and rate limits.  Ties are broken toward packing more (an
indifferent marginal unit is taken), and flat-price capacity is consumed in
knapsack-index order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AGGREGATE,
    SEPARABLE,
    Assignment,
    Instance,
    Item,
    KnapsackState,
    RunResult,
    Setup,
)
from .thresholds import (
    ThresholdFamily,
    Variant,
    fill_level,
    fill_levels,
    lambert_w,
    lambert_w_log,
    price_integral,
    threshold_price,
    _curve,
)

OTA = "ota"
FTA = "fta"
OTA_INTEGRAL = "ota-integral"

_EDGE = 1e-12  # relative slack when clipping against capacity edges


@dataclass(frozen=True)
class OnlinePolicy:
    kind: str
    setup: Setup
    mode: str = AGGREGATE
    family: ThresholdFamily | None = None
    fixed_price: float | None = None


def ota_policy(family: ThresholdFamily, mode: str = AGGREGATE) -> OnlinePolicy:
    return OnlinePolicy(kind=OTA, setup=family.setup, mode=mode, family=family)


def ota_integral_policy(family: ThresholdFamily, mode: str = AGGREGATE) -> OnlinePolicy:
    return OnlinePolicy(kind=OTA_INTEGRAL, setup=family.setup, mode=mode, family=family)


def fta_policy(setup: Setup, fixed_price: float | None = None, mode: str = AGGREGATE) -> OnlinePolicy:
    """Fixed-price baseline; defaults to the geometric mean of the bounds."""
    if fixed_price is None:
        fixed_price = math.sqrt(setup.upper_bound * setup.lower_bound)
    return OnlinePolicy(kind=FTA, setup=setup, mode=mode, fixed_price=fixed_price)


# ---------------------------------------------------------------------------
# aggregate-mode water filling
# ---------------------------------------------------------------------------


def _room(family: ThresholdFamily, state: KnapsackState, item: Item) -> np.ndarray:
    caps = np.asarray(family.setup.capacities)
    w = state.utilizations
    return np.minimum(np.asarray(item.rate_limits), np.maximum(caps - w, 0.0))


def _supply(family: ThresholdFamily, state: KnapsackState, room: np.ndarray, level: float) -> np.ndarray:
    """Per-knapsack amount whose marginal price is <= level, capped by room."""
    lv = fill_levels(family, level)
    return np.minimum(np.maximum(lv - state.utilizations, 0.0), room)


def water_fill_aggregate(family: ThresholdFamily, state: KnapsackState, item: Item) -> Assignment:
    """Exact optimizer of value minus priced cost for an aggregate-value item.

    The total packed amount is found by bisection on the common marginal
    price level: supply (capacity priced below the level) rises with it,
    demand (amount the item wants at that price) falls, and the crossing
    pins the total.  The split is then read off the supply curve at the
    total's own price level, with entry-priced ties consumed in
    knapsack-index order.
    """
    setup = family.setup
    vf = item.value
    room = _room(family, state, item)
    if float(room.sum()) <= 0.0:
        return Assignment(fractions=(0.0,) * setup.num_knapsacks)
    floor = 0.0 if family.variant is Variant.RELAXED else setup.lower_bound
    ceil = setup.upper_bound

    def supply_total(level):
        return float(_supply(family, state, room, level).sum())

    def demand(level):
        return vf.demand_at(level, item.size)

    s_floor = supply_total(floor)
    d_floor = demand(floor)
    level_hint = None
    if d_floor <= min(item.size, s_floor):
        target = d_floor  # everything the item wants clears at the entry price
    elif vf.kind == "linear":
        # the demand curve is a step at the slope: the crossing is explicit
        level_hint = min(max(vf.slope, floor), ceil)
        target = min(item.size, supply_total(level_hint))
    elif demand(ceil) >= min(item.size, supply_total(ceil)):
        level_hint = ceil
        target = min(item.size, supply_total(ceil))
    else:
        lo, hi = floor, ceil
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if demand(mid) >= min(item.size, supply_total(mid)):
                lo = mid
            else:
                hi = mid
        level_hint = lo
        target = min(item.size, max(supply_total(lo), 0.0))
    return _distribute(family, state, room, target, floor, ceil, s_floor, level_hint)


def _distribute(family, state, room, target, floor, ceil, s_floor, level_hint=None) -> Assignment:
    """Split ``target`` across knapsacks at its own marginal price level."""
    if target <= 0.0:
        return Assignment(fractions=(0.0,) * len(room))
    if len(room) == 1:
        return Assignment(fractions=(min(target, float(room[0])),))
    if s_floor >= target:
        # entry-priced capacity suffices: consume it in knapsack-index order
        lv = _supply(family, state, room, floor)
        ys = np.zeros(len(room))
        left = target
        for m in range(len(room)):
            if left <= 0.0:
                break
            take = min(lv[m], left)
            ys[m] = take
            left -= take
        return Assignment(fractions=tuple(ys))
    if level_hint is not None:
        # when the total is supply-bound, its own level already splits it
        per = _supply(family, state, room, level_hint)
        total = float(per.sum())
        if target <= total <= target * (1.0 + 1e-12) + 1e-15:
            return _trim(per, target, room)
    lo, hi = floor, ceil
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if float(_supply(family, state, room, mid).sum()) >= target:
            hi = mid
        else:
            lo = mid
    per = _supply(family, state, room, hi)
    return _trim(per, min(target, float(per.sum())), room)


def _trim(per: np.ndarray, target: float, room: np.ndarray) -> Assignment:
    """Adjust a near-optimal split to sum exactly to target (reverse order)."""
    total = float(per.sum())
    ys = per.copy()
    if total > target:
        excess = total - target
        for m in range(len(ys) - 1, -1, -1):
            cut = min(ys[m], excess)
            ys[m] -= cut
            excess -= cut
            if excess <= 0:
                break
    elif total < target:
        short = target - total
        for m in range(len(ys)):
            add = min(room[m] - ys[m], short)
            ys[m] += add
            short -= add
            if short <= 0:
                break
    return Assignment(fractions=tuple(ys))


# ---------------------------------------------------------------------------
# separable-mode solver
# ---------------------------------------------------------------------------


def _knapsack_take(family, m, w, vf, mu, cap):
    """Largest y in [0, cap] with marginal value >= mu + price(w + y).

    Closed forms for linear and quadratic values (the quadratic case via
    Lambert W against the exponential price segment); bisection otherwise.
    """
    if cap <= 0.0:
        return 0.0
    p0 = threshold_price(family, m, w)
    if vf.derivative(0.0) < mu + p0:
        return 0.0
    cm = family.setup.capacities[m]
    knee, k, coef, shift, flat = _curve(family, m)
    if vf.kind == "linear":
        lvl = vf.slope - mu
        return min(max(fill_level(family, m, lvl) - w, 0.0), cap)
    if vf.kind == "quadratic" and vf.b > 0.0 and family.variant is not Variant.RELAXED:
        a, b = vf.a, vf.b
        y = 0.0
        if flat is not None and w < knee:
            # flat segment first: marginal value meets mu + flat price
            y_flat = (a - mu - flat) / (2.0 * b)
            if w + y_flat <= knee:
                return min(max(y_flat, 0.0), cap)
            y = knee - w
            if y >= cap:
                return cap
        # rising segment: a - 2 b y = mu + coef*exp(k*(w+y)) + shift
        if 2.0 * b * cap <= 1e-12 * max(1.0, a):
            lvl = a - mu
            return min(max(fill_level(family, m, lvl) - w, 0.0), cap)
        A = a - mu - shift
        xi = math.log(k * coef / (2.0 * b)) + k * w + k * A / (2.0 * b)
        u = lambert_w_log(xi) if xi > 30.0 else lambert_w(math.exp(xi))
        y_star = (A - 2.0 * b * u / k) / (2.0 * b)
        return min(max(y_star, y), cap)
    # generic monotone bisection on the residual g'(y) - mu - price(w + y)
    lo_y, hi_y = 0.0, cap
    if vf.derivative(cap) >= mu + threshold_price(family, m, min(w + cap, cm)):
        return cap
    for _ in range(100):
        mid = 0.5 * (lo_y + hi_y)
        if mid == lo_y or mid == hi_y:
            break
        if vf.derivative(mid) >= mu + threshold_price(family, m, w + mid):
            lo_y = mid
        else:
            hi_y = mid
    return lo_y


def solve_separable(family: ThresholdFamily, state: KnapsackState, item: Item) -> Assignment:
    """Optimizer for an item with one value function per knapsack.

    A bisection on the demand multiplier decouples the knapsacks; each inner
    problem equates the knapsack's marginal value with the multiplier plus
    its threshold price.
    """
    setup = family.setup
    room = _room(family, state, item)
    w = state.utilizations
    vfs = item.value

    def takes(mu):
        return np.array(
            [_knapsack_take(family, m, w[m], vfs[m], mu, room[m]) for m in range(len(room))]
        )

    y0 = takes(0.0)
    if y0.sum() <= item.size * (1.0 + _EDGE):
        return Assignment(fractions=tuple(y0))
    lo_mu, hi_mu = 0.0, setup.upper_bound
    for _ in range(200):
        mid = 0.5 * (lo_mu + hi_mu)
        if mid == lo_mu or mid == hi_mu:
            break
        if takes(mid).sum() > item.size:
            lo_mu = mid
        else:
            hi_mu = mid
    per = takes(hi_mu)
    upper = takes(lo_mu)
    ys = per.copy()
    short = item.size - float(ys.sum())
    if short > 0:
        for m in range(len(ys)):  # distribute tie capacity in index order
            add = min(upper[m] - ys[m], short, room[m] - ys[m])
            if add > 0:
                ys[m] += add
                short -= add
            if short <= 0:
                break
    return _trim(ys, min(item.size, float(ys.sum())), room)


# ---------------------------------------------------------------------------
# policy steps and runs
# ---------------------------------------------------------------------------


def fta_step(fixed_price: float, state: KnapsackState, item: Item, capacities) -> Assignment:
    """Admit when the opening marginal value clears the fixed price, then pack
    greedily (earliest knapsack first) up to demand, rates, and capacity."""
    if item.is_separable:
        opening = max(vf.derivative(0.0) for vf in item.value)
    else:
        opening = item.value.derivative(0.0)
    m_count = len(capacities)
    if opening < fixed_price:
        return Assignment(fractions=(0.0,) * m_count)
    ys = [0.0] * m_count
    left = item.size
    for m in range(m_count):
        if left <= 0:
            break
        roomy = min(item.rate_limits[m], capacities[m] - state.utilizations[m])
        take = min(max(roomy, 0.0), left)
        ys[m] = take
        left -= take
    return Assignment(fractions=tuple(ys))


def integral_step(family: ThresholdFamily, state: KnapsackState, item: Item) -> Assignment:
    """Whole-item variant: place the item in the single best knapsack or reject.

    The packing cost is approximated by price(w + y) * y, matching the
    discrete choice model where an item cannot be split.  Ties go to the
    lowest knapsack index; a zero-pseudo-utility placement is accepted.
    """
    setup = family.setup
    m_count = setup.num_knapsacks
    best_m, best_u = -1, 0.0
    for m in range(m_count):
        y = min(item.rate_limits[m], item.size)
        if y <= 0.0:
            continue
        w_new = state.utilizations[m] + y
        if w_new > setup.capacities[m] * (1.0 + _EDGE):
            continue
        if item.is_separable:
            val = item.value[m].value(y)
        else:
            val = item.value.value(y)
        pseudo = val - threshold_price(family, m, min(w_new, setup.capacities[m])) * y
        if pseudo >= 0.0 and (best_m < 0 or pseudo > best_u):
            best_m, best_u = m, pseudo
    ys = [0.0] * m_count
    if best_m >= 0:
        ys[best_m] = min(item.rate_limits[best_m], item.size)
    return Assignment(fractions=tuple(ys))


def step(policy: OnlinePolicy, state: KnapsackState, item: Item) -> Assignment:
    if policy.kind == FTA:
        return fta_step(policy.fixed_price, state, item, policy.setup.capacities)
    if policy.kind == OTA_INTEGRAL:
        return integral_step(policy.family, state, item)
    if policy.mode == SEPARABLE:
        return solve_separable(policy.family, state, item)
    return water_fill_aggregate(policy.family, state, item)


def run(policy: OnlinePolicy, instance: Instance) -> RunResult:
    """Process the items in order, committing each assignment irrevocably."""
    if policy.kind == OTA_INTEGRAL:
        return run_integral(policy, instance)
    setup = instance.setup
    if policy.kind != FTA and policy.mode != instance.value_mode:
        raise ValueError(f"policy mode {policy.mode!r} != instance mode {instance.value_mode!r}")
    state = KnapsackState(setup.num_knapsacks)
    assignments = []
    values = []
    caps = setup.capacities
    for item in instance.items:
        if policy.kind == FTA:
            a = fta_step(policy.fixed_price, state, item, caps)
        elif instance.value_mode == SEPARABLE:
            a = solve_separable(policy.family, state, item)
        else:
            a = water_fill_aggregate(policy.family, state, item)
        assignments.append(a)
        values.append(item.value_of(a.fractions))
        state.apply(a)
    return RunResult(
        assignments=tuple(assignments),
        final_state=state,
        total_value=float(sum(values)),
        per_item_values=tuple(values),
    )


def run_integral(policy: OnlinePolicy, instance: Instance) -> RunResult:
    state = KnapsackState(instance.setup.num_knapsacks)
    assignments = []
    values = []
    for item in instance.items:
        a = integral_step(policy.family, state, item)
        assignments.append(a)
        values.append(item.value_of(a.fractions))
        state.apply(a)
    return RunResult(
        assignments=tuple(assignments),
        final_state=state,
        total_value=float(sum(values)),
        per_item_values=tuple(values),
    )


def pseudo_utility(family: ThresholdFamily, state: KnapsackState, item: Item,
                   assignment: Assignment) -> float:
    """Item value minus the priced cost of the added utilization."""
    cost = 0.0
    for m, y in enumerate(assignment.fractions):
        if y > 0.0:
            w = state.utilizations[m]
            cost += price_integral(family, m, w, w + y)
    return item.value_of(assignment.fractions) - cost


def replay_pseudo_utilities(family: ThresholdFamily, instance: Instance,
                            result: RunResult) -> list[float]:
    """Recompute each item's achieved pseudo-utility along a finished run."""
    state = KnapsackState(instance.setup.num_knapsacks)
    out = []
    for item, a in zip(instance.items, result.assignments):
        out.append(pseudo_utility(family, state, item, a))
        state.apply(a)
    return out
