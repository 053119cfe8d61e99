"""Offline near-optimal oracles built on capacity-price duality.

The single-knapsack oracle is exact: one price clears the capacity market,
with proportional rationing among items indifferent at that price.  The
multi-knapsack oracle runs projected subgradient descent on the knapsack
prices with exact per-item inner solves, recovers a feasible primal by
averaging, repair, and per-item polish, and certifies quality by the
primal-dual gap it reports.  A lattice dynamic program provides an
independent brute-force check for tiny instances.
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
    ValueFunction,
)

GAP_TOL = 1e-5  # default certified relative gap
FEAS_TOL = 1e-7


@dataclass(frozen=True)
class OfflineSolution:
    assignments: tuple[Assignment, ...]
    value: float
    knapsack_prices: tuple[float, ...]
    item_prices: tuple[float, ...]
    gap: float
    converged: bool
    iterations: int

    @property
    def dual_value(self) -> float:
        return self.value + self.gap


def conjugate(value_fn: ValueFunction, price: float, cap: float) -> tuple[float, float]:
    """Best pseudo-profit against a linear price and its maximizer on [0, cap]."""
    if price < 0:
        raise ValueError("price must be nonnegative")
    x = value_fn.demand_at(price, cap)
    return value_fn.value(x) - price * x, x


# ---------------------------------------------------------------------------
# exact single-knapsack oracle
# ---------------------------------------------------------------------------


def offline_single(instance: Instance) -> OfflineSolution:
    """Exact optimum for one knapsack by bisection on the capacity price.

    Total wanted allocation falls as the price rises; the clearing price
    either leaves slack at zero or fills the knapsack exactly, with items
    marginal at that price rationed proportionally.
    """
    setup = instance.setup
    if setup.num_knapsacks != 1:
        raise ValueError("offline_single needs exactly one knapsack")
    cap = setup.capacities[0]
    items = instance.items

    def vf_of(item):
        return item.value[0] if item.is_separable else item.value

    def caps_of(item):
        return min(item.size, item.rate_limits[0])

    all_linear = all(
        (not it.is_separable and it.value.kind == "linear")
        or (it.is_separable and it.value[0].kind == "linear")
        for it in items
    )
    if all_linear and items:
        slopes = np.array([vf_of(it).slope for it in items])
        amounts = np.array([caps_of(it) for it in items])
        order = np.argsort(slopes, kind="stable")
        prefix = np.concatenate([[0.0], np.cumsum(amounts[order])])

        def wanted(price, strict):
            # total amount carried by items with slope >= price (> if strict)
            side = "right" if strict else "left"
            k = np.searchsorted(slopes[order], price, side=side)
            return float(prefix[-1] - prefix[k])

    else:

        def wanted(price, strict):
            return sum(vf_of(it).demand_at(price, caps_of(it), strict) for it in items)

    if wanted(0.0, False) <= cap:
        xs = [vf_of(it).demand_at(0.0, caps_of(it)) for it in items]
        price = 0.0
    else:
        lo, hi = 0.0, setup.upper_bound
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if wanted(mid, False) > cap:
                lo = mid
            else:
                hi = mid
        price = hi
        hi_take = [vf_of(it).demand_at(price, caps_of(it), False) for it in items]
        lo_take = [vf_of(it).demand_at(price, caps_of(it), True) for it in items]
        t_hi, t_lo = sum(hi_take), sum(lo_take)
        if t_hi <= cap + 1e-15 * max(1.0, cap):
            room = cap - t_hi
            marginal = max(wanted(lo, False) - t_hi, 0.0)
            if room > 0 and marginal > 0:
                # price sits on a jump: hand out the leftover proportionally
                # to the items indifferent at the clearing price
                extra = [
                    vf_of(it).demand_at(lo, caps_of(it), False) - x
                    for it, x in zip(items, hi_take)
                ]
                scale = min(room / marginal, 1.0)
                xs = [x + max(e, 0.0) * scale for x, e in zip(hi_take, extra)]
            else:
                xs = hi_take
        else:
            # continuous crossing: shrink proportionally between the strict
            # and inclusive takes
            span = t_hi - t_lo
            frac = (cap - t_lo) / span if span > 0 else 0.0
            xs = [l + (h - l) * frac for h, l in zip(hi_take, lo_take)]
    total = sum(xs)
    if total > cap:
        xs = [x * (cap / total) for x in xs]
    value = sum(vf_of(it).value(x) for it, x in zip(items, xs))
    dual = sum(conjugate(vf_of(it), price, caps_of(it))[0] for it in items) + price * cap
    assignments = tuple(Assignment(fractions=(x,)) for x in xs)
    gap = dual - value
    return OfflineSolution(
        assignments=assignments,
        value=value,
        knapsack_prices=(price,),
        item_prices=tuple(vf_of(it).derivative(x) for it, x in zip(items, xs)),
        gap=gap,
        converged=abs(gap) <= GAP_TOL * max(value, 1e-12),
        iterations=0,
    )


# ---------------------------------------------------------------------------
# multi-knapsack oracle: projected subgradient on knapsack prices
# ---------------------------------------------------------------------------


class _Prepared:
    """Instance unpacked into arrays, split by value kind for vector solves."""

    def __init__(self, instance: Instance):
        self.instance = instance
        self.mode = instance.value_mode
        self.n = len(instance.items)
        self.m = instance.setup.num_knapsacks
        self.caps = np.asarray(instance.setup.capacities)
        self.sizes = np.array([it.size for it in instance.items])
        self.rates = np.array([it.rate_limits for it in instance.items]) if self.n else np.zeros((0, self.m))
        if self.mode == AGGREGATE:
            kinds = [it.value.kind for it in instance.items]
            self.lin = [i for i, k in enumerate(kinds)
                        if k == "linear" or (k == "quadratic" and instance.items[i].value.b <= 0)]
            self.quad = [i for i, k in enumerate(kinds)
                         if k == "quadratic" and instance.items[i].value.b > 0]
            self.gen = [i for i, k in enumerate(kinds) if k == "general_concave"]
            self.lin_v = np.array(
                [instance.items[i].value.slope if kinds[i] == "linear" else instance.items[i].value.a
                 for i in self.lin]
            )
            self.quad_a = np.array([instance.items[i].value.a for i in self.quad])
            self.quad_b = np.array([instance.items[i].value.b for i in self.quad])
        else:
            # per-cell closed-form parameters for the separable inner solves
            n, m = self.n, self.m
            self.cell_caps = np.minimum(self.rates, self.sizes[:, None])
            self.cell_lin = np.zeros((n, m), dtype=bool)
            self.cell_quad = np.zeros((n, m), dtype=bool)
            self.cell_gen = []
            self.cell_v = np.zeros((n, m))
            self.cell_a = np.zeros((n, m))
            self.cell_b = np.ones((n, m))
            for i, it in enumerate(instance.items):
                for j, vf in enumerate(it.value):
                    if vf.kind == "linear" or (vf.kind == "quadratic" and vf.b <= 0):
                        self.cell_lin[i, j] = True
                        self.cell_v[i, j] = vf.slope if vf.kind == "linear" else vf.a
                    elif vf.kind == "quadratic":
                        self.cell_quad[i, j] = True
                        self.cell_a[i, j] = vf.a
                        self.cell_b[i, j] = vf.b
                    else:
                        self.cell_gen.append((i, j, vf))

    def inner_aggregate(self, lam: np.ndarray) -> np.ndarray:
        """Per-item maximizers of value minus priced allocation, given prices."""
        y = np.zeros((self.n, self.m))
        order = np.argsort(lam, kind="stable")
        lam_s = lam[order]
        if self.lin:
            rows = np.asarray(self.lin)
            Ys = self.rates[rows][:, order]
            elig = self.lin_v[:, None] >= lam_s[None, :]
            caps = Ys * elig
            cum = np.cumsum(caps, axis=1)
            D = self.sizes[rows][:, None]
            ys = np.clip(D - (cum - caps), 0.0, caps)
            buf = np.zeros_like(ys)
            buf[:, order] = ys
            y[rows] = buf
        if self.quad:
            rows = np.asarray(self.quad)
            Ys = self.rates[rows][:, order]
            D = self.sizes[rows]
            x = np.zeros(len(rows))
            ys = np.zeros_like(Ys)
            for j in range(self.m):
                want = np.clip((self.quad_a - lam_s[j]) / (2.0 * self.quad_b), 0.0, D)
                add = np.clip(want - x, 0.0, Ys[:, j])
                ys[:, j] = add
                x += add
            buf = np.zeros_like(ys)
            buf[:, order] = ys
            y[rows] = buf
        for i in self.gen:
            vf = self.instance.items[i].value
            x = 0.0
            for j in range(self.m):
                want = vf.demand_at(lam_s[j], self.sizes[i])
                add = min(max(want - x, 0.0), self.rates[i, order[j]])
                y[i, order[j]] = add
                x += add
        return y

    def inner_separable(self, lam: np.ndarray) -> np.ndarray:
        """Demand-coupled per-item solves at prices lam, by vector bisection."""

        def take(mu):
            price = lam[None, :] + mu[:, None]
            out = np.where(self.cell_lin & (self.cell_v >= price), self.cell_caps, 0.0)
            quad = np.clip((self.cell_a - price) / (2.0 * self.cell_b), 0.0, self.cell_caps)
            out = np.where(self.cell_quad, quad, out)
            for i, j, vf in self.cell_gen:
                out[i, j] = vf.demand_at(price[i, j], self.cell_caps[i, j])
            return out

        mu = np.zeros(self.n)
        y0 = take(mu)
        over = y0.sum(axis=1) > self.sizes * (1.0 + 1e-12)
        if not over.any():
            return y0
        lo = np.zeros(self.n)
        hi = np.full(self.n, self.instance.setup.upper_bound)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            tot = take(mid).sum(axis=1)
            too_much = tot > self.sizes
            lo = np.where(too_much, mid, lo)
            hi = np.where(too_much, hi, mid)
        y = take(hi)
        upper = take(lo)
        for i in np.nonzero(over)[0]:
            short = self.sizes[i] - y[i].sum()
            for j in range(self.m):
                if short <= 0:
                    break
                add = min(upper[i, j] - y[i, j], short)
                if add > 0:
                    y[i, j] += add
                    short -= add
        return y

    def inner(self, lam: np.ndarray) -> np.ndarray:
        if self.mode == AGGREGATE:
            return self.inner_aggregate(lam)
        return self.inner_separable(lam)

    def total_value(self, y: np.ndarray) -> float:
        items = self.instance.items
        if self.mode == AGGREGATE:
            return float(sum(it.value.value(float(y[i].sum())) for i, it in enumerate(items)))
        return float(
            sum(it.value[j].value(float(y[i, j])) for i, it in enumerate(items) for j in range(self.m))
        )

    def dual_value(self, lam: np.ndarray, y: np.ndarray) -> float:
        return self.total_value(y) - float((y * lam[None, :]).sum()) + float(lam @ self.caps)

    def repair(self, y: np.ndarray) -> np.ndarray:
        used = y.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(used > self.caps, self.caps / np.maximum(used, 1e-300), 1.0)
        return y * scale[None, :]

    def _opening_order(self) -> np.ndarray:
        items = self.instance.items
        if self.mode == AGGREGATE:
            opening = np.array([it.value.derivative(0.0) for it in items])
        else:
            opening = np.array([max(vf.derivative(0.0) for vf in it.value) for it in items])
        return np.argsort(-opening, kind="stable")

    def polish(self, y: np.ndarray, passes: int = 2) -> np.ndarray:
        """Per-item exact re-solve against residual capacity; monotone in value.

        Items are revisited in decreasing order of opening marginal value so
        the most valuable demand gets first claim on freed capacity.
        """
        items = self.instance.items
        y = y.copy()
        order = self._opening_order()
        for _ in range(passes):
            used = y.sum(axis=0)
            for i in order:
                it = items[i]
                resid = self.caps - (used - y[i])
                room = np.minimum(self.rates[i], np.maximum(resid, 0.0))
                if self.mode == AGGREGATE:
                    new = _fill_greedy(it.size, room)
                else:
                    new = _separable_fill(it, room)
                if self.total_value_row(i, new) >= self.total_value_row(i, y[i]):
                    used += new - y[i]
                    y[i] = new
        return y

    def price_polish(self, y: np.ndarray, prices: np.ndarray) -> np.ndarray:
        """One pass of per-item re-solves against the given capacity prices.

        Unlike ``polish`` this can shrink an item's take (stopping where its
        marginal value meets the price), which frees capacity that a later
        zero-price pass hands to better items.  Keeps feasibility.
        """
        items = self.instance.items
        y = y.copy()
        used = y.sum(axis=0)
        for i in self._opening_order():
            it = items[i]
            resid = self.caps - (used - y[i])
            room = np.minimum(self.rates[i], np.maximum(resid, 0.0))
            if self.mode == AGGREGATE:
                new = _price_fill(it.value, it.size, room, prices)
            else:
                new = _separable_fill(it, room, prices)
            used += new - y[i]
            y[i] = new
        return y

    def slack_prices(self, y: np.ndarray) -> np.ndarray:
        """Complementary-slackness price candidate induced by a primal point.

        Slack knapsacks price at zero; binding ones at the smallest marginal
        value among occupants that are not rate-capped there.  Always a
        legitimate dual point; tight when y is (near-)optimal.
        """
        items = self.instance.items
        used = y.sum(axis=0)
        lam = np.zeros(self.m)
        if self.mode == AGGREGATE:
            xs = y.sum(axis=1)
            marg = np.array([it.value.derivative(float(x)) for it, x in zip(items, xs)])
        binding = used >= self.caps * (1.0 - 1e-9)
        for m in np.nonzero(binding)[0]:
            occ = np.nonzero(y[:, m] > 1e-12)[0]
            if len(occ) == 0:
                continue
            free = [i for i in occ if y[i, m] < self.rates[i, m] - 1e-12]
            pick = free if free else list(occ)
            if self.mode == AGGREGATE:
                lam[m] = max(0.0, min(marg[i] for i in pick))
            else:
                lam[m] = max(0.0, min(items[i].value[m].derivative(float(y[i, m])) for i in pick))
        return lam

    def exchange_polish(self, y: np.ndarray, passes: int = 2) -> np.ndarray:
        """Length-2 augmentations: relocate an occupant of a binding knapsack
        to one of its slack alternatives and grant the freed capacity to a
        blocked item with a higher marginal value.  Pure value gain."""
        items = self.instance.items
        y = y.copy()
        if self.mode != AGGREGATE:
            return self._exchange_separable(y, passes)
        for _ in range(passes):
            moved = False
            used = y.sum(axis=0)
            xs = y.sum(axis=1)
            marg = np.array([items[i].value.derivative(float(xs[i])) for i in range(self.n)])
            resid = self.caps - used
            for m in range(self.m):
                if resid[m] > 1e-9 * self.caps[m]:
                    continue
                # items that would take more of knapsack m if it had room
                blocked = [
                    j for j in range(self.n)
                    if y[j, m] < self.rates[j, m] - 1e-12
                    and xs[j] < self.sizes[j] - 1e-12
                    and marg[j] > 1e-12
                ]
                if not blocked:
                    continue
                blocked.sort(key=lambda j: -marg[j])
                occupants = [i for i in np.nonzero(y[:, m] > 1e-12)[0]]
                for j in blocked:
                    gain = marg[j]
                    for i in occupants:
                        if i == j:
                            continue
                        for m2 in range(self.m):
                            if m2 == m or resid[m2] <= 1e-12:
                                continue
                            room_i = min(self.rates[i, m2] - y[i, m2], resid[m2])
                            if room_i <= 1e-12:
                                continue
                            delta = min(
                                y[i, m],
                                room_i,
                                self.rates[j, m] - y[j, m],
                                self.sizes[j] - xs[j],
                            )
                            if delta <= 1e-12:
                                continue
                            y[i, m] -= delta
                            y[i, m2] += delta
                            y[j, m] += delta
                            xs[j] += delta
                            resid[m2] -= delta
                            marg[j] = items[j].value.derivative(float(xs[j]))
                            moved = True
                            if marg[j] <= 1e-12 or y[j, m] >= self.rates[j, m] - 1e-12:
                                break
                        else:
                            continue
                        break
            if not moved:
                break
        return y

    def _exchange_separable(self, y: np.ndarray, passes: int) -> np.ndarray:
        """Separable counterpart: moving an occupant changes its own value
        too, so each candidate move is scored exactly before acceptance."""
        items = self.instance.items
        if self.n > 120:
            return y
        for _ in range(passes):
            moved = False
            used = y.sum(axis=0)
            resid = self.caps - used
            totals = y.sum(axis=1)
            for m in range(self.m):
                if resid[m] > 1e-9 * self.caps[m]:
                    continue
                occupants = list(np.nonzero(y[:, m] > 1e-12)[0])
                for j in range(self.n):
                    if (y[j, m] >= self.rates[j, m] - 1e-12
                            or totals[j] >= self.sizes[j] - 1e-12):
                        continue
                    gj_m = items[j].value[m]
                    for i in occupants:
                        if i == j:
                            continue
                        # direct swap: occupant i sheds, j takes its place
                        gi_m = items[i].value[m]
                        delta = min(
                            y[i, m],
                            self.rates[j, m] - y[j, m],
                            self.sizes[j] - totals[j],
                        )
                        if delta > 1e-12 and (
                            gj_m.derivative(y[j, m]) > gi_m.derivative(y[i, m] - delta) + 1e-12
                        ):
                            best_gain, best_d = 0.0, 0.0
                            d = delta
                            for _half in range(4):
                                gain = (
                                    gj_m.value(y[j, m] + d) - gj_m.value(y[j, m])
                                    + gi_m.value(y[i, m] - d) - gi_m.value(y[i, m])
                                )
                                if gain > best_gain:
                                    best_gain, best_d = gain, d
                                d *= 0.5
                            if best_gain > 1e-12:
                                d = best_d
                                y[i, m] -= d
                                totals[i] -= d
                                y[j, m] += d
                                totals[j] += d
                                moved = True
                                if (y[j, m] >= self.rates[j, m] - 1e-12
                                        or totals[j] >= self.sizes[j] - 1e-12):
                                    break
                        for m2 in range(self.m):
                            if m2 == m or resid[m2] <= 1e-12:
                                continue
                            delta = min(
                                y[i, m],
                                resid[m2],
                                self.rates[i, m2] - y[i, m2],
                                self.rates[j, m] - y[j, m],
                                self.sizes[j] - totals[j],
                            )
                            if delta <= 1e-12:
                                continue
                            gi, gj = items[i].value, items[j].value
                            best_gain, best_d = 0.0, 0.0
                            d = delta
                            for _half in range(3):  # quadratics may prefer partial moves
                                gain = (
                                    gi[m2].value(y[i, m2] + d) - gi[m2].value(y[i, m2])
                                    + gi[m].value(y[i, m] - d) - gi[m].value(y[i, m])
                                    + gj[m].value(y[j, m] + d) - gj[m].value(y[j, m])
                                )
                                if gain > best_gain:
                                    best_gain, best_d = gain, d
                                d *= 0.5
                            if best_gain <= 1e-12:
                                continue
                            d = best_d
                            y[i, m] -= d
                            y[i, m2] += d
                            y[j, m] += d
                            totals[j] += d
                            resid[m2] -= d
                            moved = True
                            if (y[j, m] >= self.rates[j, m] - 1e-12
                                    or totals[j] >= self.sizes[j] - 1e-12):
                                break
                        else:
                            continue
                        break
            if not moved:
                break
        return y

    def greedy_primal(self) -> np.ndarray:
        """Feasible start: items in decreasing opening value take what fits."""
        items = self.instance.items
        if self.mode == AGGREGATE:
            opening = np.array([it.value.derivative(0.0) for it in items])
        else:
            opening = np.array([max(vf.derivative(0.0) for vf in it.value) for it in items])
        order = np.argsort(-opening, kind="stable")
        resid = self.caps.copy()
        y = np.zeros((self.n, self.m))
        for i in order:
            room = np.minimum(self.rates[i], np.maximum(resid, 0.0))
            if self.mode == AGGREGATE:
                row = _fill_greedy(items[i].size, room)
            else:
                row = _separable_fill(items[i], room)
            y[i] = row
            resid -= row
        return y

    def total_value_row(self, i: int, row: np.ndarray) -> float:
        it = self.instance.items[i]
        if self.mode == AGGREGATE:
            return it.value.value(float(row.sum()))
        return float(sum(it.value[j].value(float(row[j])) for j in range(self.m)))


def _fill_greedy(size: float, room: np.ndarray) -> np.ndarray:
    out = np.zeros_like(room)
    left = size
    for j in range(len(room)):
        take = min(room[j], left)
        out[j] = take
        left -= take
        if left <= 0:
            break
    return out


def _price_fill(vf: ValueFunction, size: float, room: np.ndarray, prices: np.ndarray) -> np.ndarray:
    """Aggregate-value item against linear capacity prices, cheapest first."""
    out = np.zeros_like(room)
    x = 0.0
    for j in np.argsort(prices, kind="stable"):
        if room[j] <= 0.0:
            continue
        want = vf.demand_at(prices[j], size)
        add = min(max(want - x, 0.0), room[j])
        out[j] = add
        x += add
    return out


def _separable_fill(item: Item, room: np.ndarray, prices: np.ndarray | None = None) -> np.ndarray:
    """Exact per-item solve at fixed prices: bisection on the demand multiplier."""
    m = len(room)
    if prices is None:
        prices = np.zeros(m)

    def take(mu):
        return np.array(
            [item.value[j].demand_at(prices[j] + mu, min(room[j], item.size)) for j in range(m)]
        )

    y = take(0.0)
    if y.sum() <= item.size:
        return y
    lo, hi = 0.0, max(vf.derivative(0.0) for vf in item.value) + 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if take(mid).sum() > item.size:
            lo = mid
        else:
            hi = mid
    y = take(hi)
    short = item.size - y.sum()
    upper = take(lo)
    for j in range(m):
        if short <= 0:
            break
        add = min(upper[j] - y[j], short)
        if add > 0:
            y[j] += add
            short -= add
    return y


def offline_multi(instance: Instance, max_iter: int = 10_000, gap_tol: float = GAP_TOL,
                  check_every: int = 25, warm_start=None) -> OfflineSolution:
    """Near-optimal solution for any number of knapsacks with a certified gap.

    Projected subgradient descent on the capacity prices with diminishing
    steps on the capacity-relative oversubscription; the best dual iterate
    (including ones at trailing-window price averages) upper bounds the
    optimum, a repaired-and-polished primal lower bounds it, and the
    reported gap is their difference.  Non-convergence after the budget is
    flagged in the result, never silent.  ``warm_start`` seeds the price
    vector, e.g. from a structurally similar instance.
    """
    prep = _Prepared(instance)
    if prep.n == 0:
        return OfflineSolution((), 0.0, (0.0,) * prep.m, (), 0.0, True, 0)
    setup = instance.setup
    caps = prep.caps
    eta0 = math.sqrt(setup.lower_bound * setup.upper_bound)
    if warm_start is not None:
        lam = np.asarray(warm_start, dtype=float).copy()
    else:
        lam = np.full(prep.m, eta0)
    best_dual = math.inf
    best_y = prep.polish(prep.greedy_primal())
    best_primal = prep.total_value(best_y)
    avg = np.zeros((prep.n, prep.m))
    tail = lam.copy()
    tail_n = 1
    it_count = 0
    # the free-capacity bound q(0) is already tight for uncontended instances
    zeros = np.zeros(prep.m)
    best_dual = prep.dual_value(zeros, prep.inner(zeros))
    if best_dual - best_primal <= gap_tol * max(best_primal, 1e-12):
        return OfflineSolution(
            assignments=tuple(Assignment(fractions=tuple(r)) for r in best_y),
            value=best_primal,
            knapsack_prices=(0.0,) * prep.m,
            item_prices=_item_prices(prep, best_y),
            gap=best_dual - best_primal,
            converged=True,
            iterations=0,
        )
    for k in range(1, max_iter + 1):
        it_count = k
        y = prep.inner(lam)
        dual = prep.dual_value(lam, y)
        best_dual = min(best_dual, dual)
        avg += (y - avg) / k
        if k % (4 * check_every) == 0:
            tail, tail_n = lam.copy(), 1  # restart the trailing price window
        else:
            tail_n += 1
            tail += (lam - tail) / tail_n
        sub_rel = (caps - y.sum(axis=0)) / caps
        # geometric decay with a floor: contracts fast on smooth duals while
        # the floor plus trailing averages keeps polyhedral cases moving
        lam = np.maximum(lam - eta0 * (0.99 ** k + 5e-4) * sub_rel, 0.0)
        if k % check_every == 0 or k == max_iter:
            y_tail = prep.inner(tail)
            best_dual = min(best_dual, prep.dual_value(tail, y_tail))
            # any nonnegative price vector is dual-feasible, so probing a
            # denoised tail (tiny components snapped to zero) is sound
            snapped = np.where(tail < 0.02 * tail.max(initial=0.0), 0.0, tail)
            if not np.array_equal(snapped, tail):
                best_dual = min(best_dual, prep.dual_value(snapped, prep.inner(snapped)))
            guided = prep.polish(prep.price_polish(prep.repair(y_tail), tail), passes=1)
            for cand in (guided, prep.polish(prep.repair(avg), passes=1)):
                cand = prep.exchange_polish(cand)
                val = prep.total_value(cand)
                if val > best_primal:
                    best_primal, best_y = val, cand
            hat = prep.slack_prices(best_y)
            best_dual = min(best_dual, prep.dual_value(hat, prep.inner(hat)))
            gap = best_dual - best_primal
            if gap <= gap_tol * max(best_primal, 1e-12):
                break
    gap = best_dual - best_primal
    assignments = tuple(Assignment(fractions=tuple(row)) for row in best_y)
    return OfflineSolution(
        assignments=assignments,
        value=best_primal,
        knapsack_prices=tuple(tail),
        item_prices=_item_prices(prep, best_y),
        gap=gap,
        converged=gap <= gap_tol * max(best_primal, 1e-12),
        iterations=it_count,
    )


def _item_prices(prep: "_Prepared", y: np.ndarray) -> tuple[float, ...]:
    items = prep.instance.items
    if prep.mode == AGGREGATE:
        return tuple(it.value.derivative(float(y[i].sum())) for i, it in enumerate(items))
    return tuple(
        max(it.value[j].derivative(float(y[i, j])) for j in range(prep.m))
        for i, it in enumerate(items)
    )


def offline_value(instance: Instance, **kwargs) -> OfflineSolution:
    """Dispatch to the exact single-knapsack oracle when possible."""
    if instance.setup.num_knapsacks == 1:
        return offline_single(instance)
    return offline_multi(instance, **kwargs)


# ---------------------------------------------------------------------------
# brute force on a capacity lattice
# ---------------------------------------------------------------------------

MAX_CELLS = 10_000_000


def brute_force(instance: Instance, grid: int = 50) -> float:
    """Exhaustive maximum over per-knapsack allocations on a uniform lattice.

    Each knapsack's capacity is cut into ``grid`` steps and every joint
    choice of per-item step counts is searched (as a dynamic program over
    occupancy, which visits exactly the feasible lattice assignments).  The
    result is a lower bound on the optimum that converges as the grid is
    refined.  Guarded to tiny instances; meant for tests.
    """
    n, m = len(instance.items), instance.setup.num_knapsacks
    if n * m > 8:
        raise ValueError("brute_force is limited to n*m <= 8")
    if grid > 50:
        raise ValueError("brute_force is limited to grid <= 50")
    if (grid + 1) ** m > MAX_CELLS:
        raise ValueError("occupancy lattice too large")
    if n == 0:
        return 0.0
    steps = np.asarray(instance.setup.capacities) / grid
    shape = (grid + 1,) * m
    best = np.full(shape, -np.inf)
    best[(0,) * m] = 0.0
    for item in instance.items:
        combos = _item_combos(item, steps, grid)
        nxt = np.full(shape, -np.inf)
        for counts, val in combos:
            src = tuple(slice(0, grid + 1 - c) for c in counts)
            dst = tuple(slice(c, grid + 1) for c in counts)
            np.maximum(nxt[dst], best[src] + val, out=nxt[dst])
        best = nxt
    return float(best.max())


def _item_combos(item: Item, steps: np.ndarray, grid: int):
    """All lattice assignments one item can take, with their values."""
    m = len(steps)
    max_counts = [
        min(grid, int(math.floor(min(item.rate_limits[j], item.size) / steps[j] + 1e-12)))
        for j in range(m)
    ]
    combos = []

    def rec(j, counts, used):
        if used > item.size * (1.0 + 1e-12):
            return
        if j == m:
            fractions = [c * s for c, s in zip(counts, steps)]
            combos.append((tuple(counts), item.value_of(fractions)))
            return
        for c in range(max_counts[j] + 1):
            add = c * steps[j]
            if used + add > item.size * (1.0 + 1e-12):
                break
            rec(j + 1, counts + [c], used + add)

    rec(0, [], 0.0)
    return combos
