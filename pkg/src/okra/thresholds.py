"""Threshold-price families, their competitive ratios, and verification suites.

A threshold family assigns each knapsack a non-decreasing price curve over
its utilization; an online packer charges arriving items the integral of
that curve and thereby stays within a provable factor of the offline
optimum.  Five closed-form families are provided:

  single     one knapsack; ratio 1 + ln(spread); price flat at L up to the
             knee C/ratio, then L*exp(ratio*w/C - 1).
  v1         one knapsack, leftover capacity monetized at the floor price;
             ratio solves  r = ln((spread-1)/(r-1));
             price L + (U-L)*exp(r*w/C - r) with no flat segment.
  v2         relaxed value model (average value >= L/c); ratio
             z / (z - W(z*e^(z-1))) with z = ln(c*spread), W the principal
             Lambert branch; two-segment price starting at zero.
  agg        many knapsacks, aggregate values; ratio solves
             r - 1 - 1/(r-1) = ln(spread); knee C_m/(r-1), price
             L*exp(r*w/C_m - r/(r-1)).
  sep        many knapsacks, separable values; ratio solves
             r - 1 - 1/(r-1) = ln((r*spread-1)/(r-1)); price
             (U-L)/(e^r - e^(r/(r-1))) * exp(r*w/C_m) + L/r.

All ratio equations are solved to residual <= 1e-12 by bracketed bisection
with a Newton polish.  Prices are +inf beyond capacity.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

from .core import InvalidSetupError, Setup

RATIO_RESIDUAL = 1e-12


class Variant(str, enum.Enum):
    SINGLE = "got"
    NO_LEFTOVER = "v1"
    RELAXED = "v2"
    AGGREGATE = "agg"
    SEPARABLE = "sep"


# ---------------------------------------------------------------------------
# scalar root finding
# ---------------------------------------------------------------------------


def solve_increasing(f, lo: float, hi: float, df=None, residual: float = RATIO_RESIDUAL,
                     max_iter: int = 200) -> float:
    """Root of an increasing function on [lo, hi] with f(lo) <= 0 <= f(hi).

    Bisection down to machine width, then a few guarded Newton steps when a
    derivative is supplied.  Raises if the residual target is missed.
    """
    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        raise ValueError(f"root not bracketed: f({lo})={flo}, f({hi})={fhi}")
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    a, b = lo, hi
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        if mid == a or mid == b:
            break
        fm = f(mid)
        if fm == 0.0:
            a = b = mid
            break
        if fm < 0:
            a = mid
        else:
            b = mid
    x = 0.5 * (a + b)
    if df is not None:
        for _ in range(4):
            fx = f(x)
            d = df(x)
            if d == 0:
                break
            step = fx / d
            nxt = x - step
            if not (a <= nxt <= b):
                break
            x = nxt
    if abs(f(x)) > residual:
        raise ArithmeticError(f"root residual {abs(f(x)):.3e} above {residual:.1e}")
    return x


def lambert_w(x: float) -> float:
    """Principal-branch Lambert W for x >= 0 via Halley iteration.

    Converges to |w*exp(w) - x| <= 1e-12 * max(1, x); seeded with the
    asymptotic log-log form for large arguments.
    """
    if x < 0:
        raise ValueError("lambert_w: negative argument outside the supported domain")
    if x == 0.0:
        return 0.0
    if x > math.e:
        w = math.log(x) - math.log(math.log(x))
    else:
        w = x / (1.0 + x)  # crude but inside the basin for x in (0, e]
    for _ in range(100):
        ew = math.exp(w)
        r = w * ew - x
        if abs(r) <= 1e-13 * max(1.0, x):
            break
        wp1 = w + 1.0
        w -= r / (ew * wp1 - (w + 2.0) * r / (2.0 * wp1))
    if abs(w * math.exp(w) - x) > 1e-12 * max(1.0, x):
        raise ArithmeticError("lambert_w failed to converge")
    return w


def lambert_w_log(xi: float) -> float:
    """W(exp(xi)) without forming exp(xi); solves w + ln(w) = xi.

    Stable for arbitrarily large xi; used where the W argument overflows.
    """
    if xi < 30.0:
        return lambert_w(math.exp(xi))
    w = xi - math.log(xi)
    for _ in range(50):
        f = w + math.log(w) - xi
        w -= f / (1.0 + 1.0 / w)
        if abs(f) <= 1e-14 * max(1.0, xi):
            break
    return w


# ---------------------------------------------------------------------------
# competitive ratios
# ---------------------------------------------------------------------------


def ratio_single(setup: Setup) -> float:
    """Optimal ratio for the single-knapsack family: 1 + ln(spread)."""
    setup.require_valid()
    return 1.0 + math.log(setup.spread)


def ratio_aggregate(setup: Setup) -> float:
    """Root r > 1 of  r - 1 - 1/(r-1) = ln(spread)."""
    setup.require_valid()
    t = math.log(setup.spread)

    def f(r):
        return (r - 1.0) - 1.0 / (r - 1.0) - t

    def df(r):
        return 1.0 + 1.0 / (r - 1.0) ** 2

    lo = 1.0 + t if t > 0 else 1.0 + 1e-9
    return solve_increasing(f, lo, 2.0 + t, df)


def ratio_separable(setup: Setup) -> float:
    """Root r > 1 of  r - 1 - 1/(r-1) = ln((r*spread - 1)/(r - 1))."""
    setup.require_valid()
    th = setup.spread

    def f(r):
        return (r - 1.0) - 1.0 / (r - 1.0) - math.log((r * th - 1.0) / (r - 1.0))

    def df(r):
        return 1.0 + 1.0 / (r - 1.0) ** 2 - th / (r * th - 1.0) + 1.0 / (r - 1.0)

    t = math.log(th)
    lo = 1.0 + t if t > 0 else 1.0 + 1e-9
    return solve_increasing(f, lo, 2.0 + t, df)


def ratio_no_leftover(setup: Setup) -> float:
    """Root r > 1 of  r = ln((spread - 1)/(r - 1)); needs spread > 1."""
    setup.require_valid()
    th = setup.spread
    if th <= 1.0:
        raise InvalidSetupError("no-leftover family is degenerate at spread = 1")
    t = math.log(th - 1.0)

    # solve in s = r - 1 so the bracket never collapses onto 1.0
    def f(s):
        return 1.0 + s - t + math.log(s)

    def df(s):
        return 1.0 + 1.0 / s

    return 1.0 + solve_increasing(f, 1e-300, math.log(th), df)


def ratio_relaxed(setup: Setup, c: float) -> tuple[float, float]:
    """Ratio and knee fraction for the relaxed family with parameter c >= 1.

    With z = ln(c*spread):  ratio = z / (z - W(z*e^(z-1))) and the price
    knee sits at (W(z*e^(z-1)) - z + 1) * C.  Requires c*spread > 1.
    """
    setup.require_valid()
    if c < 1.0:
        raise InvalidSetupError("relaxed family needs c >= 1")
    z = math.log(c * setup.spread)
    if z <= 0.0:
        raise InvalidSetupError("relaxed family is degenerate at c*spread = 1")
    wz = lambert_w_log(math.log(z) + z - 1.0) if z > 30.0 else lambert_w(z * math.exp(z - 1.0))
    ratio = z / (z - wz)
    knee_frac = wz - z + 1.0
    if not (-1e-12 <= knee_frac <= 1.0 + 1e-12):
        raise ArithmeticError(f"knee fraction {knee_frac} outside [0, 1]")
    return ratio, min(max(knee_frac, 0.0), 1.0)


# ---------------------------------------------------------------------------
# threshold families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdFamily:
    """A solved price family: ratio, per-knapsack knees, and curve constants.

    ``knees[m]`` is the utilization where knapsack m's price leaves its
    initial segment.  ``c`` matters only for the relaxed variant.
    """

    variant: Variant
    setup: Setup
    ratio: float
    knees: tuple[float, ...]
    c: float = 1.0

    @property
    def num_knapsacks(self) -> int:
        return self.setup.num_knapsacks


def make_family(variant: Variant | str, setup: Setup, c: float = 1.0) -> ThresholdFamily:
    variant = Variant(variant)
    setup.require_valid()
    caps = setup.capacities
    if variant is Variant.SINGLE:
        r = ratio_single(setup)
        knees = tuple(cm / r for cm in caps)
    elif variant is Variant.AGGREGATE:
        r = ratio_aggregate(setup)
        knees = tuple(cm / (r - 1.0) for cm in caps)
    elif variant is Variant.SEPARABLE:
        r = ratio_separable(setup)
        knees = tuple(cm / (r - 1.0) for cm in caps)
    elif variant is Variant.NO_LEFTOVER:
        r = ratio_no_leftover(setup)
        knees = tuple(0.0 for _ in caps)
    elif variant is Variant.RELAXED:
        r, frac = ratio_relaxed(setup, c)
        knees = tuple(frac * cm for cm in caps)
    else:  # pragma: no cover
        raise ValueError(variant)
    return ThresholdFamily(variant=variant, setup=setup, ratio=r, knees=knees, c=c)


@functools.lru_cache(maxsize=4096)
def _curve(family: ThresholdFamily, m: int):
    """(knee, rate k, coefficient A, shift s, flat price) with the rising
    segment A*exp(k*w) + s on [knee, C]."""
    setup = family.setup
    cm = setup.capacities[m]
    lo, hi = setup.lower_bound, setup.upper_bound
    r = family.ratio
    knee = family.knees[m]
    v = family.variant
    if v is Variant.SINGLE:
        return knee, r / cm, lo * math.exp(-1.0), 0.0, lo
    if v is Variant.AGGREGATE:
        return knee, r / cm, lo * math.exp(-r / (r - 1.0)), 0.0, lo
    if v is Variant.SEPARABLE:
        coef = (hi - lo) / (math.exp(r) - math.exp(r / (r - 1.0)))
        return knee, r / cm, coef, lo / r, lo
    if v is Variant.NO_LEFTOVER:
        return 0.0, r / cm, (hi - lo) * math.exp(-r), lo, None
    # relaxed: rising segment (L/c)*exp(r*(w-knee)/C); first segment handled
    # separately by callers
    base = lo / family.c
    return knee, r / cm, base * math.exp(-r * knee / cm), 0.0, None


@functools.lru_cache(maxsize=4096)
def _relaxed_first_coef(family: ThresholdFamily, m: int) -> float:
    # (L/c) / (exp(knee/C) - 1); equals (ratio-1)*L/c by the knee identity
    cm = family.setup.capacities[m]
    knee = family.knees[m]
    return (family.setup.lower_bound / family.c) / math.expm1(knee / cm)


def threshold_price(family: ThresholdFamily, m: int, w: float) -> float:
    """Marginal price of knapsack m at utilization w; +inf beyond capacity."""
    cm = family.setup.capacities[m]
    if w < 0:
        raise ValueError("utilization must be nonnegative")
    if w > cm * (1.0 + 1e-15):
        return math.inf
    w = min(w, cm)
    knee, k, coef, shift, flat = _curve(family, m)
    if family.variant is Variant.RELAXED and w < knee:
        return _relaxed_first_coef(family, m) * math.expm1(w / cm)
    if flat is not None and w < knee:
        return flat
    return coef * math.exp(k * w) + shift


def fill_level(family: ThresholdFamily, m: int, price: float) -> float:
    """Largest utilization whose marginal price does not exceed ``price``.

    Returns 0 when even the first unit is dearer, and the full capacity when
    the ceiling price is offered.  This is the supply curve used by the
    online packer; unlike utilization_for_price it maps the flat-segment
    price to the knee rather than to zero.
    """
    setup = family.setup
    cm = setup.capacities[m]
    knee, k, coef, shift, flat = _curve(family, m)
    if family.variant is Variant.RELAXED:
        base = setup.lower_bound / family.c
        if price < 0:
            return 0.0
        if price < base:
            a1 = _relaxed_first_coef(family, m)
            return min(cm * math.log1p(price / a1), knee)
        return min(knee + math.log(price / base) / k, cm)
    if flat is not None:
        if price < flat:
            return 0.0
        if price <= flat:
            return knee
    if price <= shift or price < coef * math.exp(k * knee) + shift:
        # below the rising segment's start: for flat families that start is
        # the flat price handled above; for v1 it means no unit is worth it
        if flat is None:
            return 0.0
        return knee
    return min(math.log((price - shift) / coef) / k, cm)


@functools.lru_cache(maxsize=256)
def _family_arrays(family: ThresholdFamily):
    params = [_curve(family, m) for m in range(family.num_knapsacks)]
    return (
        np.array([p[0] for p in params]),  # knees
        np.array([p[1] for p in params]),  # rates
        np.array([p[2] for p in params]),  # coefficients
        np.array([p[3] for p in params]),  # shifts
        np.array(family.setup.capacities),
    )


def fill_levels(family: ThresholdFamily, price: float) -> np.ndarray:
    """Vectorized fill_level across all knapsacks (hot path for the packer)."""
    knees, ks, coefs, shifts, caps = _family_arrays(family)
    v = family.variant
    if v is Variant.RELAXED:
        base = family.setup.lower_bound / family.c
        if price <= 0.0:
            return np.zeros_like(caps)
        a1 = np.array([_relaxed_first_coef(family, m) for m in range(len(caps))])
        first = caps * np.log1p(min(price, base) / a1)
        if price < base:
            return np.minimum(first, knees)
        return np.minimum(knees + np.log(price / base) / ks, caps)
    if v is Variant.NO_LEFTOVER:
        start = coefs + shifts  # price at zero utilization
        out = np.zeros_like(caps)
        ok = price >= start
        if ok.any():
            out[ok] = np.minimum(np.log((price - shifts[ok]) / coefs[ok]) / ks[ok], caps[ok])
        return out
    flat = family.setup.lower_bound
    if price < flat:
        return np.zeros_like(caps)
    return np.minimum(np.log((max(price, flat) - shifts) / coefs) / ks, caps)


def utilization_for_price(family: ThresholdFamily, m: int, price: float) -> float:
    """Smallest utilization w with price(w) >= ``price``.

    The flat segment maps its own price to w = 0; prices outside
    [price(0), price(C)] raise a range error.
    """
    setup = family.setup
    cm = setup.capacities[m]
    p0 = threshold_price(family, m, 0.0)
    pc = threshold_price(family, m, cm)
    tol = 1e-12 * max(1.0, setup.upper_bound)
    if price < p0 - tol or price > pc + tol:
        raise ValueError(f"price {price} outside [{p0}, {pc}] for knapsack {m}")
    price = min(max(price, p0), pc)
    if price <= p0:
        return 0.0
    lvl = fill_level(family, m, price)
    return min(lvl, cm)


def price_integral(family: ThresholdFamily, m: int, lo_w: float, hi_w: float) -> float:
    """Exact integral of the price curve from lo_w to hi_w (both within capacity)."""
    return _cum_price(family, m, hi_w) - _cum_price(family, m, lo_w)


def _cum_price(family: ThresholdFamily, m: int, w: float) -> float:
    """Closed-form integral of the price curve over [0, w]."""
    setup = family.setup
    cm = setup.capacities[m]
    if w < -1e-12 or w > cm * (1.0 + 1e-12):
        raise ValueError(f"utilization {w} outside [0, {cm}]")
    w = min(max(w, 0.0), cm)
    knee, k, coef, shift, flat = _curve(family, m)
    if family.variant is Variant.RELAXED:
        a1 = _relaxed_first_coef(family, m)
        wk = min(w, knee)
        out = a1 * (cm * math.expm1(wk / cm) - wk)
        if w > knee:
            out += (coef / k) * (math.exp(k * w) - math.exp(k * knee)) + shift * (w - knee)
        return out
    if flat is not None:
        out = flat * min(w, knee)
        if w > knee:
            out += (coef / k) * (math.exp(k * w) - math.exp(k * knee)) + shift * (w - knee)
        return out
    return (coef / k) * (math.exp(k * w) - 1.0) + shift * w


def price_grid(family: ThresholdFamily, m: int, ws: np.ndarray) -> np.ndarray:
    """Vectorized threshold_price over utilizations within capacity."""
    setup = family.setup
    cm = setup.capacities[m]
    ws = np.asarray(ws, dtype=float)
    knee, k, coef, shift, flat = _curve(family, m)
    rising = coef * np.exp(k * np.minimum(ws, cm)) + shift
    if family.variant is Variant.RELAXED:
        first = _relaxed_first_coef(family, m) * np.expm1(ws / cm)
        out = np.where(ws < knee, first, rising)
    elif flat is not None:
        out = np.where(ws < knee, flat, rising)
    else:
        out = rising
    return np.where(ws > cm * (1.0 + 1e-15), np.inf, out)


# ---------------------------------------------------------------------------
# verification suites
# ---------------------------------------------------------------------------


def _ode_terms(family: ThresholdFamily, m: int, ws: np.ndarray):
    """LHS and RHS of the family's sufficient integral condition at each w."""
    setup = family.setup
    cm = setup.capacities[m]
    lo = setup.lower_bound
    r = family.ratio
    knee = family.knees[m]
    prices = price_grid(family, m, ws)
    cum = np.array([_cum_price(family, m, w) for w in ws])
    v = family.variant
    lhs = prices * cm
    if v is Variant.SINGLE:
        rhs = r * cum
    elif v is Variant.AGGREGATE:
        rhs = r * cum - lo * knee
    elif v is Variant.SEPARABLE:
        rhs = r * cum - lo * ws
    elif v is Variant.NO_LEFTOVER:
        rhs = r * cum + r * (cm - ws) * lo
    else:  # relaxed: first-segment condition, verified on [0, knee]
        base = lo / family.c
        rhs = cum + (r - 1.0) * base * ws
    return lhs, rhs


def _ode_domain(family: ThresholdFamily, m: int, grid_points: int) -> np.ndarray:
    cm = family.setup.capacities[m]
    knee = family.knees[m]
    v = family.variant
    if v is Variant.NO_LEFTOVER:
        return np.linspace(0.0, cm, grid_points)
    if v is Variant.RELAXED:
        return np.linspace(0.0, knee, grid_points)
    return np.linspace(knee, cm, grid_points)


def verify_sufficient_ode(family: ThresholdFamily, m: int, grid_points: int = 10_000) -> float:
    """Max of (LHS - RHS) of the sufficient integral condition on its domain.

    Nonpositive (up to rounding) certifies the condition holds; a clearly
    positive value flags a violation, e.g. from a deliberately lowered ratio.
    """
    if grid_points < 100:
        raise ValueError("grid_points must be at least 100")
    ws = _ode_domain(family, m, grid_points)
    lhs, rhs = _ode_terms(family, m, ws)
    return float(np.max(lhs - rhs))


def equality_residual(family: ThresholdFamily, m: int, grid_points: int = 10_000) -> float:
    """Max |LHS - RHS| on the binding domain; ~0 for the solved families."""
    ws = _ode_domain(family, m, grid_points)
    lhs, rhs = _ode_terms(family, m, ws)
    return float(np.max(np.abs(lhs - rhs)))


def boundary_checks(family: ThresholdFamily, m: int) -> dict[str, float]:
    """Knee continuity and end-point prices, as absolute errors."""
    setup = family.setup
    cm = setup.capacities[m]
    knee = family.knees[m]
    out = {}
    pc = threshold_price(family, m, cm)
    out["ceiling_error"] = abs(pc - setup.upper_bound)
    if family.variant in (Variant.SINGLE, Variant.AGGREGATE, Variant.SEPARABLE):
        left = setup.lower_bound
        right = threshold_price(family, m, knee)
        out["knee_continuity"] = abs(left - right)
        out["knee_price_error"] = abs(right - setup.lower_bound)
    elif family.variant is Variant.RELAXED:
        left = _relaxed_first_coef(family, m) * math.expm1(knee / cm)
        right = threshold_price(family, m, knee)
        out["knee_continuity"] = abs(left - right)
        out["knee_price_error"] = abs(right - setup.lower_bound / family.c)
    return out


def optimal_utilization_curve(family: ThresholdFamily, m: int, price: float) -> float:
    """Final utilization an optimal packer reaches on a rising-price stream
    topping out at ``price``; the functional inverse of the price curve."""
    return fill_level(family, m, price)


def verify_necessary_condition(family: ThresholdFamily, grid_points: int = 2_001) -> dict[str, float]:
    """Numerical check of the lower-bound condition for the single family.

    The candidate utilization curve u(p) = (C/ratio) * (1 + ln(p/L)) must
    turn a rising-price stream into value p*C/ratio for every top price p,
    start at C/ratio, end at C, and invert the price curve.
    """
    if family.variant is not Variant.SINGLE:
        raise ValueError("necessary-condition suite applies to the single family")
    setup = family.setup
    lo, hi = setup.lower_bound, setup.upper_bound
    cm = setup.capacities[0]
    r = family.ratio
    ps = np.linspace(lo, hi, grid_points)
    u = (cm / r) * (1.0 + np.log(ps / lo))
    # value of the stream up to top price p: L*u(L) + integral of q du(q)
    integrand = ps * (cm / r) / ps
    cum = np.concatenate(
        [[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(ps))]
    )
    achieved = lo * u[0] + cum
    residual = float(np.max(np.abs(achieved - ps * cm / r)))
    final_err = abs(lo * u[0] + _simpson(integrand, ps) - hi * cm / r)
    inv_err = 0.0
    for p in np.linspace(lo, hi, 101):
        w = fill_level(family, 0, p)
        inv_err = max(inv_err, abs(threshold_price(family, 0, w) - p))
    return {
        "stream_value_residual": residual,
        "start_error": abs(u[0] - cm / r),
        "end_error": abs(u[-1] - cm),
        "inverse_error": inv_err,
        "final_value_error": final_err,
    }


def _simpson(ys: np.ndarray, xs: np.ndarray) -> float:
    """Composite Simpson rule; xs must be uniform with an odd point count."""
    n = len(xs)
    if n < 3 or n % 2 == 0:
        raise ValueError("simpson needs an odd number of >= 3 uniform points")
    h = xs[1] - xs[0]
    return float(h / 3.0 * (ys[0] + ys[-1] + 4.0 * np.sum(ys[1:-1:2]) + 2.0 * np.sum(ys[2:-2:2])))
