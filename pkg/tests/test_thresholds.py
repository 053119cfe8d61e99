import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from okra.core import InvalidSetupError, Setup
from okra.thresholds import (
    Variant,
    boundary_checks,
    equality_residual,
    fill_level,
    fill_levels,
    lambert_w,
    lambert_w_log,
    make_family,
    price_integral,
    ratio_aggregate,
    ratio_no_leftover,
    ratio_relaxed,
    ratio_separable,
    ratio_single,
    threshold_price,
    utilization_for_price,
    verify_necessary_condition,
    verify_sufficient_ode,
)


def setup_for(theta, caps=(1.0,)):
    return Setup(capacities=caps, lower_bound=1.0, upper_bound=float(theta))


# ---------------------------------------------------------------------------
# competitive ratios
# ---------------------------------------------------------------------------


def test_ratio_single_closed_form():
    assert ratio_single(setup_for(1.0)) == 1.0
    assert ratio_single(setup_for(math.e)) == pytest.approx(2.0, abs=1e-14)
    assert ratio_single(setup_for(36.0)) == pytest.approx(1.0 + math.log(36.0), abs=1e-13)


def test_ratio_single_rejects_bad_setup():
    with pytest.raises(InvalidSetupError):
        ratio_single(Setup(capacities=(1.0,), lower_bound=2.0, upper_bound=1.0))


def test_ratio_aggregate_against_quadratic_formula():
    # with x = alpha - 1 the equation is x - 1/x = ln(theta), whose positive
    # root is x = (ln(theta) + sqrt(ln(theta)^2 + 4)) / 2
    for theta in (1.0, 2.0, 36.0, 500.0):
        t = math.log(theta)
        expect = 1.0 + (t + math.sqrt(t * t + 4.0)) / 2.0
        assert ratio_aggregate(setup_for(theta)) == pytest.approx(expect, abs=1e-12)
    assert ratio_aggregate(setup_for(1.0)) == pytest.approx(2.0, abs=1e-12)


def test_ratio_aggregate_residual():
    for theta in np.linspace(1.0, 1000.0, 50):
        a = ratio_aggregate(setup_for(theta))
        assert abs((a - 1) - 1 / (a - 1) - math.log(theta)) <= 1e-12


def test_ratio_separable_residual_and_floor():
    for theta in (1.0, 4.0, 36.0, 1000.0):
        a = ratio_separable(setup_for(theta))
        rhs = math.log((a * theta - 1.0) / (a - 1.0))
        assert abs((a - 1) - 1 / (a - 1) - rhs) <= 1e-12
    assert ratio_separable(setup_for(1.0)) >= ratio_aggregate(setup_for(1.0)) - 1e-12


def test_ratio_ordering_and_bracket():
    # single <= aggregate <= separable, all within [1+ln t, 2+ln t]
    for theta in np.linspace(1.0, 1000.0, 50):
        lo = 1.0 + math.log(theta)
        hi = 2.0 + math.log(theta)
        rs = ratio_single(setup_for(theta))
        ra = ratio_aggregate(setup_for(theta))
        rp = ratio_separable(setup_for(theta))
        assert lo - 1e-12 <= ra <= hi + 1e-12
        assert lo - 1e-12 <= rp <= hi + 1e-12
        assert rs <= ra + 1e-12 <= rp + 2e-12


def test_ratio_separable_monotone_in_spread():
    thetas = [1.0, 2.0, 5.0, 20.0, 100.0]
    vals = [ratio_separable(setup_for(t)) for t in thetas]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_ratio_no_leftover_plug_in_points():
    # at spread 1 + e^2 the equation alpha = ln((spread-1)/(alpha-1)) is
    # satisfied by alpha = 2 exactly
    a = ratio_no_leftover(setup_for(1.0 + math.e ** 2))
    assert a == pytest.approx(2.0, abs=1e-12)
    a2 = ratio_no_leftover(setup_for(1.0 + math.e))
    assert 1.0 < a2 < 2.0
    assert abs(a2 - math.log(math.e / (a2 - 1.0))) <= 1e-12


def test_ratio_no_leftover_below_single():
    for theta in (2.0, 10.0, 100.0):
        assert ratio_no_leftover(setup_for(theta)) < ratio_single(setup_for(theta))


def test_ratio_no_leftover_degenerate():
    with pytest.raises(InvalidSetupError):
        ratio_no_leftover(setup_for(1.0))


def test_lambert_w_omega_constant():
    # Newton oracle for w * e^w = 1, computed independently
    w = 0.5
    for _ in range(60):
        w = w - (w * math.exp(w) - 1.0) / (math.exp(w) * (w + 1.0))
    assert lambert_w(1.0) == pytest.approx(w, abs=1e-15)
    assert lambert_w(1.0) == pytest.approx(0.5671432904097838, abs=1e-14)


def test_lambert_w_against_scipy():
    from scipy.special import lambertw as sp_w

    for x in [0.0, 1e-6, 0.1, 1.0, math.e, 10.0, 1e3, 1e8]:
        assert lambert_w(x) == pytest.approx(float(sp_w(x).real), rel=1e-12)
    with pytest.raises(ValueError):
        lambert_w(-0.1)


def test_lambert_w_log_matches_direct():
    for xi in (0.0, 1.0, 10.0, 29.0, 31.0, 300.0):
        w = lambert_w_log(xi)
        assert w + math.log(w) == pytest.approx(xi, abs=1e-9 * max(1.0, xi))


def test_ratio_relaxed_residual_and_knee():
    for c, theta in [(1.0, math.e), (1.0, 10.0), (1.0, 36.0), (5.0, 36.0), (100.0, 100.0)]:
        a, frac = ratio_relaxed(setup_for(theta), c)
        z = math.log(c * theta)
        wz = lambert_w(z * math.exp(z - 1.0))
        assert a == pytest.approx(z / (z - wz), rel=1e-12)
        assert 0.0 <= frac <= 1.0
    with pytest.raises(InvalidSetupError):
        ratio_relaxed(setup_for(1.0), 1.0)


def test_ratio_relaxed_logarithmic_growth():
    # alpha stays within 3x of ln(c*theta) across the sweep; the bound is
    # provably violated as c*theta -> 1, so the grid keeps away from 1
    for c in np.linspace(1.0, 100.0, 8):
        for theta in np.linspace(1.0, 100.0, 8):
            if c * theta <= 1.0:
                continue
            a, _ = ratio_relaxed(setup_for(theta), float(c))
            assert a <= 3.0 * math.log(c * theta) + 1e-12


# ---------------------------------------------------------------------------
# price curves
# ---------------------------------------------------------------------------

FLAT_FAMILIES = [Variant.SINGLE, Variant.AGGREGATE, Variant.SEPARABLE]
ALL_FAMILIES = FLAT_FAMILIES + [Variant.NO_LEFTOVER, Variant.RELAXED]


def family_for(variant, theta=36.0, caps=(1.0,), c=2.0):
    return make_family(variant, setup_for(theta, caps), c=c if variant is Variant.RELAXED else 1.0)


def test_single_price_boundaries():
    fam = family_for(Variant.SINGLE)
    assert threshold_price(fam, 0, 0.0) == 1.0
    assert threshold_price(fam, 0, fam.knees[0]) == pytest.approx(1.0, abs=1e-12)
    # substituting w = C makes the exponent ln(spread) exactly
    assert threshold_price(fam, 0, 1.0) == pytest.approx(36.0, rel=1e-12)
    assert threshold_price(fam, 0, 1.0 + 1e-9) == math.inf


def test_separable_price_hits_ceiling():
    fam = family_for(Variant.SEPARABLE, caps=(2.0, 0.5))
    for m in range(2):
        cm = fam.setup.capacities[m]
        assert threshold_price(fam, m, cm) == pytest.approx(36.0, rel=1e-9)
        assert threshold_price(fam, m, fam.knees[m]) == pytest.approx(1.0, rel=1e-9)


@pytest.mark.parametrize("variant", ALL_FAMILIES)
def test_price_monotone_on_fine_grid(variant):
    fam = family_for(variant, caps=(1.0, 2.0) if variant in (Variant.AGGREGATE, Variant.SEPARABLE) else (1.0,))
    for m in range(fam.num_knapsacks):
        cm = fam.setup.capacities[m]
        ws = np.linspace(0.0, cm, 10_000)
        ps = np.array([threshold_price(fam, m, w) for w in ws])
        assert np.all(np.diff(ps) >= -1e-12)
        assert ps[-1] >= fam.setup.upper_bound - 1e-9 * fam.setup.upper_bound


@pytest.mark.parametrize("variant", ALL_FAMILIES)
def test_boundary_checks_tight(variant):
    fam = family_for(variant)
    checks = boundary_checks(fam, 0)
    assert checks["ceiling_error"] <= 1e-9 * fam.setup.upper_bound
    if "knee_continuity" in checks:
        assert checks["knee_continuity"] <= 1e-9


def test_knee_scales_linearly_with_capacity():
    for variant in ALL_FAMILIES:
        f1 = family_for(variant, caps=(1.0,))
        f3 = family_for(variant, caps=(3.0,))
        assert f3.knees[0] == pytest.approx(3.0 * f1.knees[0], rel=1e-12)


def test_utilization_for_price_conventions():
    fam = family_for(Variant.SINGLE)
    # the flat price maps to the smallest utilization, i.e. zero
    assert utilization_for_price(fam, 0, 1.0) == 0.0
    assert utilization_for_price(fam, 0, 36.0) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        utilization_for_price(fam, 0, 0.5)
    with pytest.raises(ValueError):
        utilization_for_price(fam, 0, 36.5)


def test_no_leftover_low_prices_map_to_zero():
    fam = family_for(Variant.NO_LEFTOVER)
    start = threshold_price(fam, 0, 0.0)
    assert start == pytest.approx(fam.ratio * 1.0, rel=1e-12)  # opening price is ratio * floor
    with pytest.raises(ValueError):
        utilization_for_price(fam, 0, start - 0.5)
    assert fill_level(fam, 0, start - 0.5) == 0.0


@settings(max_examples=100, deadline=None)
@given(
    price=st.floats(min_value=1.0 + 1e-9, max_value=36.0),
    variant=st.sampled_from([Variant.SINGLE, Variant.AGGREGATE, Variant.SEPARABLE]),
)
def test_price_inverse_round_trip(price, variant):
    fam = family_for(variant)
    w = utilization_for_price(fam, 0, price)
    assert threshold_price(fam, 0, w) == pytest.approx(price, rel=1e-9)


@pytest.mark.parametrize("variant", ALL_FAMILIES)
def test_fill_levels_match_scalar(variant):
    fam = family_for(variant, caps=(1.0, 2.0) if variant in (Variant.AGGREGATE, Variant.SEPARABLE) else (1.0,))
    for price in np.linspace(0.0, 36.0, 37):
        vec = fill_levels(fam, float(price))
        for m in range(fam.num_knapsacks):
            assert vec[m] == pytest.approx(fill_level(fam, m, float(price)), abs=1e-12)


def test_price_integral_matches_simpson():
    fam = family_for(Variant.AGGREGATE)
    # one smooth piece at a time: Simpson loses orders at the knee
    for lo_w, hi_w in [(0.0, fam.knees[0]), (fam.knees[0], 0.95)]:
        ws = np.linspace(lo_w, hi_w, 10_001)
        ps = np.array([threshold_price(fam, 0, w) for w in ws])
        h = ws[1] - ws[0]
        simpson = h / 3 * (ps[0] + ps[-1] + 4 * ps[1:-1:2].sum() + 2 * ps[2:-2:2].sum())
        assert price_integral(fam, 0, lo_w, hi_w) == pytest.approx(float(simpson), rel=1e-10)


# ---------------------------------------------------------------------------
# sufficient-condition verification
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ALL_FAMILIES)
def test_sufficient_ode_binds_for_solved_families(variant):
    fam = family_for(variant, caps=(1.0, 0.4) if variant in (Variant.AGGREGATE, Variant.SEPARABLE) else (1.0,))
    for m in range(fam.num_knapsacks):
        cm = fam.setup.capacities[m]
        scale = 1e-6 * fam.setup.upper_bound * cm
        assert verify_sufficient_ode(fam, m, 10_000) <= scale
        assert equality_residual(fam, m, 10_000) <= scale


def test_sufficient_ode_catches_lowered_ratio():
    fam = family_for(Variant.SINGLE)
    worse = type(fam)(
        variant=fam.variant, setup=fam.setup, ratio=fam.ratio - 0.1, knees=fam.knees, c=fam.c
    )
    pass_threshold = 1e-6 * fam.setup.upper_bound * fam.setup.capacities[0]
    assert verify_sufficient_ode(worse, 0, 2_000) > pass_threshold


def test_grid_floor():
    fam = family_for(Variant.SINGLE)
    with pytest.raises(ValueError):
        verify_sufficient_ode(fam, 0, 50)


def test_necessary_condition_suite():
    for theta in (math.e, 10.0, 36.0):
        fam = family_for(Variant.SINGLE, theta=theta)
        rep = verify_necessary_condition(fam)
        assert rep["stream_value_residual"] <= 1e-6 * theta
        assert rep["start_error"] <= 1e-12
        assert rep["end_error"] <= 1e-12
        assert rep["inverse_error"] <= 1e-9 * theta
