import math

import numpy as np
import pytest

from okra.adversary import (
    CrReport,
    empirical_cr,
    gen_random,
    gen_rising,
    gen_split_load,
    rising_sweep,
)
from okra.core import Assignment, Instance, Item, KnapsackState, RunResult, Setup, linear_value
from okra.offline import offline_single, offline_multi
from okra.ota import fta_policy, ota_policy, run
from okra.thresholds import Variant, fill_level, make_family

SETUP1 = Setup(capacities=(1.0,), lower_bound=1.0, upper_bound=36.0)
SETUP2 = Setup(capacities=(1.0, 1.0), lower_bound=1.0, upper_bound=36.0)


def test_gen_rising_structure():
    inst = gen_rising(SETUP1, 1.0, 0.1)
    assert len(inst.items) == 1
    assert inst.items[0].value.slope == 1.0

    inst = gen_rising(SETUP1, 36.0, 35.0 / 100.0)
    assert len(inst.items) == 101
    slopes = [it.value.slope for it in inst.items]
    assert slopes[0] == 1.0 and slopes[-1] == 36.0
    diffs = np.diff(slopes)
    assert np.all(diffs > 0) and np.all(diffs <= 35.0 / 100.0 + 1e-12)
    assert all(it.size == 1.0 for it in inst.items)


def test_gen_rising_offline_value_is_top_times_capacity():
    for top in (1.0, 10.0, 36.0):
        inst = gen_rising(SETUP1, top, 35.0 / 500.0)
        assert offline_single(inst).value == pytest.approx(top, rel=1e-12)


def test_empirical_cr_replay_policy_scores_one():
    instances = [gen_rising(SETUP1, p, 0.5) for p in (3.0, 10.0, 36.0)]

    def replay(inst):
        sol = offline_single(inst)
        state = KnapsackState(1)
        for a in sol.assignments:
            state.apply(a)
        return RunResult(
            assignments=sol.assignments,
            final_state=state,
            total_value=sol.value,
            per_item_values=tuple(
                it.value_of(a.fractions) for it, a in zip(inst.items, sol.assignments)
            ),
        )

    rep = empirical_cr(replay, instances)
    assert all(r == pytest.approx(1.0, abs=1e-9) for r in rep.ratios)


def test_rising_sweep_attains_theoretical_ratio():
    fam = make_family(Variant.SINGLE, SETUP1)
    rep = rising_sweep(SETUP1, fam, points=25, epsilon=35.0 / 500.0)
    assert rep.max_ratio <= fam.ratio + 1e-9
    assert rep.max_ratio == pytest.approx(fam.ratio, rel=0.02)
    assert all(r >= 1.0 - 1e-9 for r in rep.ratios)


def test_fixed_price_baseline_is_weakly_worse_on_worst_case_family():
    fam = make_family(Variant.SINGLE, SETUP1)
    instances = [gen_rising(SETUP1, float(p), 35.0 / 500.0)
                 for p in np.linspace(1.0, 36.0, 25)]
    ota_rep = empirical_cr(ota_policy(fam), instances)
    fta_rep = empirical_cr(fta_policy(SETUP1), instances)
    assert fta_rep.max_ratio >= ota_rep.max_ratio - 1e-9


def test_utilization_trace_matches_inverse_curve():
    fam = make_family(Variant.SINGLE, SETUP1)
    inst = gen_rising(SETUP1, 36.0, 35.0 / 1000.0)
    res = run(ota_policy(fam), inst)
    w = 0.0
    for item, a in zip(inst.items, res.assignments):
        w += a.total
        want = fill_level(fam, 0, item.value.slope)
        assert abs(w - want) <= 0.02 * 1.0


def test_gen_split_load_realizes_split():
    inst = gen_split_load(SETUP2, split=0.5)
    fam = make_family(Variant.AGGREGATE, SETUP2)
    res = run(ota_policy(fam), inst)
    w = res.final_state.utilizations
    assert w[0] < fam.knees[0]
    assert w[1] >= fam.knees[1]


def test_gen_split_load_needs_two_knapsacks():
    with pytest.raises(ValueError):
        gen_split_load(SETUP1, split=0.5)


def test_gen_split_load_ratio_within_guarantee():
    inst = gen_split_load(SETUP2, split=0.5)
    fam = make_family(Variant.AGGREGATE, SETUP2)
    rep = empirical_cr(ota_policy(fam), [inst],
                       oracle_kwargs={"max_iter": 4000, "gap_tol": 1e-5})
    assert not rep.failed
    assert rep.max_ratio <= fam.ratio + 1e-3


def test_gen_random_deterministic_and_valid():
    a = gen_random(SETUP2, seed=42, n_items=20)
    b = gen_random(SETUP2, seed=42, n_items=20)
    assert a == b
    assert gen_random(SETUP2, seed=1, n_items=0).items == ()


def test_gen_random_ratios_respect_guarantee():
    fam = make_family(Variant.AGGREGATE, SETUP2)
    instances = [gen_random(SETUP2, seed=s, n_items=20, value_dist="linear")
                 for s in range(30)]
    rep = empirical_cr(ota_policy(fam), instances,
                       oracle_kwargs={"max_iter": 1500, "gap_tol": 1e-4})
    for idx, r in enumerate(rep.ratios):
        if idx in rep.failed:
            continue
        assert r <= fam.ratio + 1e-3
        assert r >= 1.0 - 1e-9


def test_empirical_cr_tags_unbounded():
    # a policy that refuses everything: offline positive, online zero
    def refuse(inst):
        n = len(inst.items)
        m = inst.setup.num_knapsacks
        zero = Assignment(fractions=(0.0,) * m)
        return RunResult(
            assignments=(zero,) * n,
            final_state=KnapsackState(m),
            total_value=0.0,
            per_item_values=(0.0,) * n,
        )

    inst = gen_rising(SETUP1, 10.0, 1.0)
    rep = empirical_cr(refuse, [inst])
    assert rep.unbounded == (0,)
    assert math.isinf(rep.ratios[0])
