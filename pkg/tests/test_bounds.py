from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decisioneval.bounds import (
    IntervalBound,
    Observables,
    alt_metric_bounds,
    alt_metric_bounds_obs,
    bound_influences,
    estimate_ai_vs_human_bounds,
    estimate_ai_vs_human_bounds_direct,
    generic_rule_risk_bounds,
    generic_rule_risk_bounds_obs,
    nuisance_classifiers,
    per_system_risk_bounds,
    system_risk_bounds,
    theta_bounds,
    width_formula,
    xi_bounds,
)
from decisioneval.core import agreement_table, from_arrays
from decisioneval.errors import IncoherentInput, MissingAConditionalFit, RuleRangeError
from decisioneval.nuisance import NuisanceConfig, fit_nuisance
from decisioneval.oracle import (
    POPULATION_FIT,
    SimConfig,
    feasible_vertices,
    fixed_population,
    make_population,
    oracle_sharp_bounds,
    population_dataset,
    sample_dataset,
    target_coefficients,
    true_risk_diff,
)
from decisioneval.point import normal_quantile

from conftest import SATURATED


def one_unit(y1d0, y0d0, pa, e1=0.5):
    """Observables of a single stratum from [z][a] tables; D=1 cells fill the remainder."""
    y1d0, y0d0 = np.array(y1d0, float), np.array(y0d0, float)
    pa = np.array(pa, float)
    d1 = pa[None, :] - y1d0 - y0d0
    return Observables(weight=np.ones(1), e1=np.array([e1]), y1d0=y1d0[None], y0d0=y0d0[None],
                       d1=d1[None], pa=pa[None])


THETA_EXAMPLE = one_unit(y1d0=[[0.2, 0.1], [0.3, 0.1]], y0d0=[[0.1, 0.1], [0.1, 0.1]], pa=[0.6, 0.4])


def test_theta_example_against_lp():
    b = theta_bounds(THETA_EXAMPLE, 0)
    assert (b.lo, b.hi) == pytest.approx((0.05, 0.25), abs=1e-15)
    lp = oracle_sharp_bounds(THETA_EXAMPLE, "theta", a=0)
    assert (lp.lo, lp.hi) == pytest.approx((0.05, 0.25), abs=1e-12)


def test_theta_zero_without_detentions():
    obs = one_unit(y1d0=[[0.6, 0.4], [0.6, 0.4]], y0d0=[[0, 0], [0, 0]], pa=[0.6, 0.4])
    for a in (0, 1):
        b = theta_bounds(obs, a)
        assert b.lo == 0 and b.hi == pytest.approx(0, abs=1e-15)


def test_theta_zero_when_a_never_detained():
    obs = one_unit(y1d0=[[0.2, 0.1], [0.2, 0.1]], y0d0=[[0.4, 0.1], [0.4, 0.1]], pa=[0.6, 0.4])
    b = theta_bounds(obs, 0)
    assert b.lo == 0 and b.hi == pytest.approx(0, abs=1e-15)
    lp = oracle_sharp_bounds(obs, "theta", a=0)
    assert lp.lo == pytest.approx(0, abs=1e-15) and lp.hi == pytest.approx(0, abs=1e-15)


def test_xi_with_identical_arms_matches_theta():
    obs = one_unit(y1d0=[[0.2, 0.1], [0.2, 0.1]], y0d0=[[0.1, 0.2], [0.1, 0.2]], pa=[0.5, 0.5])
    for a in (0, 1):
        t = theta_bounds(obs, a)
        for z in (0, 1):
            x = xi_bounds(obs, a, z)
            assert (x.lo, x.hi) == pytest.approx((t.lo, t.hi), abs=1e-15)


def test_incoherent_input():
    obs = one_unit(y1d0=[[0.5, 0.1], [0.2, 0.1]], y0d0=[[0.3, 0.1], [0.1, 0.1]], pa=[0.6, 0.4])
    with pytest.raises(IncoherentInput):
        theta_bounds(obs, 0)


@settings(max_examples=40)
@given(st.integers(0, 10**6))
def test_xi_lower_bounds_attained_simultaneously(seed):
    obs = make_population(SimConfig(strata=int(seed % 3) + 1, seed=seed)).observables()
    verts = feasible_vertices(obs)
    for z in (0, 1):
        c = target_coefficients(obs, "xi", a=0, z=z)[0] + target_coefficients(obs, "xi", a=1, z=z)[0]
        joint_min = sum(m * (v @ cs).min() for m, v, cs in zip(obs.weight, verts, c))
        per = [xi_bounds(obs, a, z) for a in (0, 1)]
        joint_max = sum(m * (v @ cs).max() for m, v, cs in zip(obs.weight, verts, c))
        assert joint_min == pytest.approx(per[0].lo + per[1].lo, abs=1e-10)
        assert joint_max == pytest.approx(per[0].hi + per[1].hi, abs=1e-10)


def test_all_released_no_ai_collapses_bounds():
    n = 4000
    z = np.arange(n) % 2
    y = (np.arange(n) // 2) % 5 == 0  # identical outcome rate 0.2 in both arms
    ds = from_arrays(z, np.zeros(n, int), np.zeros(n, int), y.astype(int))
    fit = fit_nuisance(ds, SATURATED)
    for zz in (0, 1):
        for l01 in (0.3, 1.0, 5.0):
            b = estimate_ai_vs_human_bounds(ds, fit, zz, l01)
            assert b.lower_hat == pytest.approx(0, abs=1e-12)
            assert b.upper_hat == pytest.approx(0, abs=1e-12)
            assert b.width_formula == pytest.approx(0, abs=1e-12)


def test_table1_loss_coefficient(table1):
    counts = agreement_table(table1, 0).counts
    n0 = int(counts.sum())
    exact = Fraction(int(counts[0, 1]) - int(counts[1, 0]), n0)
    assert exact == Fraction(195 - 89, 943)
    assert round(float(exact), 4) == 0.1124
    # with arm-specific AI rates the decision terms reproduce the count contrast exactly
    arm_rate = Fraction(int(counts[:, 1].sum()), n0)
    keep_a1 = Fraction(int(counts[0, 1]), int(counts[:, 1].sum()))
    detain_a0 = Fraction(int(counts[1, 0]), int(counts[:, 0].sum()))
    assert arm_rate * keep_a1 - (1 - arm_rate) * detain_a0 == exact
    # the estimator pools P(A=1) across arms; its decision coefficient agrees within sampling error
    fit = fit_nuisance(table1, SATURATED)
    inf = bound_influences(table1, fit, 0)
    coef = inf.phiD_1 - inf.phiD_0
    se = coef.std() / np.sqrt(table1.n)
    assert abs(coef.mean() - float(exact)) < 2 * se
    for l01 in (0.5, 2.0):
        b = estimate_ai_vs_human_bounds(table1, fit, 0, l01)
        slope_lo = inf.lower_basis().mean(1.0) - inf.lower_basis().mean(0.0)
        assert b.raw_lower == pytest.approx(inf.lower_basis().mean(0) + l01 * slope_lo, abs=1e-12)


def test_cached_and_direct_bound_estimates_agree(table1):
    fit = fit_nuisance(table1)
    for z in (0, 1):
        for l01 in (0.05, 1.0, 20.0):
            a = estimate_ai_vs_human_bounds(table1, fit, z, l01)
            d = estimate_ai_vs_human_bounds_direct(table1, fit, z, l01)
            assert a.raw_lower == pytest.approx(d.raw_lower, abs=1e-10)
            assert a.raw_upper == pytest.approx(d.raw_upper, abs=1e-10)
            assert a.v_lower == pytest.approx(d.v_lower, abs=1e-10)
            assert a.v_upper == pytest.approx(d.v_upper, abs=1e-10)


def test_im_interval_definition(table1):
    b = estimate_ai_vs_human_bounds(table1, fit_nuisance(table1), 0, 1.0)
    q = normal_quantile(0.95)
    lo, hi = b.im_interval(0.05)
    assert lo == b.lower_hat - q * np.sqrt(b.v_lower / b.n)
    assert hi == b.upper_hat + q * np.sqrt(b.v_upper / b.n)
    assert set(b.to_dict()) >= {"comparison", "z", "l01", "L", "U", "se_L", "se_U", "im_low", "im_high",
                                "width", "width_formula", "flags"}


def test_missing_a_conditional_models(table1):
    from dataclasses import replace
    fit = replace(fit_nuisance(table1), mDa=None)
    with pytest.raises(MissingAConditionalFit):
        estimate_ai_vs_human_bounds(table1, fit, 0, 1.0)


@pytest.fixture(scope="module")
def population():
    pop = fixed_population()
    ds = population_dataset(pop)
    return pop, ds, fit_nuisance(ds, POPULATION_FIT)


def test_population_estimates_match_closed_form_and_width(population):
    pop, ds, fit = population
    obs = pop.observables()
    from decisioneval.bounds import ai_vs_human_population_bounds
    for z in (0, 1):
        for l01 in (0.1, 1.0, 8.0):
            b = estimate_ai_vs_human_bounds(ds, fit, z, l01)
            cf = ai_vs_human_population_bounds(obs, z, l01)
            assert b.raw_lower == pytest.approx(cf.lo, abs=1e-12)
            assert b.raw_upper == pytest.approx(cf.hi, abs=1e-12)
            assert b.raw_upper - b.raw_lower == pytest.approx(width_formula(obs, l01), abs=1e-10)
            truth = true_risk_diff(pop, "ai-human" if z == 0 else "ai-human_ai", l01)
            assert cf.lo - 1e-12 <= truth <= cf.hi + 1e-12


def test_width_nondecreasing_in_loss(table1):
    fit = fit_nuisance(table1)
    grid = np.logspace(-2, 2, 50)
    for z in (0, 1):
        w = [estimate_ai_vs_human_bounds(table1, fit, z, l).width for l in grid]
        assert np.all(np.diff(w) >= -1e-12)


def test_classifiers_pick_binding_arm(table1):
    ds = sample_dataset(make_population(SimConfig(strata=6, seed=4)), 5000, seed=2)
    fit = fit_nuisance(ds, SATURATED)
    s = ds.covariates["stratum"]
    for z in (0, 1):
        g_l, g_u = nuisance_classifiers(fit, z)
        for stratum in np.unique(s):
            rows = s == stratum
            cell = [[np.mean((ds.y[rows & (ds.z == arm) & (ds.a == 0)] == y) &
                             (ds.d[rows & (ds.z == arm) & (ds.a == 0)] == 0)) for y in (0, 1)] for arm in (0, 1)]
            other = 1 - z
            if abs(cell[other][1] - cell[z][1]) > 1e-9:
                assert np.all(g_l[rows] == float(cell[other][1] > cell[z][1]))
            if abs(cell[other][0] - cell[z][0]) > 1e-9:
                assert np.all(g_u[rows] == float(cell[other][0] > cell[z][0]))


def test_human_bounds_collapse_when_everyone_released():
    n = 2000
    z = np.arange(n) % 2
    d = np.where(z == 0, 0, (np.arange(n) // 2) % 3 == 0).astype(int)
    y = ((np.arange(n) // 2) % 4 == 0).astype(int)
    a = ((np.arange(n) // 2) % 5 == 0).astype(int)
    ds = from_arrays(z, d, a, y)
    fit = fit_nuisance(ds, SATURATED)
    p10 = np.mean(y[z == 0])
    for l01 in (0.0, 1.0, 3.0):
        b = per_system_risk_bounds(ds, fit, "human", l01)
        assert b.lo == pytest.approx(p10, abs=1e-12) and b.hi == pytest.approx(p10, abs=1e-12)
    fnr = alt_metric_bounds(ds, fit, "FNR", "human").bound
    assert (fnr.lo, fnr.hi) == pytest.approx((1.0, 1.0), abs=1e-12)
    fdr = alt_metric_bounds(ds, fit, "FDR", "human").bound
    assert "DegenerateDenominator" in fdr.flags and fdr.hi == 1.0


def test_zero_loss_human_bounds_are_points(population):
    _, ds, fit = population
    for system in ("human", "human_ai"):
        b = per_system_risk_bounds(ds, fit, system, 0.0)
        assert b.width == pytest.approx(0, abs=1e-15)


def test_ai_rule_matches_ai_system(population):
    pop, ds, fit = population
    for l01 in (0.2, 1.0, 6.0):
        g = generic_rule_risk_bounds(ds, fit, lambda a, x: a, l01)
        s = per_system_risk_bounds(ds, fit, "ai", l01)
        assert g.lo == pytest.approx(s.lo, abs=1e-10) and g.hi == pytest.approx(s.hi, abs=1e-10)


def test_never_positive_rule_bounds_outcome_prevalence(population):
    pop, _, _ = population
    obs = pop.observables()
    zero = np.zeros((obs.units, 2))
    b = generic_rule_risk_bounds_obs(obs, zero, 3.0)
    pooled_lo = obs.mean(obs.y1d0.sum(axis=2).max(axis=1))
    pooled_hi = 1 - obs.mean(obs.y0d0.sum(axis=2).max(axis=1))
    # conditioning on A can only tighten the pooled outcome bounds
    assert pooled_lo - 1e-12 <= b.lo <= b.hi <= pooled_hi + 1e-12
    lp = oracle_sharp_bounds(obs, "generic_rule", rule=zero, l01=3.0)
    assert (b.lo, b.hi) == pytest.approx((lp.lo, lp.hi), abs=1e-10)


def test_rule_range_error(population):
    _, ds, fit = population
    with pytest.raises(RuleRangeError):
        generic_rule_risk_bounds(ds, fit, lambda a, x: 1.5, 1.0)


@settings(max_examples=60)
@given(st.integers(0, 10**6), st.floats(0.01, 50))
def test_closed_forms_are_valid_and_sharp(seed, l01):
    pop = make_population(SimConfig(strata=int(seed % 4) + 1, seed=seed, zero_prob=0.2 if seed % 2 else 0.0))
    obs = pop.observables()
    verts = feasible_vertices(obs)
    for system in ("human", "human_ai", "ai"):
        cf = system_risk_bounds(obs, system, l01)
        lp = oracle_sharp_bounds(obs, "system_risk", vertices=verts, system=system, l01=l01)
        assert (cf.lo, cf.hi) == pytest.approx((lp.lo, lp.hi), abs=1e-8)
        for metric in ("FNR", "FPR", "FDR"):
            cf = alt_metric_bounds_obs(obs, metric, system)
            lp = oracle_sharp_bounds(obs, "metric", vertices=verts, metric=metric, system=system)
            assert (cf.lo, cf.hi) == pytest.approx((lp.lo, lp.hi), abs=1e-8)


def test_alt_metric_resampling(table1):
    fit = fit_nuisance(table1)
    r = alt_metric_bounds(table1, fit, "FNR", "ai", resamples=30, seed=3)
    again = alt_metric_bounds(table1, fit, "FNR", "ai", resamples=30, seed=3)
    assert r.resampled == again.resampled
    (lo_a, lo_b), (hi_a, hi_b) = r.resampled
    assert lo_a <= lo_b and hi_a <= hi_b


def test_interval_bound_flags_crossing():
    assert "crossed" in IntervalBound(0.5, 0.1).flags
    assert IntervalBound(0.1, 0.5).contains(0.3)
