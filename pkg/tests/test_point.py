from dataclasses import replace

import numpy as np
import pytest

from decisioneval.core import LossSpec, Subgroup, from_arrays
from decisioneval.errors import EmptyArm, EmptySubgroup
from decisioneval.nuisance import NuisanceConfig, fit_nuisance
from decisioneval.oracle import (
    POPULATION_FIT,
    SimConfig,
    fixed_population,
    make_population,
    population_dataset,
    sample_dataset,
    true_risk_diff,
)
from decisioneval.point import (
    estimate_fnp,
    estimate_generic_loss_difference,
    estimate_metric_difference,
    estimate_risk_difference,
    estimate_risk_difference_direct,
    influence_human,
    normal_quantile,
    subgroup_analysis,
)

from conftest import SATURATED, records

ESTIMATED = NuisanceConfig(propensity_mode="estimated")


@pytest.fixture(scope="module")
def sample():
    return sample_dataset(fixed_population(), 3000, seed=4)


@pytest.fixture(scope="module")
def sample_fit(sample):
    return fit_nuisance(sample, ESTIMATED)


def test_symmetric_arms_give_zero():
    ds = records([(1, 0, 0, 1), (1, 1, 0, 0), (0, 0, 0, 1), (0, 1, 0, 0)])
    fit = fit_nuisance(ds, SATURATED)
    for l01 in (0.0, 0.5, 1.0, 7.0):
        assert estimate_risk_difference(ds, fit, l01).beta_hat == 0.0


def test_influence_off_arm_is_regression_term(sample, sample_fit):
    for z in (0, 1):
        off = sample.z != z
        g = 2.5 * sample_fit.mY[z] - 1.5
        expected = (1 - sample_fit.mD[z]) * g
        assert np.allclose(influence_human(sample, sample_fit, z, 1.5)[off], expected[off], rtol=0, atol=1e-15)


def test_influence_mean_collapses_to_plugin():
    ds = sample_dataset(make_population(SimConfig(strata=1, seed=2)), 400, seed=1)
    fit = fit_nuisance(ds, SATURATED)
    for z in (0, 1):
        arm = ds.z == z
        p_y1d0 = np.mean((ds.y == 1) & (ds.d == 0) & arm) / arm.mean()
        p_y0d0 = np.mean((ds.y == 0) & (ds.d == 0) & arm) / arm.mean()
        for l01 in (0.0, 0.7, 3.0):
            assert influence_human(ds, fit, z, l01).mean() == pytest.approx(p_y1d0 - l01 * p_y0d0, abs=1e-10)


def test_zero_loss_influence_is_aipw_of_released_positives(sample, sample_fit):
    for z in (0, 1):
        e = sample_fit.e(z)
        m = (1 - sample_fit.mD[z]) * sample_fit.mY[z]
        w = sample.y * (1 - sample.d)
        aipw = m + (sample.z == z) / e * (w - m)
        assert np.max(np.abs(influence_human(sample, sample_fit, z, 0.0) - aipw)) < 1e-12


def test_difference_in_means_of_compound_outcome(sample):
    fit = fit_nuisance(sample, NuisanceConfig(smoothing=0.0, folds=1, stratify_by=()))
    for l01 in (0.0, 1.0, 4.0):
        w = sample.y * (1 - sample.d) - l01 * (1 - sample.y) * (1 - sample.d)
        dim = w[sample.z == 1].mean() - w[sample.z == 0].mean()
        assert estimate_risk_difference(sample, fit, l01).beta_hat == pytest.approx(dim, abs=1e-10)


def test_variance_and_ci_identities(sample, sample_fit):
    est = estimate_risk_difference(sample, sample_fit, 1.3)
    assert est.variance_hat == pytest.approx(np.mean(est.influence ** 2), abs=1e-12)
    lo, hi = est.ci(0.05)
    q = normal_quantile(0.975)
    assert lo == pytest.approx(est.beta_hat - q * np.sqrt(est.variance_hat / sample.n), abs=1e-15)
    assert hi == pytest.approx(est.beta_hat + q * np.sqrt(est.variance_hat / sample.n), abs=1e-15)


def test_affine_in_loss(sample, sample_fit):
    b = [estimate_risk_difference(sample, sample_fit, l).beta_hat for l in (0.0, 1.0, 2.0)]
    assert b[2] - b[1] == pytest.approx(b[1] - b[0], abs=1e-10)


def test_cached_basis_matches_direct(sample, sample_fit):
    for l01 in (0.01, 0.5, 9.0):
        a = estimate_risk_difference(sample, sample_fit, l01)
        d = estimate_risk_difference_direct(sample, sample_fit, l01)
        assert a.beta_hat == pytest.approx(d.beta_hat, abs=1e-12)
        assert a.variance_hat == pytest.approx(d.variance_hat, abs=1e-12)


def test_metric_decomposition(sample, sample_fit):
    mis = estimate_metric_difference(sample, sample_fit, "misclass_diff")
    fnp = estimate_metric_difference(sample, sample_fit, "FNP_diff")
    fpp = estimate_metric_difference(sample, sample_fit, "FPP_diff")
    assert mis.beta_hat == estimate_risk_difference(sample, sample_fit, 1.0).beta_hat
    assert fnp.beta_hat + fpp.beta_hat == pytest.approx(mis.beta_hat, abs=1e-10)
    assert fnp.beta_hat == pytest.approx(
        estimate_fnp(sample, sample_fit, 1).beta_hat - estimate_fnp(sample, sample_fit, 0).beta_hat, abs=1e-12)


def test_generic_loss_reductions(sample, sample_fit):
    for l01 in (0.2, 1.0, 3.0):
        g = estimate_generic_loss_difference(sample, sample_fit, 0.0, l01, 0.0)
        assert g.beta_hat == estimate_risk_difference(sample, sample_fit, l01).beta_hat
        z = estimate_generic_loss_difference(sample, sample_fit, l01, l01, 1.0)
        assert z.beta_hat == 0.0 and z.variance_hat == 0.0


def test_population_level_estimates_are_exact():
    pop = fixed_population()
    ds = population_dataset(pop)
    fit = fit_nuisance(ds, POPULATION_FIT)
    for loss in (LossSpec(0.4), LossSpec(2.0, l00=0.3, l11=0.1)):
        est = estimate_generic_loss_difference(ds, fit, loss.l00, loss.l01, loss.l11)
        assert est.beta_hat == pytest.approx(true_risk_diff(pop, "human_ai-human", loss), abs=1e-12)


def test_empty_arm():
    ds = from_arrays([1, 1], [0, 1], [0, 1], [1, 0], check_arms=False)
    fit = fit_nuisance(ds, NuisanceConfig(folds=1))
    with pytest.raises(EmptyArm):
        estimate_risk_difference(ds, fit, 1.0)


def test_subgroups(sample):
    ds = from_arrays(sample.z, sample.d, sample.a, sample.y,
                     covariates={"stratum": [sample.levels["stratum"][v] for v in sample.covariates["stratum"]],
                                 "g": np.where(np.arange(sample.n) % 3 == 0, "u", "v")})
    fit = fit_nuisance(ds, SATURATED)
    est = lambda d, f: estimate_risk_difference(d, f, 1.0)
    whole = est(ds, fit)
    assert subgroup_analysis(ds, lambda d: np.ones(d.n, bool), est, fit, refit=False).beta_hat == whole.beta_hat
    assert subgroup_analysis(ds, lambda d: np.ones(d.n, bool), est, cfg=SATURATED).beta_hat == \
        pytest.approx(whole.beta_hat, abs=1e-15)
    parts = [subgroup_analysis(ds, Subgroup.parse(n, f"g={n}"), est, fit, refit=False) for n in ("u", "v")]
    assert parts[0].subgroup == "u"
    avg = sum(p.n * p.beta_hat for p in parts) / ds.n
    assert avg == pytest.approx(whole.beta_hat, abs=1e-10)
    with pytest.raises(EmptySubgroup):
        subgroup_analysis(ds, lambda d: np.zeros(d.n, bool), est, fit)
    with pytest.raises(EmptySubgroup):
        subgroup_analysis(ds, lambda d: d.z == 1, est, fit)


def test_null_population_estimate_vanishes():
    pop = make_population(SimConfig(kind="null", strata=4, seed=21))
    ds = sample_dataset(pop, 50000, seed=3)
    fit = fit_nuisance(ds, ESTIMATED)
    assert abs(estimate_risk_difference(ds, fit, 1.0).beta_hat) < 0.01


def test_double_robustness_with_corrupted_outcome_models():
    pop = make_population(SimConfig(kind="null", strata=4, seed=21))
    ds = sample_dataset(pop, 50000, seed=6)
    fit = fit_nuisance(ds, ESTIMATED)
    rng = np.random.default_rng(0)
    bad = replace(fit, mD=np.clip(fit.mD + rng.uniform(-0.3, 0.3, fit.mD.shape), 0, 1),
                  mY=np.clip(1 - fit.mY, 0, 1))
    assert abs(estimate_risk_difference(ds, bad, 1.0).beta_hat) < 0.02


def test_ci_width_scales_with_root_n():
    pop = fixed_population()
    widths = []
    for n in (2000, 8000, 32000):
        ds = sample_dataset(pop, n, seed=n)
        fit = fit_nuisance(ds, ESTIMATED)
        lo, hi = estimate_risk_difference(ds, fit, 1.0).ci()
        widths.append(hi - lo)
    for a, b in zip(widths, widths[1:]):
        assert abs(a / b / 2 - 1) < 0.15


def test_replicates_cover_truth():
    pop = fixed_population()
    generic = LossSpec(1.5, l00=0.2, l11=0.3)
    truth = true_risk_diff(pop, "human_ai-human", 1.0)
    truth_generic = true_risk_diff(pop, "human_ai-human", generic)
    hits = hits_generic = 0
    for rep in range(200):
        ds = sample_dataset(pop, 20000, seed=1000 + rep)
        fit = fit_nuisance(ds, ESTIMATED)
        est = estimate_risk_difference(ds, fit, 1.0)
        hits += abs(est.beta_hat - truth) <= 3 * est.se
        g = estimate_generic_loss_difference(ds, fit, generic.l00, generic.l01, generic.l11)
        hits_generic += abs(g.beta_hat - truth_generic) <= 3 * g.se
    assert hits >= 198 and hits_generic >= 198


def test_null_metric_coverage():
    pop = make_population(SimConfig(kind="null", strata=4, seed=21))
    cover = {m: 0 for m in ("FNP_diff", "FPP_diff", "misclass_diff")}
    reps = 1000
    for rep in range(reps):
        ds = sample_dataset(pop, 2000, seed=50000 + rep)
        fit = fit_nuisance(ds, ESTIMATED)
        for m in cover:
            lo, hi = estimate_metric_difference(ds, fit, m).ci()
            cover[m] += lo <= 0 <= hi
    for m, c in cover.items():
        assert abs(c / reps - 0.95) <= 0.03, (m, c)
