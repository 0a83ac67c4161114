from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from decisioneval.core import from_arrays
from decisioneval.errors import ConfigError, EmptyCell, MissingScoreContext
from decisioneval.nuisance import NuisanceConfig, fit_logistic, fit_nuisance, predict
from decisioneval.oracle import SimConfig, make_population, sample_dataset

from conftest import SATURATED, records


def keyed(ds):
    """Copy of ``ds`` with explicit record keys so folds survive reordering."""
    return from_arrays(ds.z, ds.d, ds.a, ds.y,
                       covariates={c: [ds.levels[c][v] for v in ds.covariates[c]] for c in ds.covariates},
                       keys=[f"k{i}" for i in range(ds.n)])


@pytest.fixture(scope="module")
def sample():
    pop = make_population(SimConfig(kind="random", strata=4, seed=3))
    return keyed(sample_dataset(pop, 600, seed=5))


def test_known_propensity_is_constant(sample):
    fit = fit_nuisance(sample)
    assert np.all(fit.e1 == 0.5)
    assert predict(fit, "e", 17, z=1) == 0.5
    assert predict(fit, "e", 17, z=0) == 0.5


def test_saturated_decision_frequency():
    ds = records([(1, 1, 0, 0), (1, 1, 1, 0), (1, 1, 0, 1), (1, 0, 1, 1), (0, 0, 0, 1), (0, 1, 0, 0)])
    fit = fit_nuisance(ds, SATURATED)
    assert predict(fit, "mD", 0, z=1) == 0.75
    assert predict(fit, "mD", 4, z=0) == 0.5


def test_outcome_model_is_one_when_every_release_has_y1():
    ds = records([(1, 0, 0, 1), (1, 0, 1, 1), (1, 1, 0, 0), (0, 0, 0, 0), (0, 1, 1, 1)])
    fit = fit_nuisance(ds, SATURATED)
    assert np.all(fit.mY[1] == 1.0)


def test_estimated_propensity_is_clipped():
    z = [1] * 999 + [0]
    ds = from_arrays(z, [0] * 1000, [0] * 1000, [0] * 1000)
    fit = fit_nuisance(ds, NuisanceConfig(propensity_mode="estimated", smoothing=0.0, folds=1, clip_eta=0.01))
    assert predict(fit, "e", 0, z=1) == 0.99
    assert fit.diagnostics["clipped_propensity"] == 1000


def test_missing_context():
    ds = records([(1, 0, 0, 1), (0, 1, 1, 0)])
    fit = fit_nuisance(ds, SATURATED)
    with pytest.raises(MissingScoreContext):
        predict(fit, "mDa", 0, z=1)
    with pytest.raises(MissingScoreContext):
        predict(fit, "mY", 0)
    with pytest.raises(ConfigError):
        predict(fit, "mQ", 0, z=1)


def test_empty_cell_without_smoothing():
    ds = from_arrays([0, 1, 0], [0, 0, 1], [0, 0, 0], [0, 1, 0], covariates={"g": ["p", "p", "q"]})
    with pytest.raises(EmptyCell):
        fit_nuisance(ds, SATURATED)
    fit_nuisance(ds, NuisanceConfig(smoothing=0.5, folds=1))


def test_config_validation():
    with pytest.raises(ConfigError):
        NuisanceConfig(clip_eta=0.5)
    with pytest.raises(ConfigError):
        NuisanceConfig(folds=0)
    with pytest.raises(ConfigError):
        fit_nuisance(records([(0, 0, 0, 0), (1, 0, 0, 0)]), NuisanceConfig(folds=3))


def test_predictions_are_probabilities(sample):
    fit = fit_nuisance(sample, NuisanceConfig(propensity_mode="estimated"))
    for arr in (fit.mD, fit.mY, fit.mDa, fit.mYa, fit.mA, fit.mA_arm):
        assert np.all((arr >= 0) & (arr <= 1))
    assert np.all((fit.e1 >= 0.01) & (fit.e1 <= 0.99))


def test_mixture_consistency(sample):
    fit = fit_nuisance(sample, SATURATED)
    for z in (0, 1):
        mix = fit.mA_arm[z] * fit.mDa[z, 1] + (1 - fit.mA_arm[z]) * fit.mDa[z, 0]
        assert np.max(np.abs(mix - fit.mD[z])) < 1e-10


def test_permutation_invariance(sample):
    fit = fit_nuisance(sample)
    perm = np.random.default_rng(0).permutation(sample.n)
    shuffled = from_arrays(sample.z[perm], sample.d[perm], sample.a[perm], sample.y[perm],
                           covariates={"stratum": [sample.levels["stratum"][v] for v in sample.covariates["stratum"][perm]]},
                           keys=[sample.keys[i] for i in perm])
    fit2 = fit_nuisance(shuffled)
    assert np.array_equal(fit.folds[perm], fit2.folds)
    for name in ("mD", "mY", "mDa", "mYa"):
        assert np.array_equal(getattr(fit, name)[..., perm], getattr(fit2, name))


def test_out_of_fold_discipline(sample):
    fit = fit_nuisance(sample)
    i = 0
    same = np.flatnonzero((fit.folds == fit.folds[i]) & (np.arange(sample.n) != i))
    other = np.flatnonzero(fit.folds != fit.folds[i])
    for drop, should_match in ((same, True), (other, False)):
        changed = False
        for j in drop[:25]:
            keep = np.arange(sample.n) != j
            sub = sample.subset(keep)
            fit2 = fit_nuisance(sub)
            k = int(np.flatnonzero(keep[: i + 1]).size - 1)
            assert fit2.folds[k] == fit.folds[i]
            pair = (fit.mD[:, i], fit2.mD[:, k], fit.mYa[:, :, i], fit2.mYa[:, :, k])
            differs = not (np.array_equal(pair[0], pair[1]) and np.array_equal(pair[2], pair[3]))
            if should_match:
                assert not differs
            changed |= differs
        if not should_match:
            assert changed


def test_stratified_frequencies_converge():
    # balanced cells: about 12500 records per stratum and arm
    base = make_population(SimConfig(kind="random", strata=4, concentration=2.0, seed=9))
    pop = replace(base, mass=np.full(4, 0.25), e1=np.full(4, 0.5))
    ds = sample_dataset(pop, 100000, seed=1)
    fit = fit_nuisance(ds)
    s = ds.covariates["stratum"]
    for z in (0, 1):
        t = pop.arm_table(z)  # [s, a, d, y]
        true_mD = t[:, :, 1, :].sum(axis=(1, 2))
        true_mY = t[:, :, 0, 1].sum(axis=1) / t[:, :, 0, :].sum(axis=(1, 2))
        assert np.max(np.abs(fit.mD[z] - true_mD[s])) < 0.02
        assert np.max(np.abs(fit.mY[z] - true_mY[s])) < 0.02
        true_mDa = t[:, :, 1, :].sum(axis=2) / t.sum(axis=(2, 3))
        for a in (0, 1):
            assert np.max(np.abs(fit.mDa[z, a] - true_mDa[s, a])) < 0.02


def test_ai_rate_diagnostic_flags_nothing_when_a_is_independent_of_arm(sample):
    diag = fit_nuisance(sample).diagnostics["a_arm_consistency"]
    assert not diag["flag"]
    assert diag["df"] == 4


def test_logistic_matches_frequencies_on_saturated_design(sample):
    freq = fit_nuisance(sample, SATURATED)
    logi = fit_nuisance(sample, NuisanceConfig(model_kind="logistic", folds=1, ridge=0.0))
    assert np.max(np.abs(freq.mD - logi.mD)) < 1e-6
    assert np.max(np.abs(freq.mY - logi.mY)) < 1e-6


@given(st.integers(0, 2**31 - 1))
def test_logistic_reaches_stationary_point(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(200), rng.integers(0, 2, size=(200, 3))])
    y = (rng.random(200) < 0.3 + 0.3 * X[:, 1]).astype(float)
    w = np.ones(200)
    beta = fit_logistic(X, y, w, 1e-4, 100)
    mu = 1 / (1 + np.exp(-X @ beta))
    pen = np.full(4, 1e-4)
    pen[0] = 0
    assert np.linalg.norm(X.T @ (mu - y) / 200 + pen * beta) <= 1e-8
