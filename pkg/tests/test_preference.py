import numpy as np
import pytest

from decisioneval.core import from_arrays
from decisioneval.errors import ConfigError
from decisioneval.nuisance import fit_nuisance
from decisioneval.oracle import SimConfig, make_population, sample_dataset
from decisioneval.preference import (
    AMBIGUOUS,
    COMPARISONS,
    PreferenceRegion,
    default_grid,
    direct_statistics,
    invert_preference,
    preference_statistics,
    render_region,
)

from conftest import SATURATED


@pytest.fixture(scope="module")
def ai_worse():
    ds = sample_dataset(make_population(SimConfig(kind="ai_worse", strata=4, seed=8)), 50000, seed=8)
    return ds, fit_nuisance(ds)


def test_default_grid():
    g = default_grid()
    assert len(g) == 400 and g[0] == pytest.approx(0.01) and g[-1] == pytest.approx(100)
    assert np.allclose(np.diff(np.log(g)), np.log(1e4) / 399)


def test_ai_worse_prefers_human_alone(ai_worse):
    ds, fit = ai_worse
    region = invert_preference(ds, fit, "human_vs_humanAI")
    labels = np.array(region.labels)
    assert np.all(labels[region.grid >= 1] == "prefer_human")
    assert len(region.labels) == len(region.grid) == 400
    assert region.to_dict()["grid"] == "400 log-spaced in [0.01,100]"


def test_label_exclusivity_and_runs(ai_worse):
    ds, fit = ai_worse
    for comparison in COMPARISONS:
        region = invert_preference(ds, fit, comparison)
        runs = region.runs()
        assert sum(np.sum((region.grid >= lo) & (region.grid <= hi)) for _, lo, hi in runs) == len(region.grid)
        rebuilt = [lab for lab, lo, hi in runs for g in region.grid if lo <= g <= hi]
        assert tuple(rebuilt) == region.labels


def test_zero_statistics_never_reject():
    n = 2000
    z = np.arange(n) % 2
    y = ((np.arange(n) // 2) % 4 == 0).astype(int)
    ds = from_arrays(z, np.zeros(n, int), np.zeros(n, int), y)
    fit = fit_nuisance(ds, SATURATED)
    for comparison in COMPARISONS:
        region = invert_preference(ds, fit, comparison)
        assert set(region.labels) == {AMBIGUOUS}


def test_cached_statistics_match_direct(ai_worse):
    ds, fit = ai_worse
    rng = np.random.default_rng(2)
    grid = np.sort(10 ** rng.uniform(-2, 2, 50))
    for comparison in COMPARISONS:
        cached = preference_statistics(ds, fit, comparison, grid)
        for k, l01 in enumerate(grid):
            direct = direct_statistics(ds, fit, comparison, l01)
            for c, d in zip(cached, direct):
                assert c[k] == pytest.approx(d, abs=1e-10)


def test_grid_refinement_keeps_labels(ai_worse):
    ds, fit = ai_worse
    coarse = np.logspace(-2, 2, 51)
    fine = np.logspace(-2, 2, 101)
    for comparison in COMPARISONS:
        a = invert_preference(ds, fit, comparison, grid=coarse)
        b = invert_preference(ds, fit, comparison, grid=fine)
        assert a.labels == b.labels[::2]


def test_grid_and_alpha_validation(ai_worse):
    ds, fit = ai_worse
    with pytest.raises(ConfigError):
        invert_preference(ds, fit, "human_vs_humanAI", grid=[1.0, 0.5])
    with pytest.raises(ConfigError):
        invert_preference(ds, fit, "human_vs_humanAI", grid=[0.0, 1.0])
    with pytest.raises(ConfigError):
        invert_preference(ds, fit, "human_vs_humanAI", alpha=0.5)
    with pytest.raises(ConfigError):
        invert_preference(ds, fit, "robot_vs_human")


def test_threshold_and_render():
    grid = np.array([0.1, 1.0, 2.0, 5.0])
    zeros = np.zeros(4)
    region = PreferenceRegion("ai_vs_human", 0.05, grid,
                              ("ambiguous", "prefer_human", "prefer_human", "ambiguous"), zeros, zeros, zeros, zeros)
    assert region.threshold("prefer_human") == 1.0
    assert region.fraction(AMBIGUOUS) == 0.5
    assert region.runs() == [("ambiguous", 0.1, 0.1), ("prefer_human", 1.0, 2.0), ("ambiguous", 5.0, 5.0)]
    text = render_region(region.to_dict())
    assert "prefer_human" in text and "prefer_ai" in text
