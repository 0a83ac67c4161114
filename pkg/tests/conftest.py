import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from decisioneval.core import from_arrays, validate_dataset
from decisioneval.fixtures import table1_path
from decisioneval.nuisance import NuisanceConfig
from decisioneval.oracle import SimConfig, make_population

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# in-sample saturated fits: the estimators reduce to exact plug-in forms
SATURATED = NuisanceConfig(smoothing=0.0, folds=1)


@pytest.fixture(scope="session")
def table1():
    return validate_dataset(table1_path())


@pytest.fixture(scope="session")
def null_pop():
    return make_population(SimConfig(kind="null", strata=4, seed=11))


def records(rows, **extra):
    """Dataset from (z, d, a, y) tuples."""
    z, d, a, y = (np.array(c) for c in zip(*rows))
    return from_arrays(z, d, a, y, **extra)
