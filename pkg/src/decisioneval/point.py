"""AIPW estimation of risk differences between human-alone and human-with-AI systems.

All influence values are affine in the false-positive loss ``l01``; an
:class:`AffineInfluence` stores the two per-record basis arrays so that any
``l01`` can be evaluated without refitting or recomputing nuisance terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import stats

from .core import Dataset, LossSpec, Subgroup
from .errors import ConfigError, EmptySubgroup
from .nuisance import NuisanceConfig, NuisanceFit, fit_nuisance

METRICS = ("FNP_diff", "FPP_diff", "misclass_diff")


def normal_quantile(p: float) -> float:
    return float(stats.norm.ppf(p))


@dataclass(frozen=True, eq=False)
class AffineInfluence:
    """Per-record uncentered influence values ``base + l01 * slope``."""

    base: np.ndarray
    slope: np.ndarray
    weights: np.ndarray

    def values(self, l01: float) -> np.ndarray:
        return self.base + l01 * self.slope

    def mean(self, l01: float) -> float:
        w = self.weights
        return float((w * self.base).sum() / w.sum() + l01 * (w * self.slope).sum() / w.sum())

    def moments(self) -> tuple[float, float, float]:
        """Variance of base, covariance, variance of slope (n-denominator)."""
        w = self.weights / self.weights.sum()
        b = self.base - (w * self.base).sum()
        s = self.slope - (w * self.slope).sum()
        return float((w * b * b).sum()), float((w * b * s).sum()), float((w * s * s).sum())

    def variance(self, l01: float) -> float:
        vb, c, vs = self.moments()
        return max(vb + 2 * l01 * c + l01 * l01 * vs, 0.0)

    def combine(self, other: "AffineInfluence", sign: float = 1.0) -> "AffineInfluence":
        return AffineInfluence(self.base + sign * other.base, self.slope + sign * other.slope, self.weights)


def variance_of(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Weighted mean and n-denominator variance."""
    w = weights / weights.sum()
    m = float((w * values).sum())
    return m, float((w * (values - m) ** 2).sum())


@dataclass(frozen=True, eq=False)
class RiskDiffEstimate:
    """Point estimate of an identified contrast with its asymptotic variance.

    ``variance_hat`` is the variance of sqrt(n) * beta_hat, estimated as the
    mean squared centered influence value.
    """

    metric: str
    l01: float | None
    beta_hat: float
    variance_hat: float
    n: float
    influence: np.ndarray = field(repr=False)
    subgroup: str | None = None

    @property
    def se(self) -> float:
        return math.sqrt(self.variance_hat / self.n)

    def ci(self, alpha: float = 0.05) -> tuple[float, float]:
        q = normal_quantile(1 - alpha / 2)
        return self.beta_hat - q * self.se, self.beta_hat + q * self.se

    def to_dict(self, alpha: float = 0.05) -> dict[str, Any]:
        lo, hi = self.ci(alpha)
        return {
            "metric": self.metric,
            "l01": self.l01,
            "beta_hat": self.beta_hat,
            "se": self.se,
            "ci_low": lo,
            "ci_high": hi,
            "n": self.n,
            "subgroup": self.subgroup,
        }


def _estimate(metric: str, l01: float | None, values: np.ndarray, ds: Dataset, subgroup=None) -> RiskDiffEstimate:
    mean, var = variance_of(values, ds.w)
    return RiskDiffEstimate(
        metric=metric, l01=l01, beta_hat=mean, variance_hat=var,
        n=ds.total_weight, influence=values - mean, subgroup=subgroup,
    )


def influence_human(ds: Dataset, fit: NuisanceFit, z: int, l01: float) -> np.ndarray:
    """Uncentered AIPW influence values of E[Y(1 - D) - l01 (1 - Y)(1 - D) | Z = z] per record."""
    mD, mY, e = fit.mD[z], fit.mY[z], fit.e(z)
    ind = (ds.z == z).astype(float)
    d, y = ds.d.astype(float), ds.y.astype(float)
    g = (1 + l01) * mY - l01
    return (1 - mD) * g + (1 + l01) * ind * (1 - d) / e * (y - mY) - g * ind / e * (d - mD)


def human_basis(ds: Dataset, fit: NuisanceFit, z: int) -> AffineInfluence:
    """Affine basis of :func:`influence_human` in ``l01``."""
    base = influence_human(ds, fit, z, 0.0)
    mD, mY, e = fit.mD[z], fit.mY[z], fit.e(z)
    ind = (ds.z == z).astype(float)
    d, y = ds.d.astype(float), ds.y.astype(float)
    # d/d(l01) of the influence value; equals minus the AIPW term for (1-Y)(1-D)
    slope = (1 - mD) * (mY - 1) + ind * (1 - d) / e * (y - mY) - (mY - 1) * ind / e * (d - mD)
    return AffineInfluence(base, slope, ds.w)


def difference_basis(ds: Dataset, fit: NuisanceFit) -> AffineInfluence:
    """Basis for phi_1 - phi_0 (human-with-AI minus human-alone)."""
    return human_basis(ds, fit, 1).combine(human_basis(ds, fit, 0), -1.0)


def _check(ds: Dataset, fit: NuisanceFit) -> None:
    ds.require_both_arms("point estimation")
    if fit.n != ds.n:
        raise ConfigError("nuisance fit does not match the dataset")


def estimate_generic_loss_difference(
    ds: Dataset, fit: NuisanceFit, l00: float, l01: float, l11: float,
    basis: AffineInfluence | None = None, subgroup: str | None = None,
) -> RiskDiffEstimate:
    """Risk difference (human+AI minus human) under a generic loss.

    Uses (1 - l11) * (FNP difference) + (l01 - l00) * (FPP difference), the
    latter identified as minus the TNP difference.
    """
    LossSpec(l01=l01, l00=l00, l11=l11)
    _check(ds, fit)
    basis = basis or difference_basis(ds, fit)
    values = (1 - l11) * basis.base + (l01 - l00) * basis.slope
    metric = "risk_diff" if (l00, l11) == (0, 0) else "generic_risk_diff"
    return _estimate(metric, l01, values, ds, subgroup)


def estimate_risk_difference(
    ds: Dataset, fit: NuisanceFit, loss: LossSpec | float,
    basis: AffineInfluence | None = None, subgroup: str | None = None,
) -> RiskDiffEstimate:
    """R_human+AI(l01) - R_human(l01) with its AIPW variance."""
    if not isinstance(loss, LossSpec):
        loss = LossSpec(float(loss))
    return estimate_generic_loss_difference(ds, fit, loss.l00, loss.l01, loss.l11, basis, subgroup)


def estimate_risk_difference_direct(ds: Dataset, fit: NuisanceFit, l01: float) -> RiskDiffEstimate:
    """Same as :func:`estimate_risk_difference`, recomputing influence values at ``l01``."""
    _check(ds, fit)
    values = influence_human(ds, fit, 1, l01) - influence_human(ds, fit, 0, l01)
    return _estimate("risk_diff", l01, values, ds)


def estimate_metric_difference(
    ds: Dataset, fit: NuisanceFit, metric: str, subgroup: str | None = None,
) -> RiskDiffEstimate:
    """Difference in FNP, FPP or misclassification rate (human+AI minus human)."""
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {METRICS}")
    _check(ds, fit)
    basis = difference_basis(ds, fit)
    if metric == "FNP_diff":
        return _estimate(metric, 0.0, basis.base, ds, subgroup)
    if metric == "FPP_diff":
        return _estimate(metric, None, basis.slope, ds, subgroup)
    return _estimate(metric, 1.0, basis.base + basis.slope, ds, subgroup)


def estimate_fnp(ds: Dataset, fit: NuisanceFit, z: int) -> RiskDiffEstimate:
    """False-negative proportion p10(D(z)) of one human system (identified)."""
    _check(ds, fit)
    return _estimate(f"FNP_arm{z}", 0.0, influence_human(ds, fit, z, 0.0), ds)


def subgroup_analysis(
    ds: Dataset,
    predicate: Subgroup | Callable[[Dataset], np.ndarray],
    estimator: Callable[[Dataset, NuisanceFit], Any],
    fit: NuisanceFit | None = None,
    cfg: NuisanceConfig | None = None,
    refit: bool = True,
):
    """Run ``estimator`` on the records selected by ``predicate``.

    With ``refit=True`` (default) nuisance models are refitted within the
    subgroup using ``cfg``; otherwise the shared ``fit`` is subset.
    """
    mask = predicate.mask(ds) if isinstance(predicate, Subgroup) else np.asarray(predicate(ds), dtype=bool)
    name = predicate.name if isinstance(predicate, Subgroup) else getattr(predicate, "__name__", None)
    if not np.any(mask):
        raise EmptySubgroup(f"subgroup {name!r} matches no records")
    sub = ds.subset(mask)
    for arm in (0, 1):
        if not np.any(sub.z == arm):
            raise EmptySubgroup(f"subgroup {name!r} has no records in arm {arm}")
    if mask.all() and not refit and fit is not None:
        sub_fit = fit
    elif refit:
        sub_fit = fit_nuisance(sub, cfg or (fit.config if fit is not None else None))
    else:
        if fit is None:
            raise ConfigError("refit=False requires a shared nuisance fit")
        sub_fit = fit.subset(mask)
    result = estimator(sub, sub_fit)
    if isinstance(result, RiskDiffEstimate) and name is not None:
        object.__setattr__(result, "subgroup", name)
    return result
