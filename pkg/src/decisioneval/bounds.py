"""Sharp bounds for quantities involving the AI-alone system.

The only unidentified quantities are, per covariate stratum ``x``,

    q_a(x) = P(Y(0) = 1, A = a | X = x),      a = 0, 1,

each confined to

    [max_z P(Y=1, D=0, A=a | Z=z, x),  P(A=a | x) - max_z P(Y=0, D=0, A=a | Z=z, x)]

independently across ``a``.  Every closed form below is a function of these
intervals and of identified cell probabilities, all held by
:class:`Observables`.  Observables come either from a population (exact) or
from a nuisance fit (per-record plug-in).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .core import Dataset, LossSpec
from .errors import ConfigError, IncoherentInput, MissingAConditionalFit, RuleRangeError
from .nuisance import NuisanceConfig, NuisanceFit, fit_nuisance
from .point import AffineInfluence, influence_human, normal_quantile, variance_of

COHERENCE_TOL = 1e-9
SYSTEMS = ("human", "human_ai", "ai")
ALT_METRICS = ("FNR", "FPR", "FDR")


@dataclass(frozen=True)
class IntervalBound:
    lo: float
    hi: float
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.lo > self.hi + 1e-12 and "crossed" not in self.flags:
            object.__setattr__(self, "flags", self.flags + ("crossed",))

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= value <= self.hi + tol

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def to_dict(self) -> dict[str, Any]:
        return {"lo": self.lo, "hi": self.hi, "flags": list(self.flags)}


@dataclass(frozen=True, eq=False)
class Observables:
    """Identified cell probabilities per unit (stratum or record).

    Arrays are indexed ``[unit, z, a]``; ``pa`` is ``[unit, a]``.
    """

    weight: np.ndarray
    e1: np.ndarray
    y1d0: np.ndarray   # P(Y=1, D=0, A=a | Z=z, x)
    y0d0: np.ndarray   # P(Y=0, D=0, A=a | Z=z, x)
    d1: np.ndarray     # P(D=1, A=a | Z=z, x)
    pa: np.ndarray     # P(A=a | x)
    covariates: Sequence[Mapping[str, Any]] | None = None

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        object.__setattr__(self, "weight", w / w.sum())

    @property
    def units(self) -> int:
        return int(self.weight.shape[0])

    def check(self) -> None:
        """Raise IncoherentInput unless every block is a proper distribution."""
        for name in ("y1d0", "y0d0", "d1", "pa"):
            arr = getattr(self, name)
            if np.any(arr < -COHERENCE_TOL) or np.any(arr > 1 + COHERENCE_TOL):
                raise IncoherentInput(f"{name} has entries outside [0, 1]")
        cell = self.y1d0 + self.y0d0 + self.d1
        if np.any(np.abs(cell - self.pa[:, None, :]) > COHERENCE_TOL):
            raise IncoherentInput("arm-conditional cells do not add up to P(A=a | x)")
        if np.any(np.abs(self.pa.sum(axis=1) - 1) > COHERENCE_TOL):
            raise IncoherentInput("P(A | x) does not sum to one")

    def mean(self, per_unit: np.ndarray) -> float:
        return float(self.weight @ per_unit)

    # identified per-arm aggregates
    def fnp(self, z: int) -> float:
        return self.mean(self.y1d0[:, z, :].sum(axis=1))

    def tnp(self, z: int) -> float:
        return self.mean(self.y0d0[:, z, :].sum(axis=1))

    def decision_rate(self, z: int) -> float:
        return self.mean(self.d1[:, z, :].sum(axis=1))

    def ai_rate(self) -> float:
        return self.mean(self.pa[:, 1])

    @classmethod
    def from_fit(cls, ds: Dataset, fit: NuisanceFit) -> "Observables":
        """Per-record plug-in of the cell probabilities from A-conditional models."""
        if fit.mDa is None or fit.mYa is None:
            raise MissingAConditionalFit("nuisance fit lacks A-conditional models")
        pa = np.column_stack([1 - fit.mA, fit.mA])
        mD = np.moveaxis(fit.mDa, 2, 0)  # [i, z, a]
        mY = np.moveaxis(fit.mYa, 2, 0)
        y1d0 = pa[:, None, :] * (1 - mD) * mY
        y0d0 = pa[:, None, :] * (1 - mD) * (1 - mY)
        d1 = pa[:, None, :] * mD
        covs = [ds.covariate_row(i) for i in range(ds.n)] if ds.covariates else None
        return cls(weight=ds.w, e1=fit.e1, y1d0=y1d0, y0d0=y0d0, d1=d1, pa=pa, covariates=covs)


def _max_z(arr: np.ndarray) -> np.ndarray:
    return arr.max(axis=1)


def q_bounds(obs: Observables) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit bounds on q_a(x) = P(Y(0)=1, A=a | x), shape [unit, a]."""
    return _max_z(obs.y1d0), obs.pa - _max_z(obs.y0d0)


def q_totals(obs: Observables) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = q_bounds(obs)
    return obs.weight @ lo, obs.weight @ hi


def _clamp(b: IntervalBound, lo: float, hi: float) -> IntervalBound:
    return IntervalBound(min(max(b.lo, lo), hi), min(max(b.hi, lo), hi), b.flags)


def theta_bounds(obs: Observables, a: int) -> IntervalBound:
    """Bounds on P(Y(0)=1, D=1, A=a) for the observed (arm-mixed) decision D."""
    obs.check()
    e = np.column_stack([1 - obs.e1, obs.e1])
    marg = (e * obs.y1d0[:, :, a]).sum(axis=1)
    lo = _max_z(obs.y1d0[:, :, a]) - marg
    hi = obs.pa[:, a] - marg - _max_z(obs.y0d0[:, :, a])
    pa = obs.mean(obs.pa[:, a])
    return _clamp(IntervalBound(obs.mean(lo), obs.mean(hi)), 0.0, pa)


def xi_bounds(obs: Observables, a: int, z: int) -> IntervalBound:
    """Bounds on P(Y(0)=1, D(z)=1, A=a)."""
    obs.check()
    lo = _max_z(obs.y1d0[:, :, a]) - obs.y1d0[:, z, a]
    hi = obs.pa[:, a] - obs.y1d0[:, z, a] - _max_z(obs.y0d0[:, :, a])
    return _clamp(IntervalBound(obs.mean(lo), obs.mean(hi)), 0.0, obs.mean(obs.pa[:, a]))


def ai_vs_human_population_bounds(obs: Observables, z: int, l01: float) -> IntervalBound:
    """Plug-in of E[L_z(X)] and E[U_z(X)] for R_AI - R_human(z)."""
    common = l01 * (obs.y1d0[:, z, 1] + obs.y0d0[:, z, 1] - obs.d1[:, z, 0])
    fnp = obs.y1d0[:, z, :].sum(axis=1)
    lo = (1 + l01) * (_max_z(obs.y1d0[:, :, 0]) - fnp) + common
    hi = (1 + l01) * (obs.pa[:, 0] - fnp - _max_z(obs.y0d0[:, :, 0])) + common
    return IntervalBound(obs.mean(lo), obs.mean(hi))


def width_formula(obs: Observables, l01: float) -> float:
    """(1 + l01) E{P(A=0|X) - max_z' P(Y=1,D=0,A=0|z',X) - max_z' P(Y=0,D=0,A=0|z',X)}."""
    return (1 + l01) * obs.mean(obs.pa[:, 0] - _max_z(obs.y1d0[:, :, 0]) - _max_z(obs.y0d0[:, :, 0]))


def system_risk_bounds(obs: Observables, system: str, l01: float) -> IntervalBound:
    """Sharp bounds on the classification risk of one decision system."""
    obs.check()
    if system in ("human", "human_ai"):
        z = 0 if system == "human" else 1
        xi_lo = sum(xi_bounds(obs, a, z).lo for a in (0, 1))
        xi_hi = sum(xi_bounds(obs, a, z).hi for a in (0, 1))
        p10 = obs.fnp(z)
        pd1 = obs.decision_rate(z)
        return IntervalBound(p10 + l01 * (pd1 - xi_hi), p10 + l01 * (pd1 - xi_lo))
    if system == "ai":
        lo = obs.mean(_max_z(obs.y1d0[:, :, 0]) + l01 * _max_z(obs.y0d0[:, :, 1]))
        hi = obs.mean(
            obs.pa[:, 0] - _max_z(obs.y0d0[:, :, 0])
            + l01 * (obs.pa[:, 1] - _max_z(obs.y1d0[:, :, 1]))
        )
        return IntervalBound(lo, hi)
    raise ConfigError(f"unknown system {system!r}; expected one of {SYSTEMS}")


Rule = Callable[[int, Mapping[str, Any]], float]


def rule_table(obs: Observables, rule: Rule | np.ndarray) -> np.ndarray:
    """Evaluate a decision rule f(a, x) on every unit; returns [unit, a]."""
    if callable(rule):
        if obs.covariates is None:
            covs: Sequence[Mapping[str, Any]] = [{}] * obs.units
        else:
            covs = obs.covariates
        f = np.array([[float(rule(a, covs[k])) for a in (0, 1)] for k in range(obs.units)])
    else:
        f = np.asarray(rule, dtype=float)
        if f.shape != (obs.units, 2):
            raise RuleRangeError(f"rule table must have shape ({obs.units}, 2), got {f.shape}")
    if not np.all(np.isfinite(f)) or np.any(f < 0) or np.any(f > 1):
        raise RuleRangeError("decision rule values must lie in [0, 1]")
    return f


def generic_rule_risk_bounds_obs(obs: Observables, rule: Rule | np.ndarray, l01: float) -> IntervalBound:
    """Sharp risk bounds for a rule D* = f(A, X), deterministic or stochastic."""
    obs.check()
    f = rule_table(obs, rule)
    lo_q, hi_q = q_bounds(obs)
    if np.all((f == 0) | (f == 1)):
        # deterministic: false negatives where f = 0, false positives where f = 1
        lo = (1 - f) * lo_q + l01 * f * (obs.pa - hi_q)
        hi = (1 - f) * hi_q + l01 * f * (obs.pa - lo_q)
    else:
        coef = 1 - (1 + l01) * f
        g = (coef >= 0).astype(float)
        lo = l01 * f * obs.pa + coef * (g * lo_q + (1 - g) * hi_q)
        hi = l01 * f * obs.pa + coef * (g * hi_q + (1 - g) * lo_q)
    return IntervalBound(obs.mean(lo.sum(axis=1)), obs.mean(hi.sum(axis=1)))


def _ratio(num: float, den: float) -> float | None:
    if den <= 1e-15:
        return None
    return min(max(num / den, 0.0), 1.0)


def alt_metric_bounds_obs(obs: Observables, metric: str, system: str) -> IntervalBound:
    """Sharp bounds on FNR, FPR or FDR of one system.

    Each rate is monotone in the unidentified totals q_0, q_1 (or their sum
    for human systems), so the extremes sit at interval endpoints.  When a
    denominator can vanish the upper end is reported as 1 and the interval is
    flagged ``DegenerateDenominator``.
    """
    obs.check()
    if metric not in ALT_METRICS:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {ALT_METRICS}")
    qlo, qhi = q_totals(obs)
    if system in ("human", "human_ai"):
        z = 0 if system == "human" else 1
        p10, pd1 = obs.fnp(z), obs.decision_rate(z)
        s_lo, s_hi = qlo.sum(), qhi.sum()
        c = pd1 + p10  # p01(D(z)) = c - P(Y(0) = 1)
        if metric == "FNR":
            pair = (_ratio(p10, s_hi), _ratio(p10, s_lo))
        elif metric == "FPR":
            pair = (_ratio(c - s_hi, 1 - s_hi), _ratio(c - s_lo, 1 - s_lo))
        else:
            pair = (_ratio(c - s_hi, pd1), _ratio(c - s_lo, pd1))
    elif system == "ai":
        pa1 = obs.ai_rate()
        if metric == "FNR":
            pair = (_ratio(qlo[0], qlo[0] + qhi[1]), _ratio(qhi[0], qhi[0] + qlo[1]))
        elif metric == "FPR":
            pair = (_ratio(pa1 - qhi[1], 1 - qlo[0] - qhi[1]), _ratio(pa1 - qlo[1], 1 - qhi[0] - qlo[1]))
        else:
            pair = (_ratio(pa1 - qhi[1], pa1), _ratio(pa1 - qlo[1], pa1))
    else:
        raise ConfigError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    lo, hi = pair
    if lo is None or hi is None:
        return IntervalBound(0.0 if lo is None else lo, 1.0, ("DegenerateDenominator",))
    return IntervalBound(lo, hi)


# --- estimators from data ------------------------------------------------------


def per_system_risk_bounds(ds: Dataset, fit: NuisanceFit, system: str, loss: LossSpec | float) -> IntervalBound:
    l01 = loss.l01 if isinstance(loss, LossSpec) else float(loss)
    ds.require_both_arms("per_system_risk_bounds")
    return system_risk_bounds(Observables.from_fit(ds, fit), system, l01)


def generic_rule_risk_bounds(
    ds: Dataset, fit: NuisanceFit, rule: Rule | np.ndarray, loss: LossSpec | float,
) -> IntervalBound:
    l01 = loss.l01 if isinstance(loss, LossSpec) else float(loss)
    ds.require_both_arms("generic_rule_risk_bounds")
    return generic_rule_risk_bounds_obs(Observables.from_fit(ds, fit), rule, l01)


@dataclass(frozen=True)
class AltMetricResult:
    metric: str
    system: str
    bound: IntervalBound
    resampled: tuple[tuple[float, float], tuple[float, float]] | None = None

    def to_dict(self) -> dict[str, Any]:
        out = {"metric": self.metric, "system": self.system, **self.bound.to_dict()}
        if self.resampled is not None:
            out["lo_percentile_interval"] = list(self.resampled[0])
            out["hi_percentile_interval"] = list(self.resampled[1])
        return out


def alt_metric_bounds(
    ds: Dataset, fit: NuisanceFit, metric: str, system: str,
    resamples: int = 0, seed: int = 0, alpha: float = 0.05,
) -> AltMetricResult:
    """Plug-in FNR/FPR/FDR bounds, optionally with percentile resampling intervals."""
    ds.require_both_arms("alt_metric_bounds")
    bound = alt_metric_bounds_obs(Observables.from_fit(ds, fit), metric, system)
    resampled = None
    if resamples > 0:
        rng = np.random.default_rng(seed)
        los, his = [], []
        for _ in range(resamples):
            idx = np.sort(rng.integers(0, ds.n, ds.n))
            sub = take(ds, idx)
            if not (np.any(sub.z == 0) and np.any(sub.z == 1)):
                continue
            b = alt_metric_bounds_obs(Observables.from_fit(sub, fit_nuisance(sub, fit.config)), metric, system)
            los.append(b.lo)
            his.append(b.hi)
        q = (alpha / 2, 1 - alpha / 2)
        resampled = (tuple(np.quantile(los, q).tolist()), tuple(np.quantile(his, q).tolist()))
    return AltMetricResult(metric, system, bound, resampled)


def take(ds: Dataset, idx: np.ndarray) -> Dataset:
    """Rows ``idx`` (with repetition); duplicated rows keep their key so they share a fold."""
    keys = ds.record_keys()
    return Dataset(
        z=ds.z[idx], d=ds.d[idx], a=ds.a[idx], y=ds.y[idx],
        covariates={k: v[idx] for k, v in ds.covariates.items()},
        levels=ds.levels,
        scores=None if ds.scores is None else ds.scores[idx],
        score_names=ds.score_names,
        keys=tuple(keys[i] for i in idx),
        weights=None if ds.weights is None else ds.weights[idx],
        schema=ds.schema,
    )


# --- AIPW bound estimators ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundInfluences:
    """Per-record AIPW pieces for the bounds against human system ``z``."""

    z: int
    phi_1: np.ndarray        # Y(1-D)(1-A), arm z
    phi_1_other: np.ndarray  # same, arm 1-z
    phi_0: np.ndarray        # (1-Y)(1-D)(1-A), arm z
    phi_0_other: np.ndarray
    phiD_1: np.ndarray       # A(1-D), arm z
    phiD_0: np.ndarray       # (1-A)D, arm z
    phi_fnp: np.ndarray      # Y(1-D), arm z, without conditioning on A
    g_lower: np.ndarray
    g_upper: np.ndarray
    weights: np.ndarray

    def lower_basis(self) -> AffineInfluence:
        p = self.phi_1 + self.g_lower * (self.phi_1_other - self.phi_1) - self.phi_fnp
        return AffineInfluence(p, p + self.phiD_1 - self.phiD_0, self.weights)

    def upper_basis(self) -> AffineInfluence:
        m = self.phi_1 - self.phi_fnp - self.g_upper * (self.phi_0_other - self.phi_0)
        return AffineInfluence(m + self.phiD_0, m + self.phiD_1, self.weights)

    def lower_values(self, l01: float) -> np.ndarray:
        return (
            (1 + l01) * (self.phi_1 - self.phi_fnp)
            + l01 * (self.phiD_1 - self.phiD_0)
            + (1 + l01) * self.g_lower * (self.phi_1_other - self.phi_1)
        )

    def upper_values(self, l01: float) -> np.ndarray:
        return (
            (1 + l01) * (self.phi_1 - self.phi_fnp)
            + l01 * self.phiD_1 + self.phiD_0
            - (1 + l01) * self.g_upper * (self.phi_0_other - self.phi_0)
        )


def _phi_pair(ds: Dataset, fit: NuisanceFit, z: int) -> tuple[np.ndarray, np.ndarray]:
    a, d, y = ds.a.astype(float), ds.d.astype(float), ds.y.astype(float)
    ind = (ds.z == z).astype(float) / fit.e(z)
    mD, mY = fit.mDa[z, 0], fit.mYa[z, 0]
    phi1 = (1 - a) * (1 - mD) * mY + ind * (1 - a) * (1 - d) * (y - mY) - mY * ind * (1 - a) * (d - mD)
    phi0 = (1 - a) * (1 - mD) * (1 - mY) - ind * (1 - a) * (1 - d) * (y - mY) - (1 - mY) * ind * (1 - a) * (d - mD)
    return phi1, phi0


def nuisance_classifiers(fit: NuisanceFit, z: int) -> tuple[np.ndarray, np.ndarray]:
    """Plug-in indicators that arm 1-z gives the binding max-term (lower, upper)."""
    mD, mY = fit.mDa[:, 0], fit.mYa[:, 0]
    o = 1 - z
    g_l = ((1 - mD[o]) * mY[o] >= (1 - mD[z]) * mY[z]).astype(float)
    g_u = ((1 - mD[o]) * (1 - mY[o]) >= (1 - mD[z]) * (1 - mY[z])).astype(float)
    return g_l, g_u


def bound_influences(ds: Dataset, fit: NuisanceFit, z: int) -> BoundInfluences:
    if fit.mDa is None or fit.mYa is None:
        raise MissingAConditionalFit("nuisance fit lacks A-conditional models")
    if z not in (0, 1):
        raise ConfigError("z must be 0 or 1")
    ds.require_both_arms("bound estimation")
    a, d = ds.a.astype(float), ds.d.astype(float)
    ind = (ds.z == z).astype(float) / fit.e(z)
    phi1, phi0 = _phi_pair(ds, fit, z)
    phi1o, phi0o = _phi_pair(ds, fit, 1 - z)
    mD1, mD0 = fit.mDa[z, 1], fit.mDa[z, 0]
    phiD1 = a * (1 - mD1) - ind * a * (d - mD1)
    phiD0 = (1 - a) * mD0 + ind * (1 - a) * (d - mD0)
    g_l, g_u = nuisance_classifiers(fit, z)
    return BoundInfluences(
        z=z, phi_1=phi1, phi_1_other=phi1o, phi_0=phi0, phi_0_other=phi0o,
        phiD_1=phiD1, phiD_0=phiD0, phi_fnp=influence_human(ds, fit, z, 0.0),
        g_lower=g_l, g_upper=g_u, weights=ds.w,
    )


@dataclass(frozen=True, eq=False)
class BoundEstimate:
    """Estimated sharp bounds on R_AI - R_human(z) with Imbens-Manski interval."""

    comparison: str
    z: int
    l01: float
    lower_hat: float
    upper_hat: float
    v_lower: float
    v_upper: float
    n: float
    width_formula: float
    raw_lower: float
    raw_upper: float
    flags: tuple[str, ...] = ()
    lower_influence: np.ndarray | None = field(default=None, repr=False)
    upper_influence: np.ndarray | None = field(default=None, repr=False)

    @property
    def se_lower(self) -> float:
        return math.sqrt(self.v_lower / self.n)

    @property
    def se_upper(self) -> float:
        return math.sqrt(self.v_upper / self.n)

    @property
    def width(self) -> float:
        return self.upper_hat - self.lower_hat

    def im_interval(self, alpha: float = 0.05) -> tuple[float, float]:
        q = normal_quantile(1 - alpha)
        return self.lower_hat - q * self.se_lower, self.upper_hat + q * self.se_upper

    def to_dict(self, alpha: float = 0.05) -> dict[str, Any]:
        lo, hi = self.im_interval(alpha)
        return {
            "comparison": self.comparison,
            "z": self.z,
            "l01": self.l01,
            "L": self.lower_hat,
            "U": self.upper_hat,
            "se_L": self.se_lower,
            "se_U": self.se_upper,
            "im_low": lo,
            "im_high": hi,
            "width": self.width,
            "width_formula": self.width_formula,
            "L_unclamped": self.raw_lower,
            "U_unclamped": self.raw_upper,
            "flags": list(self.flags),
        }


def _bound_estimate(
    z: int, l01: float, lo_vals: np.ndarray, hi_vals: np.ndarray, ds: Dataset, width: float,
) -> BoundEstimate:
    lo, v_lo = variance_of(lo_vals, ds.w)
    hi, v_hi = variance_of(hi_vals, ds.w)
    n = ds.total_weight
    cap = 1 + l01
    flags: list[str] = []
    c_lo, c_hi = min(max(lo, -cap), cap), min(max(hi, -cap), cap)
    if (c_lo, c_hi) != (lo, hi):
        flags.append("clamped")
    if c_lo > c_hi + 2 * max(math.sqrt(v_lo / n), math.sqrt(v_hi / n)):
        flags.append("crossed")
    return BoundEstimate(
        comparison="ai_vs_human" if z == 0 else "ai_vs_humanAI",
        z=z, l01=l01, lower_hat=c_lo, upper_hat=c_hi, v_lower=v_lo, v_upper=v_hi, n=n,
        width_formula=width, raw_lower=lo, raw_upper=hi, flags=tuple(flags),
        lower_influence=lo_vals - lo, upper_influence=hi_vals - hi,
    )


def estimate_ai_vs_human_bounds(
    ds: Dataset, fit: NuisanceFit, z: int, loss: LossSpec | float,
    influences: BoundInfluences | None = None,
) -> BoundEstimate:
    """AIPW estimates of the bounds on R_AI - R_human(z) (z = 0) or R_AI - R_human+AI (z = 1)."""
    l01 = loss.l01 if isinstance(loss, LossSpec) else float(loss)
    inf = influences or bound_influences(ds, fit, z)
    lb, ub = inf.lower_basis(), inf.upper_basis()
    width = width_formula(Observables.from_fit(ds, fit), l01)
    return _bound_estimate(z, l01, lb.values(l01), ub.values(l01), ds, width)


def estimate_ai_vs_human_bounds_direct(ds: Dataset, fit: NuisanceFit, z: int, l01: float) -> BoundEstimate:
    """Same estimate with influence values evaluated directly at ``l01``."""
    inf = bound_influences(ds, fit, z)
    width = width_formula(Observables.from_fit(ds, fit), l01)
    return _bound_estimate(z, l01, inf.lower_values(l01), inf.upper_values(l01), ds, width)
