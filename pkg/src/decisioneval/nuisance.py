"""Cross-fitted nuisance models.

For every record the fit stores out-of-fold predictions of

* ``e``   : P(Z = 1 | X)                       (clipped when estimated)
* ``mD``  : P(D = 1 | Z = z, X)                for z = 0, 1
* ``mY``  : P(Y = 1 | D = 0, Z = z, X)
* ``mDa`` : P(D = 1 | Z = z, X, A = a)
* ``mYa`` : P(Y = 1 | D = 0, Z = z, X, A = a)
* ``mA``  : P(A = 1 | X), pooled over arms (arm-specific versions kept too)

Two model kinds are available: saturated stratified frequencies with a
pseudo-count, and main-effects logistic regression.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats

from .core import Dataset
from .errors import ConfigError, EmptyCell, MissingScoreContext, NonConvergence

KINDS = ("e", "mD", "mY", "mDa", "mYa", "mA")


@dataclass(frozen=True)
class NuisanceConfig:
    """Settings for :func:`fit_nuisance`.

    ``folds=1`` disables cross-fitting (every prediction is in-sample); this
    is what population-level evaluations on weighted datasets use.
    ``propensity_table`` maps ``"|"``-joined levels of ``stratify_by``
    (in sorted covariate order) to a known treatment probability.
    """

    propensity_mode: str = "known"
    propensity_value: float = 0.5
    propensity_table: Mapping[str, float] | None = None
    model_kind: str = "stratified_frequency"
    smoothing: float = 0.5
    folds: int = 5
    clip_eta: float = 0.01
    seed: int = 0
    stratify_by: tuple[str, ...] | None = None
    ridge: float = 1e-4
    max_iter: int = 100

    def __post_init__(self):
        if self.propensity_mode not in ("known", "estimated"):
            raise ConfigError(f"propensity_mode must be 'known' or 'estimated', got {self.propensity_mode!r}")
        if self.model_kind not in ("stratified_frequency", "logistic"):
            raise ConfigError(f"unknown model_kind {self.model_kind!r}")
        if not 0 < self.clip_eta < 0.5:
            raise ConfigError("clip_eta must lie in (0, 0.5)")
        if self.smoothing < 0:
            raise ConfigError("smoothing must be nonnegative")
        if self.folds < 1:
            raise ConfigError("folds must be >= 1")
        if not 0 < self.propensity_value < 1:
            raise ConfigError("propensity_value must lie in (0, 1)")
        if self.stratify_by is not None:
            object.__setattr__(self, "stratify_by", tuple(self.stratify_by))

    def to_dict(self) -> dict[str, Any]:
        return {
            "propensity_mode": self.propensity_mode,
            "propensity_value": self.propensity_value,
            "propensity_table": None if self.propensity_table is None else dict(self.propensity_table),
            "model_kind": self.model_kind,
            "smoothing": self.smoothing,
            "folds": self.folds,
            "clip_eta": self.clip_eta,
            "seed": self.seed,
            "stratify_by": None if self.stratify_by is None else list(self.stratify_by),
            "ridge": self.ridge,
            "max_iter": self.max_iter,
        }


def assign_folds(keys: Sequence[str], k: int, seed: int) -> np.ndarray:
    """Fold index per record from a seeded hash of its key."""
    if k == 1:
        return np.zeros(len(keys), dtype=np.int64)
    out = np.empty(len(keys), dtype=np.int64)
    salt = str(seed).encode()
    for i, key in enumerate(keys):
        h = hashlib.blake2b(str(key).encode(), digest_size=8, key=salt[:64]).digest()
        out[i] = int.from_bytes(h, "little") % k
    return out


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    """Out-of-fold nuisance predictions, one entry per record."""

    folds: np.ndarray
    e1: np.ndarray           # P(Z=1|X_i)
    mD: np.ndarray           # [z, i]
    mY: np.ndarray           # [z, i]
    mDa: np.ndarray          # [z, a, i]
    mYa: np.ndarray          # [z, a, i]
    mA: np.ndarray           # [i]
    mA_arm: np.ndarray       # [z, i]
    config: NuisanceConfig
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.e1.shape[0])

    def e(self, z: int) -> np.ndarray:
        """Propensity of arm ``z``: e(z, x) = z e(x) + (1 - z)(1 - e(x))."""
        return self.e1 if z == 1 else 1.0 - self.e1

    def subset(self, mask: np.ndarray) -> "NuisanceFit":
        mask = np.asarray(mask, dtype=bool)
        return replace(
            self,
            folds=self.folds[mask],
            e1=self.e1[mask],
            mD=self.mD[:, mask],
            mY=self.mY[:, mask],
            mDa=self.mDa[:, :, mask],
            mYa=self.mYa[:, :, mask],
            mA=self.mA[mask],
            mA_arm=self.mA_arm[:, mask],
        )


def predict(fit: NuisanceFit, kind: str, record_index: int, z: int | None = None, a: int | None = None) -> float:
    """Out-of-fold prediction of nuisance ``kind`` for one record."""
    if kind not in KINDS:
        raise ConfigError(f"unknown nuisance kind {kind!r}")
    i = record_index
    if kind == "e":
        return float(fit.e1[i] if z in (None, 1) else 1.0 - fit.e1[i])
    if kind == "mA":
        return float(fit.mA[i])
    if z is None:
        raise MissingScoreContext(f"nuisance kind {kind!r} requires the arm z")
    if kind == "mD":
        return float(fit.mD[z, i])
    if kind == "mY":
        return float(fit.mY[z, i])
    if a is None:
        raise MissingScoreContext(f"nuisance kind {kind!r} requires the AI recommendation a")
    if kind == "mDa":
        return float(fit.mDa[z, a, i])
    return float(fit.mYa[z, a, i])


# --- stratified frequencies -------------------------------------------------


def _ratio(num: np.ndarray, den: np.ndarray, s: float) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        return (num + s) / (den + 2 * s)


class _FrequencyFitter:
    def __init__(self, ds: Dataset, cfg: NuisanceConfig):
        codes, _ = ds.stratum_codes(cfg.stratify_by)
        self.uniq, self.x = np.unique(codes, return_inverse=True)
        self.S = len(self.uniq)
        self.ds = ds
        self.s = cfg.smoothing
        self.w = ds.w

    def _sum(self, mask: np.ndarray, values: np.ndarray | None = None, extra: np.ndarray | None = None) -> np.ndarray:
        w = self.w * mask if values is None else self.w * mask * values
        if extra is None:
            return np.bincount(self.x, weights=w, minlength=self.S)
        return np.bincount(self.x * 2 + extra, weights=w, minlength=2 * self.S).reshape(self.S, 2)

    def fit_predict(self, train: np.ndarray, test: np.ndarray, out: dict, diag: dict) -> None:
        ds, s = self.ds, self.s
        z, d, a, y = (ds.z.astype(float), ds.d.astype(float), ds.a.astype(float), ds.y.astype(float))
        xt = self.x[test]
        tr = train.astype(float)

        n_all = self._sum(tr)
        if np.any(n_all[xt] <= 0):
            raise EmptyCell("a stratum has no training records; use smoothing > 0 or fewer folds")
        out["mA"][test] = _ratio(self._sum(tr, a), n_all, s)[xt]
        out["e_est"][test] = _ratio(self._sum(tr, z), n_all, s)[xt]

        for arm in (0, 1):
            in_arm = tr * (z == arm)
            n_z = self._sum(in_arm)
            if s == 0 and np.any(n_z[xt] <= 0):
                raise EmptyCell(f"stratum x arm {arm} cell has no training records and smoothing is 0")
            diag["min_cell"] = min(diag.get("min_cell", math.inf), float(n_z[np.unique(xt)].min()))
            mD = _ratio(self._sum(in_arm, d), n_z, s)
            out["mA_arm"][arm, test] = _ratio(self._sum(in_arm, a), n_z, s)[xt]
            rel = in_arm * (1 - d)
            n0 = self._sum(rel)
            arm_mY = (float((self.w * rel * y).sum()) + s) / (float((self.w * rel).sum()) + 2 * s) \
                if float((self.w * rel).sum()) + 2 * s > 0 else 0.5
            mY = _ratio(self._sum(rel, y), n0, s)
            mY = np.where(n0 + 2 * s > 0, mY, arm_mY)
            out["mD"][arm, test] = mD[xt]
            out["mY"][arm, test] = mY[xt]

            ai = ds.a.astype(np.int64)
            n_za = self._sum(in_arm, extra=ai)
            mDa = _ratio(self._sum(in_arm, d, extra=ai), n_za, s)
            mDa = np.where(n_za + 2 * s > 0, mDa, mD[:, None])
            n0a = self._sum(rel, extra=ai)
            mYa = _ratio(self._sum(rel, y, extra=ai), n0a, s)
            mYa = np.where(n0a + 2 * s > 0, mYa, mY[:, None])
            for av in (0, 1):
                out["mDa"][arm, av, test] = mDa[xt, av]
                out["mYa"][arm, av, test] = mYa[xt, av]


# --- logistic regression ------------------------------------------------------


def fit_logistic(X: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float, max_iter: int) -> np.ndarray:
    """Ridge-penalised weighted logistic regression by damped Newton steps.

    The intercept (column 0) is not penalised.  Iterates until the gradient
    norm of the penalised mean loss is at most 1e-8.
    """
    W = w.sum()
    if W <= 0:
        raise NonConvergence("logistic fit on an empty training set")
    p = X.shape[1]
    pen = np.full(p, ridge)
    pen[0] = 0.0
    beta = np.zeros(p)
    ybar = float((w * y).sum() / W)
    beta[0] = math.log((ybar + 1e-3) / (1 - ybar + 1e-3))

    def objective(b):
        eta = X @ b
        return float((w * (np.logaddexp(0, eta) - y * eta)).sum() / W + 0.5 * (pen * b * b).sum())

    f = objective(beta)
    for _ in range(max_iter):
        mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
        grad = X.T @ (w * (mu - y)) / W + pen * beta
        if np.linalg.norm(grad) <= 1e-8:
            return beta
        H = (X * (w * mu * (1 - mu))[:, None]).T @ X / W + np.diag(pen) + 1e-12 * np.eye(p)
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = beta - t * step
            fc = objective(cand)
            if fc <= f + 1e-4 * t * float(grad @ -step) or t < 1e-10:
                break
            t *= 0.5
        beta, f = cand, fc
    mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
    grad = X.T @ (w * (mu - y)) / W + pen * beta
    if np.linalg.norm(grad) <= 1e-8:
        return beta
    raise NonConvergence(f"logistic fit did not reach gradient norm 1e-8 in {max_iter} iterations")


def _design(ds: Dataset, names: Sequence[str]) -> np.ndarray:
    cols = [np.ones(ds.n)]
    for name in names:
        k = len(ds.levels[name])
        for lv in range(1, k):
            cols.append((ds.covariates[name] == lv).astype(float))
    return np.column_stack(cols)


class _LogisticFitter:
    def __init__(self, ds: Dataset, cfg: NuisanceConfig):
        names = sorted(ds.covariates) if cfg.stratify_by is None else list(cfg.stratify_by)
        self.X = _design(ds, names)
        self.XA = np.column_stack([self.X, ds.a.astype(float)])
        self.ds, self.cfg = ds, cfg

    def _fit(self, X, y, mask, Xpred):
        beta = fit_logistic(X[mask], y[mask], self.ds.w[mask], self.cfg.ridge, self.cfg.max_iter)
        return 1.0 / (1.0 + np.exp(-(Xpred @ beta)))

    def fit_predict(self, train: np.ndarray, test: np.ndarray, out: dict, diag: dict) -> None:
        ds = self.ds
        z, d, a, y = (ds.z.astype(float), ds.d.astype(float), ds.a.astype(float), ds.y.astype(float))
        X, XA = self.X, self.XA
        out["mA"][test] = self._fit(X, a, train, X[test])
        out["e_est"][test] = self._fit(X, z, train, X[test])
        for arm in (0, 1):
            m = train & (ds.z == arm)
            out["mA_arm"][arm, test] = self._fit(X, a, m, X[test])
            out["mD"][arm, test] = self._fit(X, d, m, X[test])
            rel = m & (ds.d == 0)
            out["mY"][arm, test] = self._fit(X, y, rel, X[test])
            for av in (0, 1):
                XAv = XA[test].copy()
                XAv[:, -1] = av
                out["mDa"][arm, av, test] = self._fit(XA, d, m, XAv)
                out["mYa"][arm, av, test] = self._fit(XA, y, rel, XAv)


def _known_propensity(ds: Dataset, cfg: NuisanceConfig) -> np.ndarray:
    if cfg.propensity_table is None:
        return np.full(ds.n, cfg.propensity_value)
    names = sorted(ds.covariates) if cfg.stratify_by is None else sorted(cfg.stratify_by)
    out = np.empty(ds.n)
    for i in range(ds.n):
        key = "|".join(ds.levels[c][int(ds.covariates[c][i])] for c in names)
        if key not in cfg.propensity_table:
            raise ConfigError(f"propensity_table has no entry for stratum {key!r}")
        out[i] = cfg.propensity_table[key]
    if np.any((out <= 0) | (out >= 1)):
        raise ConfigError("known propensities must lie strictly between 0 and 1")
    return out


def _arm_consistency(ds: Dataset, cfg: NuisanceConfig) -> dict[str, Any]:
    """Chi-square check that P(A=1 | Z=z, X) agrees across arms."""
    codes, _ = ds.stratum_codes(cfg.stratify_by)
    _, x = np.unique(codes, return_inverse=True)
    S = int(x.max()) + 1 if ds.n else 0
    w = ds.w
    stat, df, max_gap = 0.0, 0, 0.0
    n = [np.bincount(x, weights=w * (ds.z == z), minlength=S) for z in (0, 1)]
    k = [np.bincount(x, weights=w * (ds.z == z) * ds.a, minlength=S) for z in (0, 1)]
    for s in range(S):
        if n[0][s] <= 0 or n[1][s] <= 0:
            continue
        p0, p1 = k[0][s] / n[0][s], k[1][s] / n[1][s]
        max_gap = max(max_gap, abs(p1 - p0))
        pp = (k[0][s] + k[1][s]) / (n[0][s] + n[1][s])
        var = pp * (1 - pp) * (1 / n[0][s] + 1 / n[1][s])
        if var > 0:
            stat += (p1 - p0) ** 2 / var
            df += 1
    pval = float(stats.chi2.sf(stat, df)) if df > 0 else 1.0
    return {"max_abs_gap": float(max_gap), "chi2": float(stat), "df": df, "p_value": pval, "flag": pval < 1e-3}


def fit_nuisance(ds: Dataset, cfg: NuisanceConfig | None = None) -> NuisanceFit:
    """Fit all nuisance components with K-fold cross-fitting.

    Raises
    ------
    EmptyCell
        A stratum x arm cell needed for prediction is empty and smoothing is 0.
    NonConvergence
        A logistic fit failed to converge.
    """
    cfg = cfg or NuisanceConfig()
    if cfg.folds > max(ds.n, 1):
        raise ConfigError(f"folds={cfg.folds} exceeds the number of records {ds.n}")
    if cfg.stratify_by is not None:
        for c in cfg.stratify_by:
            if c not in ds.covariates:
                raise ConfigError(f"stratify_by references unknown covariate {c!r}")
    folds = assign_folds(ds.record_keys(), cfg.folds, cfg.seed)
    n = ds.n
    out = {
        "mD": np.zeros((2, n)), "mY": np.zeros((2, n)),
        "mDa": np.zeros((2, 2, n)), "mYa": np.zeros((2, 2, n)),
        "mA": np.zeros(n), "mA_arm": np.zeros((2, n)), "e_est": np.zeros(n),
    }
    fitter = _FrequencyFitter(ds, cfg) if cfg.model_kind == "stratified_frequency" else _LogisticFitter(ds, cfg)
    diag: dict[str, Any] = {}
    for k in range(cfg.folds):
        test = folds == k
        if not np.any(test):
            continue
        train = ~test if cfg.folds > 1 else np.ones(n, dtype=bool)
        fitter.fit_predict(train, test, out, diag)

    if cfg.propensity_mode == "known":
        e1 = _known_propensity(ds, cfg)
        clipped = 0
    else:
        raw = out["e_est"]
        e1 = np.clip(raw, cfg.clip_eta, 1 - cfg.clip_eta)
        clipped = int(np.count_nonzero(e1 != raw))
    for key in ("mD", "mY", "mDa", "mYa", "mA", "mA_arm"):
        np.clip(out[key], 0.0, 1.0, out=out[key])

    diag.update({
        "fold_sizes": np.bincount(folds, minlength=cfg.folds).tolist(),
        "clipped_propensity": clipped,
        "a_arm_consistency": _arm_consistency(ds, cfg),
    })
    if "min_cell" in diag:
        diag["min_cell"] = float(diag["min_cell"])
    arrays = {k: v for k, v in out.items() if k != "e_est"}
    for v in list(arrays.values()) + [e1, folds]:
        v.setflags(write=False)
    return NuisanceFit(folds=folds, e1=e1, config=cfg, diagnostics=diag, **arrays)
