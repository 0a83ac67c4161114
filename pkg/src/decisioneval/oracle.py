"""Synthetic ground truth: populations with full potential outcomes, exact
functionals, and linear-programming certificates for the closed-form bounds.

A population is a finite list of covariate strata.  Each stratum carries a
probability mass, a treatment propensity and a joint distribution over
``(A, D(0), D(1), Y(0))`` stored as a ``2x2x2x2`` array indexed
``[a, d0, d1, y0]``.  ``Y(1)`` is never modelled: when a sampled decision is
1 the recorded outcome is an independent fair coin and carries no
information.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize

from .bounds import (
    IntervalBound,
    Observables,
    ai_vs_human_population_bounds,
    alt_metric_bounds_obs,
    generic_rule_risk_bounds_obs,
    system_risk_bounds,
    theta_bounds,
    xi_bounds,
)
from .core import ConfusionMatrix, Dataset, DatasetSchema, LossSpec, classification_risk, sort_levels
from .errors import ConfigError, InfeasibleObservables, NonConvergence
from .nuisance import NuisanceConfig

MASS_TOL = 1e-12
KINDS = ("random", "null", "ai_worse", "ai_better")


@dataclass(frozen=True, eq=False)
class OraclePopulation:
    mass: np.ndarray
    e1: np.ndarray
    joint: np.ndarray  # [stratum, a, d0, d1, y0]
    covariates: tuple[Mapping[str, str], ...] | None = None
    scores: np.ndarray | None = None
    score_names: tuple[str, ...] = ()
    label: str = "random"
    eta: float = 0.01

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        e1 = np.asarray(self.e1, dtype=float)
        joint = np.asarray(self.joint, dtype=float).reshape(-1, 2, 2, 2, 2)
        S = mass.shape[0]
        if joint.shape[0] != S or e1.shape != (S,):
            raise ConfigError("population arrays disagree on the number of strata")
        if np.any(mass < 0) or abs(mass.sum() - 1) > MASS_TOL:
            raise ConfigError("stratum masses must be nonnegative and sum to 1")
        if np.any(joint < 0) or np.any(np.abs(joint.reshape(S, -1).sum(axis=1) - 1) > MASS_TOL):
            raise ConfigError("each stratum joint must be a probability table")
        if np.any(e1 < self.eta) or np.any(e1 > 1 - self.eta):
            raise ConfigError(f"propensities must lie in [{self.eta}, {1 - self.eta}]")
        if self.covariates is not None and len(self.covariates) != S:
            raise ConfigError("one covariate mapping per stratum is required")
        if self.scores is not None:
            sc = np.asarray(self.scores, dtype=np.int64).reshape(S, -1)
            if sc.shape[1] != len(self.score_names):
                raise ConfigError("score_names does not match the score columns")
            object.__setattr__(self, "scores", sc)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "e1", e1)
        object.__setattr__(self, "joint", joint)

    @property
    def strata(self) -> int:
        return int(self.mass.shape[0])

    def stratum_covariates(self, s: int) -> Mapping[str, str]:
        if self.covariates is None:
            return {"stratum": str(s)}
        return self.covariates[s]

    def arm_table(self, z: int) -> np.ndarray:
        """P(A=a, D(z)=d, Y(0)=y | stratum), indexed [s, a, d, y]."""
        return self.joint.sum(axis=3) if z == 0 else self.joint.sum(axis=2)

    def e(self, z: int) -> np.ndarray:
        return self.e1 if z == 1 else 1 - self.e1

    def observables(self) -> Observables:
        t = [self.arm_table(z) for z in (0, 1)]
        y1d0 = np.stack([t[z][:, :, 0, 1] for z in (0, 1)], axis=1)
        y0d0 = np.stack([t[z][:, :, 0, 0] for z in (0, 1)], axis=1)
        d1 = np.stack([t[z][:, :, 1, :].sum(axis=2) for z in (0, 1)], axis=1)
        pa = self.joint.sum(axis=(2, 3, 4))
        covs = [self.stratum_covariates(s) for s in range(self.strata)]
        return Observables(weight=self.mass, e1=self.e1, y1d0=y1d0, y0d0=y0d0, d1=d1, pa=pa, covariates=covs)

    def to_dict(self) -> dict[str, Any]:
        strata = []
        for s in range(self.strata):
            entry: dict[str, Any] = {
                "mass": float(self.mass[s]),
                "e": float(self.e1[s]),
                "joint": [float(v) for v in self.joint[s].ravel()],
                "covariates": dict(self.stratum_covariates(s)),
            }
            if self.scores is not None:
                entry["scores"] = [int(v) for v in self.scores[s]]
            strata.append(entry)
        return {
            "label": self.label,
            "joint_order": "a,d0,d1,y0",
            "eta": self.eta,
            "score_names": list(self.score_names),
            "strata": strata,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "OraclePopulation":
        try:
            strata = data["strata"]
            scores = [s["scores"] for s in strata] if strata and "scores" in strata[0] else None
            return cls(
                mass=np.array([s["mass"] for s in strata]),
                e1=np.array([s["e"] for s in strata]),
                joint=np.array([s["joint"] for s in strata]),
                covariates=tuple(dict(s["covariates"]) for s in strata),
                scores=None if scores is None else np.array(scores),
                score_names=tuple(data.get("score_names", ())),
                label=data.get("label", "random"),
                eta=float(data.get("eta", 0.01)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed population document: {exc}") from exc


def save_population(pop: OraclePopulation, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pop.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_population(path: str | os.PathLike) -> OraclePopulation:
    with open(path, encoding="utf-8") as fh:
        return OraclePopulation.from_dict(json.load(fh))


# --- generators -----------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Settings for :func:`make_population` and the ``simulate`` command.

    ``effect`` (0..1) sets how strongly the AI changes decisions in the
    ``ai_worse`` and ``ai_better`` kinds.  ``zero_prob`` zeroes random cells
    of each joint to produce boundary cases.
    """

    kind: str = "random"
    strata: int = 4
    concentration: float = 1.0
    zero_prob: float = 0.0
    e_range: tuple[float, float] = (0.2, 0.8)
    effect: float = 0.6
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown population kind {self.kind!r}; expected one of {KINDS}")
        if self.strata < 1:
            raise ConfigError("strata must be >= 1")
        if self.concentration <= 0:
            raise ConfigError("concentration must be positive")
        if not 0 <= self.zero_prob < 1:
            raise ConfigError("zero_prob must lie in [0, 1)")
        lo, hi = self.e_range
        if not 0 < lo <= hi < 1:
            raise ConfigError("e_range must lie inside (0, 1)")
        if not 0 <= self.effect <= 1:
            raise ConfigError("effect must lie in [0, 1]")
        if self.n < 1:
            raise ConfigError("n must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind, "strata": self.strata, "concentration": self.concentration,
            "zero_prob": self.zero_prob, "e_range": list(self.e_range), "effect": self.effect,
            "n": self.n, "seed": self.seed,
        }


def _dirichlet(rng: np.random.Generator, k: int, conc: float, zero_prob: float) -> np.ndarray:
    p = rng.dirichlet(np.full(k, conc))
    if zero_prob > 0:
        keep = rng.random(k) >= zero_prob
        if not keep.any():
            keep[rng.integers(k)] = True
        p = p * keep
    return p / p.sum()


def _human_table(rng: np.random.Generator, cfg: SimConfig) -> np.ndarray:
    """Joint over (a, d0, y0) for one stratum."""
    return _dirichlet(rng, 8, cfg.concentration, cfg.zero_prob).reshape(2, 2, 2)


def make_population(cfg: SimConfig, rng: np.random.Generator | None = None) -> OraclePopulation:
    """Random population of the requested kind.

    ``null``      : D(1) = D(0), so every human-with-AI contrast is zero.
    ``ai_worse``  : with probability ``effect`` the AI turns a correct release
                    (A = 1, Y(0) = 0) into a detention: pure added false positives.
    ``ai_better`` : with probability ``effect`` the AI corrects a human error
                    (false positive with A = 0, false negative with A = 1).
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    S = cfg.strata
    mass = _dirichlet(rng, S, 2.0, 0.0)
    e1 = rng.uniform(*cfg.e_range, size=S)
    joint = np.zeros((S, 2, 2, 2, 2))
    for s in range(S):
        if cfg.kind == "random":
            joint[s] = _dirichlet(rng, 16, cfg.concentration, cfg.zero_prob).reshape(2, 2, 2, 2)
            continue
        h = _human_table(rng, cfg)
        for a, d0, y0 in itertools.product((0, 1), repeat=3):
            p = h[a, d0, y0]
            switch = 0.0
            if cfg.kind == "ai_worse" and a == 1 and d0 == 0 and y0 == 0:
                switch = cfg.effect
            if cfg.kind == "ai_better" and ((a == 0 and d0 == 1 and y0 == 0) or (a == 1 and d0 == 0 and y0 == 1)):
                switch = cfg.effect
            joint[s, a, d0, d0, y0] += p * (1 - switch)
            joint[s, a, d0, 1 - d0, y0] += p * switch
    return OraclePopulation(mass=mass, e1=e1, joint=joint, label=cfg.kind)


def random_populations(count: int, seed: int, max_strata: int = 8, **kwargs) -> list[OraclePopulation]:
    """Reproducible list of random populations with 1..max_strata strata."""
    master = np.random.default_rng(seed)
    out = []
    for child in master.spawn(count):
        strata = int(child.integers(1, max_strata + 1))
        conc = float(child.choice([0.3, 1.0, 3.0]))
        zero = float(child.choice([0.0, 0.0, 0.3]))
        cfg = SimConfig(strata=strata, concentration=conc, zero_prob=zero, **kwargs)
        out.append(make_population(cfg, child))
    return out


def fixed_population() -> OraclePopulation:
    """Four-stratum population used for coverage and consistency studies."""
    return make_population(SimConfig(kind="random", strata=4, concentration=2.0, seed=20240501))


def attach_scores(
    pop: OraclePopulation, axes: Mapping[str, Sequence[int]], seed: int = 0,
) -> OraclePopulation:
    """Copy of ``pop`` with one random score vector per stratum."""
    rng = np.random.default_rng(seed)
    names = tuple(axes)
    scores = np.array([[int(rng.choice(list(axes[k]))) for k in names] for _ in range(pop.strata)])
    return OraclePopulation(
        mass=pop.mass, e1=pop.e1, joint=pop.joint, covariates=pop.covariates,
        scores=scores, score_names=names, label=pop.label, eta=pop.eta,
    )


# --- sampling and population-level datasets ----------------------------------------


def _covariate_columns(pop: OraclePopulation, strata_idx: np.ndarray):
    maps = [pop.stratum_covariates(s) for s in range(pop.strata)]
    names = sorted(maps[0])
    levels, codes = {}, {}
    for name in names:
        lv = sort_levels(m[name] for m in maps)
        index = {v: k for k, v in enumerate(lv)}
        per_stratum = np.array([index[m[name]] for m in maps], dtype=np.int64)
        levels[name] = lv
        codes[name] = per_stratum[strata_idx]
    return codes, levels


def sample_dataset(pop: OraclePopulation, n: int, seed: int) -> Dataset:
    """Draw ``n`` i.i.d. records; ``y`` is Y(0) when ``d = 0``, a fair coin otherwise."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    s = rng.choice(pop.strata, size=n, p=pop.mass)
    z = (rng.random(n) < pop.e1[s]).astype(np.int8)
    cdf = np.cumsum(pop.joint.reshape(pop.strata, 16), axis=1)
    cdf[:, -1] = 1.0
    cell = (rng.random(n)[:, None] >= cdf[s]).sum(axis=1)
    a, d0, d1, y0 = np.unravel_index(np.minimum(cell, 15), (2, 2, 2, 2))
    d = np.where(z == 1, d1, d0)
    coin = rng.integers(0, 2, size=n)
    y = np.where(d == 0, y0, coin)
    codes, levels = _covariate_columns(pop, s)
    return Dataset(
        z=z, d=d, a=a, y=y, covariates=codes, levels=levels,
        scores=None if pop.scores is None else pop.scores[s],
        score_names=pop.score_names,
        schema=DatasetSchema(covariates=levels),
    )


def population_dataset(pop: OraclePopulation) -> Dataset:
    """Weighted dataset whose empirical distribution is the observable law of ``pop``.

    Every (stratum, z, a, d, y) cell with positive probability becomes one
    record weighted by that probability; D = 1 cells split their mass evenly
    over y.  Estimators run on it with :data:`POPULATION_FIT` return exact
    population-level values.
    """
    rows: list[tuple[int, int, int, int, int, float]] = []
    for s in range(pop.strata):
        for z in (0, 1):
            t = pop.arm_table(z)[s]
            pz = pop.mass[s] * pop.e(z)[s]
            for a, d, y in itertools.product((0, 1), repeat=3):
                p = t[a, d, y] if d == 0 else t[a, 1].sum() / 2
                if pz * p > 0:
                    rows.append((s, z, a, d, y, pz * p))
    arr = np.array([r[:5] for r in rows], dtype=np.int64)
    w = np.array([r[5] for r in rows])
    codes, levels = _covariate_columns(pop, arr[:, 0])
    return Dataset(
        z=arr[:, 1], d=arr[:, 3], a=arr[:, 2], y=arr[:, 4], covariates=codes, levels=levels,
        scores=None if pop.scores is None else pop.scores[arr[:, 0]],
        score_names=pop.score_names, weights=w, schema=DatasetSchema(covariates=levels),
    )


POPULATION_FIT = NuisanceConfig(propensity_mode="estimated", smoothing=0.0, folds=1, clip_eta=1e-6)


# --- exact functionals ------------------------------------------------------------


def _confusion_from(pos_y1: float, pos_y0: float, neg_y1: float, neg_y0: float) -> ConfusionMatrix:
    total = pos_y1 + pos_y0 + neg_y1 + neg_y0
    return ConfusionMatrix(p00=neg_y0 / total, p01=pos_y0 / total, p10=neg_y1 / total, p11=pos_y1 / total)


def true_confusion(pop: OraclePopulation, system: str | np.ndarray) -> ConfusionMatrix:
    """Confusion matrix of a system against Y(0).

    ``system`` is ``"human"``, ``"human_ai"``, ``"ai"`` or a rule table
    ``f[stratum, a]`` giving P(D* = 1 | A = a, X).
    """
    py = pop.joint.sum(axis=(2, 3))  # [s, a, y0]
    if isinstance(system, str):
        if system in ("human", "human_ai"):
            t = pop.arm_table(0 if system == "human" else 1)
            m = pop.mass @ t.sum(axis=1).reshape(pop.strata, 4)
            return _confusion_from(m[3], m[2], m[1], m[0])
        if system != "ai":
            raise ConfigError(f"unknown system {system!r}")
        f = np.tile([0.0, 1.0], (pop.strata, 1))
    else:
        f = np.asarray(system, dtype=float)
    pos = np.einsum("s,sa,say->y", pop.mass, f, py)
    neg = np.einsum("s,sa,say->y", pop.mass, 1 - f, py)
    return _confusion_from(pos[1], pos[0], neg[1], neg[0])


def true_risk(pop: OraclePopulation, system, loss: LossSpec | float) -> float:
    loss = loss if isinstance(loss, LossSpec) else LossSpec(float(loss))
    return classification_risk(true_confusion(pop, system), loss)


PAIRS = {
    "human_ai-human": ("human_ai", "human"),
    "ai-human": ("ai", "human"),
    "ai-human_ai": ("ai", "human_ai"),
}


def true_risk_diff(pop: OraclePopulation, pair: str, loss: LossSpec | float) -> float:
    if pair not in PAIRS:
        raise ConfigError(f"unknown pair {pair!r}; expected one of {tuple(PAIRS)}")
    first, second = PAIRS[pair]
    return true_risk(pop, first, loss) - true_risk(pop, second, loss)


def identified_risk_diff(obs: Observables, l01: float) -> float:
    """Risk difference (human+AI minus human) from observables alone."""
    per = [(1 + l01) * obs.y1d0[:, z, :].sum(axis=1) - l01 * (obs.y1d0[:, z, :] + obs.y0d0[:, z, :]).sum(axis=1)
           for z in (0, 1)]
    return obs.mean(per[1] - per[0])


def true_metric(pop: OraclePopulation, metric: str, system) -> float:
    cm = true_confusion(pop, system)
    if metric == "FNP":
        return cm.p10
    if metric == "FPP":
        return cm.p01
    if metric == "misclass":
        return cm.p10 + cm.p01
    den = {"FNR": cm.p10 + cm.p11, "FPR": cm.p00 + cm.p01, "FDR": cm.p01 + cm.p11}.get(metric)
    if den is None:
        raise ConfigError(f"unknown metric {metric!r}")
    num = {"FNR": cm.p10, "FPR": cm.p01, "FDR": cm.p01}[metric]
    return num / den if den > 0 else math.nan


def true_theta(pop: OraclePopulation, a: int) -> float:
    t = sum(pop.e(z)[:, None] * pop.arm_table(z)[:, a, 1, 1][:, None] for z in (0, 1))
    return float(pop.mass @ t[:, 0])


def true_xi(pop: OraclePopulation, a: int, z: int) -> float:
    return float(pop.mass @ pop.arm_table(z)[:, a, 1, 1])


def _cell_mask(pop: OraclePopulation, cells: Iterable[Sequence[int]]) -> np.ndarray:
    if pop.scores is None:
        raise ConfigError("population has no scores")
    chosen = {tuple(int(v) for v in c) for c in cells}
    return np.array([tuple(int(v) for v in row) in chosen for row in pop.scores])


def true_policy_value(pop: OraclePopulation, cells: Iterable[Sequence[int]], kind: str, l01: float) -> float:
    """Risk change of a policy relative to its baseline.

    ``provision``: show the AI (z = 1) in the selected cells, never elsewhere.
    ``follow``: decide D = A in the selected cells, D = D(0) elsewhere.
    """
    sel = _cell_mask(pop, cells).astype(float)
    py = pop.joint.sum(axis=(2, 3))

    def stratum_risk(t):  # t[s, d, y0]
        return t[:, 0, 1] + l01 * t[:, 1, 0]

    human = stratum_risk(pop.arm_table(0).sum(axis=1))
    if kind == "provision":
        other = stratum_risk(pop.arm_table(1).sum(axis=1))
    elif kind == "follow":
        other = py[:, 0, 1] + l01 * py[:, 1, 0]
    else:
        raise ConfigError(f"unknown policy kind {kind!r}")
    return float(pop.mass @ (sel * (other - human)))


# --- linear-programming oracle -----------------------------------------------------


def _flat(a: int, d0: int, d1: int, y0: int) -> int:
    return a * 8 + d0 * 4 + d1 * 2 + y0


def _constraint_matrix() -> np.ndarray:
    rows = []
    for z in (0, 1):
        for a in (0, 1):
            for y in (0, 1):
                r = np.zeros((2, 2, 2, 2))
                if z == 0:
                    r[a, 0, :, y] = 1
                else:
                    r[a, :, 0, y] = 1
                rows.append(r.ravel())
            r = np.zeros((2, 2, 2, 2))
            if z == 0:
                r[a, 1, :, :] = 1
            else:
                r[a, :, 1, :] = 1
            rows.append(r.ravel())
    return np.array(rows)


def _rhs(obs: Observables, s: int) -> np.ndarray:
    b = []
    for z in (0, 1):
        for a in (0, 1):
            b += [obs.y0d0[s, z, a], obs.y1d0[s, z, a], obs.d1[s, z, a]]
    return np.array(b)


class VertexEnumerator:
    """All vertices of {p >= 0 : A p = b} for the 16-cell joint of one stratum.

    The constraint structure is fixed, so every nonsingular basis and its
    inverse is computed once; vertices of a particular stratum are then the
    nonnegative basic solutions.
    """

    def __init__(self):
        A = _constraint_matrix()
        rows: list[int] = []
        for i in range(A.shape[0]):
            if np.linalg.matrix_rank(A[rows + [i]]) == len(rows) + 1:
                rows.append(i)
        self.A, self.rows = A, rows
        r = len(rows)
        Ar = A[rows]
        combos = np.array(list(itertools.combinations(range(16), r)))
        mats = Ar[:, combos].transpose(1, 0, 2)  # [basis, r, r]
        ok = np.abs(np.linalg.det(mats)) > 0.5
        self.bases = combos[ok]
        self.inverses = np.linalg.inv(mats[ok])

    def vertices(self, b: np.ndarray, tol: float = 1e-11) -> np.ndarray:
        xb = self.inverses @ b[self.rows]
        feasible = np.all(xb >= -tol, axis=1)
        if not feasible.any():
            raise InfeasibleObservables("no joint distribution matches the observables")
        xb = np.clip(xb[feasible], 0.0, None)
        x = np.zeros((xb.shape[0], 16))
        np.put_along_axis(x, self.bases[feasible], xb, axis=1)
        if np.max(np.abs(x @ self.A.T - b)) > 1e-9:
            raise InfeasibleObservables("observables are not consistent across treatment arms")
        return np.unique(np.round(x, 14), axis=0)


_ENUMERATOR: VertexEnumerator | None = None


def enumerator() -> VertexEnumerator:
    global _ENUMERATOR
    if _ENUMERATOR is None:
        _ENUMERATOR = VertexEnumerator()
    return _ENUMERATOR


Coefficients = np.ndarray  # [stratum, 16]


def target_coefficients(pop_or_obs, target: str, **params) -> tuple[Coefficients, Coefficients | None]:
    """Linear (numerator, denominator) coefficients of a target over the joint.

    Targets: ``theta`` (a), ``xi`` (a, z), ``risk_diff_ai`` (z, l01),
    ``system_risk`` (system, l01), ``generic_rule`` (rule[s, a], l01),
    ``metric`` (metric in FNR/FPR/FDR, system).
    """
    obs = pop_or_obs.observables() if isinstance(pop_or_obs, OraclePopulation) else pop_or_obs
    S = obs.units
    grid = np.array(list(itertools.product((0, 1), repeat=4)))  # a, d0, d1, y0
    a_, d0_, d1_, y_ = grid.T
    dz = (d0_, d1_)

    def per_stratum(vec):
        return np.tile(vec.astype(float), (S, 1))

    def risk_vec(dec, l01):  # dec: per-cell P(decision = 1) (16,) or (S, 16)
        return (1 - dec) * (y_ == 1) + l01 * dec * (y_ == 0)

    if target == "theta":
        a = params["a"]
        cell = ((a_ == a) & (y_ == 1)).astype(float)
        e = np.column_stack([1 - obs.e1, obs.e1])
        return e[:, [0]] * (cell * (d0_ == 1)) + e[:, [1]] * (cell * (d1_ == 1)), None
    if target == "xi":
        a, z = params["a"], params["z"]
        return per_stratum((a_ == a) & (dz[z] == 1) & (y_ == 1)), None
    if target in ("system_risk", "risk_diff_ai"):
        l01 = params["l01"]
        if target == "system_risk":
            system = params["system"]
            if system == "ai":
                return per_stratum(risk_vec(a_.astype(float), l01)), None
            z = 0 if system == "human" else 1
            return per_stratum(risk_vec(dz[z].astype(float), l01)), None
        z = params["z"]
        return per_stratum(risk_vec(a_.astype(float), l01) - risk_vec(dz[z].astype(float), l01)), None
    if target == "generic_rule":
        f = np.asarray(params["rule"], dtype=float)
        dec = f[:, a_]
        return risk_vec(dec, params["l01"]), None
    if target == "metric":
        metric, system = params["metric"], params["system"]
        dec = a_ if system == "ai" else dz[0 if system == "human" else 1]
        pos, y1 = dec == 1, y_ == 1
        num = {"FNR": ~pos & y1, "FPR": pos & ~y1, "FDR": pos & ~y1}[metric]
        den = {"FNR": y1, "FPR": ~y1, "FDR": pos}[metric]
        return per_stratum(num), per_stratum(den)
    raise ConfigError(f"unknown target {target!r}")


def _dinkelbach(
    verts: list[np.ndarray], mass: np.ndarray, num: Coefficients, den: Coefficients, sense: int,
) -> float | None:
    """Extremum of sum_s m_s num_s.p_s / sum_s m_s den_s.p_s over vertex sets (None if den can vanish)."""
    nv = [v @ num[s] for s, v in enumerate(verts)]
    dv = [v @ den[s] for s, v in enumerate(verts)]
    if sum(m * d.min() for m, d in zip(mass, dv)) <= 1e-15:
        return None
    idx = [0] * len(verts)
    t = sum(m * n[0] for m, n in zip(mass, nv)) / sum(m * d[0] for m, d in zip(mass, dv))
    for _ in range(200):
        idx = [int(np.argmin(sense * (n - t * d))) for n, d in zip(nv, dv)]
        N = sum(m * n[i] for m, n, i in zip(mass, nv, idx))
        D = sum(m * d[i] for m, d, i in zip(mass, dv, idx))
        if abs(N - t * D) <= 1e-15:
            return t
        t = N / D
    raise NonConvergence("fractional program did not converge")


def feasible_vertices(obs: Observables) -> list[np.ndarray]:
    """Vertices of the feasible joint set of every unit of ``obs``."""
    en = enumerator()
    return [en.vertices(_rhs(obs, s)) for s in range(obs.units)]


def oracle_sharp_bounds(
    pop_or_obs, target: str, vertices: list[np.ndarray] | None = None, **params,
) -> IntervalBound:
    """Exact extremes of a target over all joints consistent with the observables."""
    obs = pop_or_obs.observables() if isinstance(pop_or_obs, OraclePopulation) else pop_or_obs
    verts = vertices if vertices is not None else feasible_vertices(obs)
    num, den = target_coefficients(obs, target, **params)
    mass = obs.weight
    if den is None:
        lo = math.fsum(m * float((v @ c).min()) for m, v, c in zip(mass, verts, num))
        hi = math.fsum(m * float((v @ c).max()) for m, v, c in zip(mass, verts, num))
        return IntervalBound(lo, hi)
    lo = _dinkelbach(verts, mass, num, den, 1)
    hi = _dinkelbach(verts, mass, num, den, -1)
    if lo is None or hi is None:
        return IntervalBound(0.0 if lo is None else lo, 1.0, ("DegenerateDenominator",))
    return IntervalBound(lo, hi)


def oracle_sharp_bounds_linprog(pop_or_obs, target: str, **params) -> IntervalBound:
    """Independent check of :func:`oracle_sharp_bounds` with one joint LP (HiGHS).

    Ratio targets use the Charnes-Cooper transformation.
    """
    obs = pop_or_obs.observables() if isinstance(pop_or_obs, OraclePopulation) else pop_or_obs
    S = obs.units
    A = _constraint_matrix()
    num, den = target_coefficients(obs, target, **params)
    mass = obs.weight
    A_eq = np.kron(np.eye(S), A)
    b = np.concatenate([_rhs(obs, s) for s in range(S)])
    c = (mass[:, None] * num).ravel()
    out = []
    for sense in (1, -1):
        if den is None:
            res = optimize.linprog(sense * c, A_eq=A_eq, b_eq=b, bounds=(0, None), method="highs")
            if res.status != 0:
                raise InfeasibleObservables(f"linear program failed: {res.message}")
            out.append(sense * res.fun)
        else:
            # variables (y, t): A y - b t = 0, den.y = 1
            dvec = (mass[:, None] * den).ravel()
            top = np.hstack([A_eq, -b[:, None]])
            norm = np.append(dvec, 0.0)[None, :]
            res = optimize.linprog(
                sense * np.append(c, 0.0), A_eq=np.vstack([top, norm]),
                b_eq=np.append(np.zeros(len(b)), 1.0), bounds=(0, None), method="highs",
            )
            if res.status != 0:
                return IntervalBound(0.0, 1.0, ("DegenerateDenominator",))
            out.append(sense * res.fun)
    return IntervalBound(out[0], out[1])


def closed_form_bounds(pop_or_obs, target: str, **params) -> IntervalBound:
    """Closed-form bound for the same targets as :func:`oracle_sharp_bounds`."""
    obs = pop_or_obs.observables() if isinstance(pop_or_obs, OraclePopulation) else pop_or_obs
    if target == "theta":
        return theta_bounds(obs, params["a"])
    if target == "xi":
        return xi_bounds(obs, params["a"], params["z"])
    if target == "risk_diff_ai":
        return ai_vs_human_population_bounds(obs, params["z"], params["l01"])
    if target == "system_risk":
        return system_risk_bounds(obs, params["system"], params["l01"])
    if target == "generic_rule":
        return generic_rule_risk_bounds_obs(obs, params["rule"], params["l01"])
    if target == "metric":
        return alt_metric_bounds_obs(obs, params["metric"], params["system"])
    raise ConfigError(f"unknown target {target!r}")


def true_target(pop: OraclePopulation, target: str, **params) -> float:
    if target == "theta":
        return true_theta(pop, params["a"])
    if target == "xi":
        return true_xi(pop, params["a"], params["z"])
    if target == "risk_diff_ai":
        return true_risk_diff(pop, "ai-human" if params["z"] == 0 else "ai-human_ai", params["l01"])
    if target == "system_risk":
        return true_risk(pop, params["system"], params["l01"])
    if target == "generic_rule":
        return true_risk(pop, np.asarray(params["rule"], dtype=float), params["l01"])
    if target == "metric":
        return true_metric(pop, params["metric"], params["system"])
    raise ConfigError(f"unknown target {target!r}")


def target_suite(pop: OraclePopulation, rng: np.random.Generator) -> list[tuple[str, dict[str, Any]]]:
    """Every bounded target for one population, with random loss ratios and rules."""
    l01 = float(10 ** rng.uniform(-1, 1))
    det = rng.integers(0, 2, size=(pop.strata, 2)).astype(float)
    sto = rng.random((pop.strata, 2))
    suite: list[tuple[str, dict[str, Any]]] = []
    for a in (0, 1):
        suite.append(("theta", {"a": a}))
        for z in (0, 1):
            suite.append(("xi", {"a": a, "z": z}))
    for z in (0, 1):
        suite.append(("risk_diff_ai", {"z": z, "l01": l01}))
    for system in ("human", "human_ai", "ai"):
        suite.append(("system_risk", {"system": system, "l01": l01}))
        for metric in ("FNR", "FPR", "FDR"):
            suite.append(("metric", {"metric": metric, "system": system}))
    suite.append(("generic_rule", {"rule": det, "l01": l01}))
    suite.append(("generic_rule", {"rule": sto, "l01": l01}))
    return suite


@dataclass
class OracleCheckResult:
    populations: int
    checks: int = 0
    validity_failures: int = 0
    sharpness_failures: int = 0
    max_gap: float = 0.0
    degenerate: int = 0
    failures: list[dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.validity_failures == 0 and self.sharpness_failures == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "populations": self.populations,
            "checks": self.checks,
            "validity_failures": self.validity_failures,
            "sharpness_failures": self.sharpness_failures,
            "max_abs_gap": self.max_gap,
            "degenerate_skipped": self.degenerate,
            "passed": self.passed,
            "failures": self.failures[:20],
        }


def oracle_check(
    populations: int = 500, seed: int = 0, max_strata: int = 8, tol: float = 1e-8,
    pops: Sequence[OraclePopulation] | None = None,
) -> OracleCheckResult:
    """Validity and sharpness of every closed-form bound on random populations."""
    pops = list(pops) if pops is not None else random_populations(populations, seed, max_strata)
    rngs = np.random.default_rng(seed + 1).spawn(len(pops))
    res = OracleCheckResult(populations=len(pops))
    for k, (pop, rng) in enumerate(zip(pops, rngs)):
        obs = pop.observables()
        verts = feasible_vertices(obs)
        for target, params in target_suite(pop, rng):
            res.checks += 1
            cf = closed_form_bounds(obs, target, **params)
            lp = oracle_sharp_bounds(obs, target, vertices=verts, **params)
            if "DegenerateDenominator" in cf.flags or "DegenerateDenominator" in lp.flags:
                res.degenerate += 1
                continue
            truth = true_target(pop, target, **params)
            gap = max(abs(cf.lo - lp.lo), abs(cf.hi - lp.hi))
            res.max_gap = max(res.max_gap, gap)
            info = {"population": k, "target": target,
                    "params": {p: v for p, v in params.items() if p != "rule"}}
            if not (math.isnan(truth) or cf.contains(truth, 1e-12)):
                res.validity_failures += 1
                res.failures.append({**info, "kind": "validity", "truth": truth, "lo": cf.lo, "hi": cf.hi})
            if gap > tol:
                res.sharpness_failures += 1
                res.failures.append({**info, "kind": "sharpness", "gap": gap})
    return res
