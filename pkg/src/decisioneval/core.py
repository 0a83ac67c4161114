"""Data schema, validation, loss specification and confusion-matrix arithmetic.

A :class:`Dataset` is a columnar, read-only view of trial records with
binary treatment ``z`` (AI recommendation shown), human decision ``d``,
AI recommendation ``a`` and outcome ``y``, plus discrete covariates and
optional risk scores.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyArm,
    MissingColumn,
    MissingValue,
    NonBinaryValue,
    ScoreOutOfRange,
    UnknownLevel,
)

BINARY_COLUMNS = ("z", "d", "a", "y")
COVARIATE_PREFIX = "x_"
SCORE_PREFIX = "score_"
ID_COLUMN = "id"
DEFAULT_SCORE_RANGES: dict[str, tuple[int, int]] = {"fta": (1, 6), "nca": (1, 6), "nvca": (0, 1)}
SUM_TOL = 1e-12


def _level_sort_key(level: str):
    try:
        return (0, int(level), level)
    except ValueError:
        return (1, 0, level)


def sort_levels(levels: Iterable[str]) -> tuple[str, ...]:
    return tuple(sorted(set(levels), key=_level_sort_key))


@dataclass(frozen=True)
class Subgroup:
    """Conjunction of covariate-level memberships, e.g. ``{"race": {"nonwhite"}}``."""

    name: str
    conditions: Mapping[str, frozenset[str]]

    @classmethod
    def parse(cls, name: str, text: str) -> "Subgroup":
        """Parse ``"race=nonwhite; gender=female|other"``."""
        conditions: dict[str, frozenset[str]] = {}
        for part in text.split(";"):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ConfigError(f"subgroup {name!r}: cannot parse condition {part!r}")
            cov, levels = part.split("=", 1)
            cov = cov.strip()
            if cov.startswith(COVARIATE_PREFIX):
                cov = cov[len(COVARIATE_PREFIX):]
            conditions[cov] = frozenset(v.strip() for v in levels.split("|") if v.strip())
        if not conditions:
            raise ConfigError(f"subgroup {name!r} has no conditions")
        return cls(name, conditions)

    def mask(self, ds: "Dataset") -> np.ndarray:
        out = np.ones(ds.n, dtype=bool)
        for cov, allowed in self.conditions.items():
            if cov not in ds.covariates:
                raise ConfigError(f"subgroup {self.name!r} references undeclared covariate {cov!r}")
            levels = ds.levels[cov]
            codes = [i for i, lv in enumerate(levels) if lv in allowed]
            out &= np.isin(ds.covariates[cov], codes)
        return out

    def describe(self) -> str:
        return "; ".join(f"{k}={'|'.join(sorted(v))}" for k, v in sorted(self.conditions.items()))


@dataclass(frozen=True)
class DatasetSchema:
    """Declared covariates, subgroups and score ranges.

    ``covariates=None`` means every ``x_`` column of the input is a
    covariate whose levels are inferred from the data.  A covariate declared
    with ``None`` levels is required but has its levels inferred.
    """

    covariates: Mapping[str, tuple[str, ...] | None] | None = None
    subgroups: Mapping[str, Subgroup] = field(default_factory=dict)
    score_ranges: Mapping[str, tuple[int, int]] = field(
        default_factory=lambda: dict(DEFAULT_SCORE_RANGES)
    )

    def __post_init__(self):
        if self.covariates is not None:
            for name, levels in self.covariates.items():
                if levels is not None and len(levels) == 0:
                    raise ConfigError(f"covariate {name!r} has an empty level set")
            for sg in self.subgroups.values():
                for cov in sg.conditions:
                    if cov not in self.covariates:
                        raise ConfigError(
                            f"subgroup {sg.name!r} references undeclared covariate {cov!r}"
                        )
        for name, (lo, hi) in self.score_ranges.items():
            if lo > hi:
                raise ConfigError(f"score range for {name!r} is empty")


@dataclass(frozen=True)
class CaseRecord:
    z: int
    d: int
    a: int
    y: int
    covariates: Mapping[str, str]
    scores: tuple[int, ...] | None = None


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable columnar trial data.

    ``weights`` are optional nonnegative record weights; ``None`` means every
    record counts once.  Weighted datasets are used to evaluate estimators at
    the population level (weights are cell probabilities).
    """

    z: np.ndarray
    d: np.ndarray
    a: np.ndarray
    y: np.ndarray
    covariates: Mapping[str, np.ndarray]
    levels: Mapping[str, tuple[str, ...]]
    scores: np.ndarray | None = None
    score_names: tuple[str, ...] = ()
    keys: tuple[str, ...] | None = None
    weights: np.ndarray | None = None
    schema: DatasetSchema = field(default_factory=DatasetSchema)

    def __post_init__(self):
        for col in ("z", "d", "a", "y"):
            object.__setattr__(self, col, _readonly(np.asarray(getattr(self, col), dtype=np.int8)))
        covs = {k: _readonly(np.asarray(v, dtype=np.int64)) for k, v in self.covariates.items()}
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "levels", {k: tuple(v) for k, v in self.levels.items()})
        if self.scores is not None:
            object.__setattr__(self, "scores", _readonly(np.asarray(self.scores, dtype=np.int64)))
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ConfigError("record weights must be finite and nonnegative")
            object.__setattr__(self, "weights", _readonly(w))

    @property
    def n(self) -> int:
        return int(self.z.shape[0])

    @property
    def w(self) -> np.ndarray:
        """Record weights (ones when unweighted)."""
        return np.ones(self.n) if self.weights is None else self.weights

    @property
    def total_weight(self) -> float:
        return float(self.n) if self.weights is None else float(self.weights.sum())

    def arm_count(self, arm: int) -> int:
        return int(np.count_nonzero(self.z == arm))

    def require_both_arms(self, context: str = "") -> None:
        for arm in (0, 1):
            if not np.any(self.w[self.z == arm] > 0):
                raise EmptyArm(arm, context)

    def subset(self, mask: np.ndarray) -> "Dataset":
        mask = np.asarray(mask, dtype=bool)
        return Dataset(
            z=self.z[mask],
            d=self.d[mask],
            a=self.a[mask],
            y=self.y[mask],
            covariates={k: v[mask] for k, v in self.covariates.items()},
            levels=self.levels,
            scores=None if self.scores is None else self.scores[mask],
            score_names=self.score_names,
            keys=None if self.keys is None else tuple(np.asarray(self.keys, dtype=object)[mask]),
            weights=None if self.weights is None else self.weights[mask],
            schema=self.schema,
        )

    def record_keys(self) -> tuple[str, ...]:
        """Stable record identities: the ``id`` column, else the row position."""
        if self.keys is not None:
            return self.keys
        return tuple(str(i) for i in range(self.n))

    def stratum_codes(self, names: Sequence[str] | None = None) -> tuple[np.ndarray, int]:
        """Mixed-radix code of the covariate combination of each record."""
        names = sorted(self.covariates) if names is None else list(names)
        code = np.zeros(self.n, dtype=np.int64)
        size = 1
        for name in names:
            if name not in self.covariates:
                raise ConfigError(f"unknown covariate {name!r}")
            k = len(self.levels[name])
            code = code * k + self.covariates[name]
            size *= k
        return code, size

    def covariate_row(self, i: int) -> dict[str, str]:
        return {k: self.levels[k][int(v[i])] for k, v in self.covariates.items()}

    def records(self) -> Iterator[CaseRecord]:
        for i in range(self.n):
            yield CaseRecord(
                z=int(self.z[i]),
                d=int(self.d[i]),
                a=int(self.a[i]),
                y=int(self.y[i]),
                covariates=self.covariate_row(i),
                scores=None if self.scores is None else tuple(int(s) for s in self.scores[i]),
            )

    def summary(self) -> dict[str, Any]:
        w = self.w
        out: dict[str, Any] = {"n": self.n, "covariates": {k: list(v) for k, v in self.levels.items()}}
        for arm in (0, 1):
            m = self.z == arm
            tot = float(w[m].sum())
            out[f"arm{arm}"] = {
                "n": int(m.sum()),
                "weight": tot,
                "decision_rate": float((w[m] * self.d[m]).sum() / tot) if tot > 0 else None,
                "outcome_prevalence_released": (
                    float((w[m] * self.y[m] * (1 - self.d[m])).sum() / (w[m] * (1 - self.d[m])).sum())
                    if (w[m] * (1 - self.d[m])).sum() > 0
                    else None
                ),
            }
        out["ai_positive_rate"] = float((w * self.a).sum() / w.sum())
        return out

    def to_csv(self, path: str | os.PathLike) -> None:
        """Write the dataset in the CSV input format (weights are not written)."""
        header = list(BINARY_COLUMNS)
        if self.keys is not None:
            header = [ID_COLUMN] + header
        cov_names = sorted(self.covariates)
        header += [COVARIATE_PREFIX + c for c in cov_names]
        header += [SCORE_PREFIX + s for s in self.score_names]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(self.n):
                row: list[Any] = []
                if self.keys is not None:
                    row.append(self.keys[i])
                row += [int(self.z[i]), int(self.d[i]), int(self.a[i]), int(self.y[i])]
                row += [self.levels[c][int(self.covariates[c][i])] for c in cov_names]
                if self.scores is not None:
                    row += [int(s) for s in self.scores[i]]
                writer.writerow(row)


def _parse_binary(value: Any, row: int, column: str) -> int:
    if value is None or (isinstance(value, str) and value.strip() == ""):
        raise MissingValue(row, column)
    if isinstance(value, str):
        value = value.strip()
        if value not in ("0", "1"):
            raise NonBinaryValue(row, column, value)
        return int(value)
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)) and value in (0, 1):
        return int(value)
    if isinstance(value, (float, np.floating)) and value in (0.0, 1.0):
        return int(value)
    raise NonBinaryValue(row, column, value)


def _parse_score(value: Any, row: int, column: str, lo: int, hi: int) -> int:
    if value is None or (isinstance(value, str) and value.strip() == ""):
        raise MissingValue(row, column)
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise ScoreOutOfRange(row, column, value) from None
    if not f.is_integer() or not lo <= f <= hi:
        raise ScoreOutOfRange(row, column, value)
    return int(f)


def read_csv_rows(path: str | os.PathLike) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MissingColumn("z")
        return list(reader.fieldnames), list(reader)


def validate_dataset(
    raw_table: str | os.PathLike | Iterable[Mapping[str, Any]],
    schema: DatasetSchema | None = None,
) -> Dataset:
    """Validate raw rows (or a CSV path) against ``schema`` and build a Dataset.

    Raises
    ------
    MissingColumn, NonBinaryValue, ScoreOutOfRange, MissingValue, UnknownLevel
        On malformed input.
    ConfigError
        When a column matches no known name or prefix.
    EmptyArm
        When either treatment arm has no records.
    """
    schema = schema or DatasetSchema()
    if isinstance(raw_table, (str, os.PathLike)):
        header, rows = read_csv_rows(raw_table)
    else:
        rows = [dict(r) for r in raw_table]
        header = list(rows[0].keys()) if rows else list(BINARY_COLUMNS)

    for col in header:
        if col in BINARY_COLUMNS or col == ID_COLUMN:
            continue
        if col.startswith(COVARIATE_PREFIX) or col.startswith(SCORE_PREFIX):
            continue
        raise ConfigError(f"unknown column {col!r} (expected z,d,a,y,id, x_* or score_*)")
    for col in BINARY_COLUMNS:
        if col not in header:
            raise MissingColumn(col)

    data_covs = [c[len(COVARIATE_PREFIX):] for c in header if c.startswith(COVARIATE_PREFIX)]
    if schema.covariates is None:
        cov_names = sorted(data_covs)
        declared: dict[str, tuple[str, ...] | None] = {c: None for c in cov_names}
    else:
        declared = dict(schema.covariates)
        cov_names = sorted(declared)
        for c in cov_names:
            if c not in data_covs:
                raise MissingColumn(COVARIATE_PREFIX + c)
        extra = sorted(set(data_covs) - set(cov_names))
        if extra:
            raise ConfigError(f"undeclared covariate columns: {[COVARIATE_PREFIX + c for c in extra]}")

    score_cols = [c[len(SCORE_PREFIX):] for c in header if c.startswith(SCORE_PREFIX)]
    for s in score_cols:
        if s not in schema.score_ranges:
            raise ConfigError(f"score column {SCORE_PREFIX + s!r} has no declared range")
    score_names = tuple(s for s in schema.score_ranges if s in score_cols)

    n = len(rows)
    cols = {c: np.zeros(n, dtype=np.int8) for c in BINARY_COLUMNS}
    raw_cov: dict[str, list[str]] = {c: [] for c in cov_names}
    scores = np.zeros((n, len(score_names)), dtype=np.int64) if score_names else None
    keys = [] if ID_COLUMN in header else None
    for i, row in enumerate(rows):
        for c in BINARY_COLUMNS:
            cols[c][i] = _parse_binary(row.get(c), i, c)
        for c in cov_names:
            v = row.get(COVARIATE_PREFIX + c)
            if v is None or str(v).strip() == "":
                raise MissingValue(i, COVARIATE_PREFIX + c)
            raw_cov[c].append(str(v).strip())
        for j, s in enumerate(score_names):
            lo, hi = schema.score_ranges[s]
            scores[i, j] = _parse_score(row.get(SCORE_PREFIX + s), i, SCORE_PREFIX + s, lo, hi)
        if keys is not None:
            k = row.get(ID_COLUMN)
            if k is None or str(k).strip() == "":
                raise MissingValue(i, ID_COLUMN)
            keys.append(str(k).strip())
    if keys is not None and len(set(keys)) != len(keys):
        raise ConfigError("id column contains duplicate keys")

    levels: dict[str, tuple[str, ...]] = {}
    codes: dict[str, np.ndarray] = {}
    for c in cov_names:
        lv = declared[c]
        if lv is None:
            lv = sort_levels(raw_cov[c])
        else:
            lv = tuple(str(x) for x in lv)
            allowed = set(lv)
            for i, v in enumerate(raw_cov[c]):
                if v not in allowed:
                    raise UnknownLevel(i, COVARIATE_PREFIX + c, v)
        index = {v: k for k, v in enumerate(lv)}
        levels[c] = lv
        codes[c] = np.array([index[v] for v in raw_cov[c]], dtype=np.int64)

    ds = Dataset(
        z=cols["z"],
        d=cols["d"],
        a=cols["a"],
        y=cols["y"],
        covariates=codes,
        levels=levels,
        scores=scores,
        score_names=score_names,
        keys=None if keys is None else tuple(keys),
        schema=DatasetSchema(covariates=levels, subgroups=schema.subgroups, score_ranges=schema.score_ranges),
    )
    ds.require_both_arms("validate_dataset")
    return ds


def from_arrays(
    z, d, a, y,
    covariates: Mapping[str, Sequence] | None = None,
    scores: np.ndarray | None = None,
    score_names: Sequence[str] = (),
    weights=None,
    keys: Sequence[str] | None = None,
    check_arms: bool = True,
) -> Dataset:
    """Build a Dataset from in-memory arrays (covariate values become level strings)."""
    covariates = covariates or {}
    levels, codes = {}, {}
    for name, values in covariates.items():
        vals = [str(v) for v in values]
        lv = sort_levels(vals)
        index = {v: k for k, v in enumerate(lv)}
        levels[name] = lv
        codes[name] = np.array([index[v] for v in vals], dtype=np.int64)
    arrays = {}
    for col, v in zip(BINARY_COLUMNS, (z, d, a, y)):
        v = np.asarray(v)
        if v.size and not np.all((v == 0) | (v == 1)):
            bad = int(np.flatnonzero((v != 0) & (v != 1))[0])
            raise NonBinaryValue(bad, col, v[bad])
        arrays[col] = v
    ds = Dataset(
        covariates=codes,
        levels=levels,
        scores=scores,
        score_names=tuple(score_names),
        weights=weights,
        keys=None if keys is None else tuple(str(k) for k in keys),
        schema=DatasetSchema(covariates=levels),
        **arrays,
    )
    if check_arms:
        ds.require_both_arms("from_arrays")
    return ds


@dataclass(frozen=True)
class LossSpec:
    """False-positive loss ``l01`` relative to a unit false-negative loss.

    ``l00`` and ``l11`` are the optional true-negative and true-positive
    losses of the generic loss; ``l10 = 1`` always.
    """

    l01: float
    l00: float = 0.0
    l11: float = 0.0

    def __post_init__(self):
        for name in ("l01", "l00", "l11"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"loss {name} must be a finite nonnegative number, got {v!r}")

    @property
    def l10(self) -> float:
        return 1.0

    @property
    def generic(self) -> bool:
        return self.l00 != 0.0 or self.l11 != 0.0


@dataclass(frozen=True)
class ConfusionMatrix:
    """Joint proportions ``p_yd = P(Y(0) = y, D* = d)``."""

    p00: float
    p01: float
    p10: float
    p11: float

    def __post_init__(self):
        vals = (self.p00, self.p01, self.p10, self.p11)
        if any(v < -SUM_TOL for v in vals):
            raise ValueError(f"confusion matrix entries must be nonnegative: {vals}")
        if abs(math.fsum(vals) - 1.0) > SUM_TOL:
            raise ValueError(f"confusion matrix entries must sum to 1, got {math.fsum(vals)!r}")

    def as_array(self) -> np.ndarray:
        return np.array([[self.p00, self.p01], [self.p10, self.p11]])


def classification_risk(cm: ConfusionMatrix, loss: LossSpec) -> float:
    """Expected loss ``p10 + l01 * p01`` (plus ``l00 p00 + l11 p11`` for generic losses)."""
    risk = cm.p10 + loss.l01 * cm.p01
    if loss.generic:
        risk += loss.l11 * cm.p11 + loss.l00 * cm.p00
    return risk


@dataclass(frozen=True)
class AgreementTable:
    """Human decision (rows) by AI recommendation (columns) within one arm."""

    arm: int
    counts: np.ndarray  # counts[d, a]
    n: int

    @property
    def proportions(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def agreement(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def to_dict(self) -> dict[str, Any]:
        p = self.proportions
        return {
            "arm": self.arm,
            "n": self.n,
            "counts": {f"d{d}_a{a}": float(self.counts[d, a]) for d in (0, 1) for a in (0, 1)},
            "proportions": {f"d{d}_a{a}": float(p[d, a]) for d in (0, 1) for a in (0, 1)},
            "agreement": self.agreement,
        }


def agreement_table(ds: Dataset, arm: int) -> AgreementTable:
    m = ds.z == arm
    if not np.any(m):
        raise EmptyArm(arm, "agreement_table")
    w = ds.w[m]
    counts = np.zeros((2, 2))
    np.add.at(counts, (ds.d[m], ds.a[m]), w)
    return AgreementTable(arm=arm, counts=counts, n=int(m.sum()))


@dataclass(frozen=True)
class AgreementDifference:
    control: AgreementTable
    treated: AgreementTable
    difference: float
    se: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "control": self.control.to_dict(),
            "treated": self.treated.to_dict(),
            "difference": self.difference,
            "se": self.se,
        }


def agreement_difference(ds: Dataset) -> AgreementDifference:
    """Treated minus control agreement rate with a difference-in-means SE."""
    t0, t1 = agreement_table(ds, 0), agreement_table(ds, 1)
    p0, p1 = t0.agreement, t1.agreement
    n0, n1 = t0.counts.sum(), t1.counts.sum()
    se = math.sqrt(p1 * (1 - p1) / n1 + p0 * (1 - p0) / n0)
    return AgreementDifference(control=t0, treated=t1, difference=p1 - p0, se=se)


Predicate = Callable[[Dataset], np.ndarray]
