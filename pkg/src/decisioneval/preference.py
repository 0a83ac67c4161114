"""Preference regions over the false-positive loss ratio ``l01``.

For each grid value two one-sided tests are run.  For the point-identified
comparison (human-alone vs human-with-AI) both tests use the Wald statistic
of the risk difference; for comparisons involving the AI alone the lower
bound is tested against ``L <= 0`` and the upper bound against ``U >= 0``.
Estimates are affine and variances quadratic in ``l01``, so every grid point
is reconstructed from three moments of two cached influence bases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .bounds import bound_influences, estimate_ai_vs_human_bounds_direct
from .core import Dataset
from .errors import ConfigError, ContradictoryRejection
from .nuisance import NuisanceFit
from .point import AffineInfluence, difference_basis, estimate_risk_difference_direct, normal_quantile

COMPARISONS = ("human_vs_humanAI", "ai_vs_human", "ai_vs_humanAI")
# (label when the first system is preferred, label when the second is)
LABELS = {
    "human_vs_humanAI": ("prefer_human", "prefer_human_ai"),
    "ai_vs_human": ("prefer_human", "prefer_ai"),
    "ai_vs_humanAI": ("prefer_human_ai", "prefer_ai"),
}
AMBIGUOUS = "ambiguous"
ZERO_TOL = 1e-14


def default_grid(points: int = 400, lo: float = 0.01, hi: float = 100.0) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), points)


def _check_grid(grid: Sequence[float]) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ConfigError("grid must be a nonempty sequence")
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise ConfigError("grid values must be positive and finite")
    if np.any(np.diff(g) <= 0):
        raise ConfigError("grid must be strictly increasing")
    return g


def _line(basis: AffineInfluence, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = basis.weights
    mb = float((w * basis.base).sum() / w.sum())
    ms = float((w * basis.slope).sum() / w.sum())
    vb, c, vs = basis.moments()
    var = np.maximum(vb + 2 * grid * c + grid * grid * vs, 0.0)
    return mb + grid * ms, var


def _stat(est: np.ndarray, se: np.ndarray) -> np.ndarray:
    est = np.where(np.abs(est) <= ZERO_TOL, 0.0, est)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(se > 0, est / np.where(se > 0, se, 1.0), np.sign(est) * np.inf)
    return out


@dataclass(frozen=True, eq=False)
class PreferenceRegion:
    comparison: str
    alpha: float
    grid: np.ndarray
    labels: tuple[str, ...]
    lower: np.ndarray       # estimate tested against <= 0
    upper: np.ndarray       # estimate tested against >= 0
    se_lower: np.ndarray
    se_upper: np.ndarray
    grid_spec: str = ""

    def runs(self) -> list[tuple[str, float, float]]:
        """Maximal runs of equal labels as (label, first l01, last l01)."""
        out: list[tuple[str, float, float]] = []
        start = 0
        for i in range(1, len(self.labels) + 1):
            if i == len(self.labels) or self.labels[i] != self.labels[start]:
                out.append((self.labels[start], float(self.grid[start]), float(self.grid[i - 1])))
                start = i
        return out

    def threshold(self, label: str) -> float | None:
        """Smallest l01 carrying ``label`` when the label forms a single run, else None."""
        runs = [r for r in self.runs() if r[0] == label]
        return runs[0][1] if len(runs) == 1 else None

    def fraction(self, label: str) -> float:
        return sum(lab == label for lab in self.labels) / len(self.labels)

    def to_dict(self) -> dict[str, Any]:
        return {
            "comparison": self.comparison,
            "alpha": self.alpha,
            "grid": self.grid_spec or f"{len(self.grid)} points in [{self.grid[0]:g},{self.grid[-1]:g}]",
            "labels": list(self.labels),
            "runs": [{"label": lab, "l01_min": lo, "l01_max": hi} for lab, lo, hi in self.runs()],
            "note": "pointwise tests; no multiplicity correction across grid points",
        }


def preference_statistics(
    ds: Dataset, fit: NuisanceFit, comparison: str, grid: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(lower estimate, its se, upper estimate, its se) on every grid point."""
    n = ds.total_weight
    if comparison == "human_vs_humanAI":
        est, var = _line(difference_basis(ds, fit), grid)
        se = np.sqrt(var / n)
        return est, se, est, se
    if comparison in ("ai_vs_human", "ai_vs_humanAI"):
        inf = bound_influences(ds, fit, 0 if comparison == "ai_vs_human" else 1)
        lo, vlo = _line(inf.lower_basis(), grid)
        hi, vhi = _line(inf.upper_basis(), grid)
        return lo, np.sqrt(vlo / n), hi, np.sqrt(vhi / n)
    raise ConfigError(f"unknown comparison {comparison!r}; expected one of {COMPARISONS}")


def direct_statistics(ds: Dataset, fit: NuisanceFit, comparison: str, l01: float) -> tuple[float, float, float, float]:
    """Same as :func:`preference_statistics` at one point, recomputing influence values."""
    if comparison == "human_vs_humanAI":
        r = estimate_risk_difference_direct(ds, fit, l01)
        return r.beta_hat, r.se, r.beta_hat, r.se
    b = estimate_ai_vs_human_bounds_direct(ds, fit, 0 if comparison == "ai_vs_human" else 1, l01)
    return b.raw_lower, b.se_lower, b.raw_upper, b.se_upper


def invert_preference(
    ds: Dataset, fit: NuisanceFit, comparison: str,
    grid: Sequence[float] | None = None, alpha: float = 0.05,
) -> PreferenceRegion:
    """Label each grid value of ``l01`` by the system a one-sided test supports.

    Raises
    ------
    ContradictoryRejection
        Both one-sided nulls are rejected at some grid point.
    """
    if comparison not in COMPARISONS:
        raise ConfigError(f"unknown comparison {comparison!r}; expected one of {COMPARISONS}")
    if not 0 < alpha < 0.5:
        raise ConfigError("alpha must lie in (0, 0.5)")
    spec = ""
    if grid is None:
        grid = default_grid()
        spec = "400 log-spaced in [0.01,100]"
    g = _check_grid(grid)
    ds.require_both_arms("preference inversion")
    lo, se_lo, hi, se_hi = preference_statistics(ds, fit, comparison, g)
    q = normal_quantile(1 - alpha)
    first = _stat(lo, se_lo) > q
    second = _stat(hi, se_hi) < -q
    if np.any(first & second):
        bad = float(g[np.flatnonzero(first & second)[0]])
        raise ContradictoryRejection(f"both one-sided nulls rejected at l01={bad:g}")
    name_first, name_second = LABELS[comparison]
    labels = tuple(name_first if f else (name_second if s else AMBIGUOUS) for f, s in zip(first, second))
    return PreferenceRegion(comparison, alpha, g, labels, lo, hi, se_lo, se_hi, spec)


def render_region(block: Mapping[str, Any], width: int = 60) -> str:
    """Three-band text display of a preference report block.

    One row per label; columns bin the grid points in increasing order.
    """
    labels = block["labels"]
    first, second = LABELS[block["comparison"]]
    bins = np.array_split(np.arange(len(labels)), min(width, len(labels)))
    rows = []
    for label in (first, AMBIGUOUS, second):
        marks = "".join("#" if any(labels[i] == label for i in b) else " " for b in bins)
        rows.append(f"{label:>16} |{marks}|")
    lo, hi = block["runs"][0]["l01_min"], block["runs"][-1]["l01_max"]
    half = len(bins) // 2
    rows.append(" " * 18 + f"{lo:g}".ljust(half) + f"{hi:g}".rjust(len(bins) - half))
    return "\n".join(rows)
