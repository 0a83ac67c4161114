"""Monotone policies over a discrete risk-score lattice.

A policy selects a set of lattice cells.  ``increasing`` policies are
up-sets (raising any score never switches the rule off); ``decreasing``
policies are down-sets.  The empirical risk of a policy is a sum of per-cell
weights, so the best monotone policy is a minimum-weight closure, found
exactly by a max-flow/min-cut computation over rational capacities.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .bounds import bound_influences
from .core import Dataset, LossSpec
from .errors import ConfigError, MissingScores, UnknownCell
from .nuisance import NuisanceFit
from .point import difference_basis, variance_of

DEFAULT_AXES: dict[str, tuple[int, ...]] = {
    "fta": tuple(range(1, 7)),
    "nca": tuple(range(1, 7)),
    "nvca": (0, 1),
}
DIRECTIONS = ("increasing", "decreasing")
POLICY_KINDS = ("provision", "follow")

Cell = tuple[int, ...]


@dataclass(frozen=True, eq=False)
class ScoreLattice:
    """Product lattice of ordered score axes with per-record cell membership."""

    axes: tuple[tuple[str, tuple[int, ...]], ...]
    cells: tuple[Cell, ...]
    record_cell: np.ndarray       # cell index per record
    counts: np.ndarray            # records per cell

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.axes)

    @property
    def size(self) -> int:
        return len(self.cells)

    def index(self, cell: Sequence[int]) -> int:
        try:
            return self._lookup[tuple(int(v) for v in cell)]
        except KeyError:
            raise UnknownCell(f"cell {tuple(cell)} is not in the lattice") from None

    @property
    def _lookup(self) -> dict[Cell, int]:
        cache = self.__dict__.get("_lookup_cache")
        if cache is None:
            cache = {c: i for i, c in enumerate(self.cells)}
            object.__setattr__(self, "_lookup_cache", cache)
        return cache

    def covers(self) -> list[tuple[int, int]]:
        """Pairs (lower, upper) differing by one step on one axis (the transitive reduction)."""
        pos = [{v: k for k, v in enumerate(levels)} for _, levels in self.axes]
        out = []
        for i, c in enumerate(self.cells):
            for ax, (_, levels) in enumerate(self.axes):
                k = pos[ax][c[ax]]
                if k + 1 < len(levels):
                    up = c[:ax] + (levels[k + 1],) + c[ax + 1:]
                    out.append((i, self._lookup[up]))
        return out

    def leq(self, c1: Cell, c2: Cell) -> bool:
        pos = [{v: k for k, v in enumerate(levels)} for _, levels in self.axes]
        return all(pos[ax][u] <= pos[ax][v] for ax, (u, v) in enumerate(zip(c1, c2)))

    def is_monotone(self, selected: Iterable[Cell], direction: str) -> bool:
        chosen = {self.index(c) for c in selected}
        for lo, hi in self.covers():
            if direction == "increasing" and lo in chosen and hi not in chosen:
                return False
            if direction == "decreasing" and hi in chosen and lo not in chosen:
                return False
        return True


def _axes_from(spec: Mapping[str, Sequence[int]] | None) -> tuple[tuple[str, tuple[int, ...]], ...]:
    spec = DEFAULT_AXES if spec is None else spec
    axes = []
    for name, levels in spec.items():
        levels = tuple(int(v) for v in levels)
        if not levels or len(set(levels)) != len(levels):
            raise ConfigError(f"axis {name!r} needs distinct levels")
        axes.append((name, levels))
    if not axes:
        raise ConfigError("at least one score axis is required")
    return tuple(axes)


def lattice_from_axes(axis_spec: Mapping[str, Sequence[int]]) -> ScoreLattice:
    """Lattice without records (all counts zero)."""
    axes = _axes_from(axis_spec)
    cells = tuple(itertools.product(*(levels for _, levels in axes)))
    return ScoreLattice(axes, cells, np.zeros(0, dtype=np.int64), np.zeros(len(cells), dtype=np.int64))


def build_lattice(ds: Dataset, axis_spec: Mapping[str, Sequence[int]] | None = None) -> ScoreLattice:
    """Map every record to its score cell.

    Raises
    ------
    MissingScores
        The dataset lacks a score column named by an axis.
    UnknownCell
        A record's score is not a declared level of its axis.
    """
    axes = _axes_from(axis_spec)
    if ds.scores is None:
        raise MissingScores("dataset has no score columns")
    cols = []
    for name, _ in axes:
        if name not in ds.score_names:
            raise MissingScores(f"dataset has no score column {name!r}")
        cols.append(ds.score_names.index(name))
    cells = tuple(itertools.product(*(levels for _, levels in axes)))
    lookup = {c: i for i, c in enumerate(cells)}
    rec = np.empty(ds.n, dtype=np.int64)
    sub = ds.scores[:, cols]
    for i in range(ds.n):
        key = tuple(int(v) for v in sub[i])
        if key not in lookup:
            raise UnknownCell(f"record {i} has scores {key} outside the declared axes")
        rec[i] = lookup[key]
    counts = np.bincount(rec, minlength=len(cells))
    return ScoreLattice(axes, cells, rec, counts)


# --- minimum-weight closure ---------------------------------------------------------


def _max_flow_source_side(n: int, source_caps: dict[int, Fraction], sink_caps: dict[int, Fraction],
                          arcs: list[tuple[int, int]]) -> set[int]:
    """Edmonds-Karp on exact capacities; returns nodes reachable from the source in the residual graph.

    Nodes are 0..n-1; the source is n and the sink n+1.  ``arcs`` have
    infinite capacity.
    """
    s, t = n, n + 1
    INF = None  # marker for infinite capacity
    cap: dict[tuple[int, int], Fraction | None] = {}
    adj: list[set[int]] = [set() for _ in range(n + 2)]

    def add(u, v, c):
        if (u, v) in cap and cap[(u, v)] is INF:
            return
        cap[(u, v)] = c if c is INF else cap.get((u, v), Fraction(0)) + c
        cap.setdefault((v, u), Fraction(0))
        adj[u].add(v)
        adj[v].add(u)

    for v, c in source_caps.items():
        add(s, v, c)
    for v, c in sink_caps.items():
        add(v, t, c)
    for u, v in arcs:
        add(u, v, INF)

    def residual(u, v):
        c = cap.get((u, v), Fraction(0))
        return c is INF or c > 0

    order = [sorted(a) for a in adj]
    while True:
        parent = {s: None}
        q = deque([s])
        while q and t not in parent:
            u = q.popleft()
            for v in order[u]:
                if v not in parent and residual(u, v):
                    parent[v] = u
                    q.append(v)
        if t not in parent:
            return {v for v in parent if v < n}
        path, v = [], t
        while parent[v] is not None:
            path.append((parent[v], v))
            v = parent[v]
        bottleneck = min(cap[e] for e in path if cap[e] is not INF)
        for u, v in path:
            if cap[(u, v)] is not INF:
                cap[(u, v)] -= bottleneck
            if cap[(v, u)] is not INF:
                cap[(v, u)] += bottleneck


def solve_monotone(lattice: ScoreLattice, weights: Sequence[float], direction: str) -> tuple[Cell, ...]:
    """Inclusion-minimal monotone cell set minimising the total weight."""
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}")
    w = [Fraction(float(x)) for x in weights]
    if len(w) != lattice.size:
        raise ConfigError("one weight per lattice cell is required")
    covers = lattice.covers()
    # selecting u forces v: increasing follows the order upward, decreasing downward
    arcs = covers if direction == "increasing" else [(hi, lo) for lo, hi in covers]
    src = {i: -x for i, x in enumerate(w) if x < 0}
    snk = {i: x for i, x in enumerate(w) if x > 0}
    chosen = _max_flow_source_side(lattice.size, src, snk, arcs)
    return tuple(lattice.cells[i] for i in sorted(chosen))


# --- policies -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MonotonePolicy:
    """A learned or supplied policy.

    ``weights[c]`` is the cell's contribution to the objective: the sum of
    record influence values in the cell divided by the total record weight,
    so the objective is the sum of selected weights.  ``cell_means`` holds
    the per-cell averages.
    """

    kind: str
    direction: str | None
    selected: tuple[Cell, ...]
    value: float
    se: float
    weights: np.ndarray
    cell_means: np.ndarray
    lattice: ScoreLattice
    l01: float

    def to_dict(self) -> dict[str, Any]:
        empty = [list(c) for c, n in zip(self.lattice.cells, self.lattice.counts) if n == 0]
        return {
            "kind": self.kind,
            "direction": self.direction,
            "l01": self.l01,
            "axes": [name for name, _ in self.lattice.axes],
            "selected_cells": [list(c) for c in self.selected],
            "value": self.value,
            "se": self.se,
            "cell_counts": [[list(c), int(n)] for c, n in zip(self.lattice.cells, self.lattice.counts)],
            "empty_cells": empty,
        }


def _influence(ds: Dataset, fit: NuisanceFit, kind: str, l01: float) -> np.ndarray:
    if kind == "provision":
        return difference_basis(ds, fit).values(l01)
    if kind == "follow":
        return bound_influences(ds, fit, 0).upper_basis().values(l01)
    raise ConfigError(f"policy kind must be one of {POLICY_KINDS}")


def cell_weights(ds: Dataset, lattice: ScoreLattice, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell objective contributions and per-cell means; empty cells get exactly 0."""
    w = ds.w
    total = ds.total_weight
    contrib = np.zeros(lattice.size)
    means = np.zeros(lattice.size)
    for k in range(lattice.size):
        m = lattice.record_cell == k
        if np.any(m):
            contrib[k] = math.fsum(w[m] * psi[m]) / total
            cw = math.fsum(w[m])
            means[k] = math.fsum(w[m] * psi[m]) / cw if cw > 0 else 0.0
    return contrib, means


def _value_and_se(ds: Dataset, lattice: ScoreLattice, psi: np.ndarray, chosen: set[int],
                  contrib: np.ndarray) -> tuple[float, float]:
    value = math.fsum(contrib[k] for k in sorted(chosen))
    ind = np.isin(lattice.record_cell, sorted(chosen))
    _, var = variance_of(psi * ind, ds.w)
    return value, math.sqrt(var / ds.total_weight)


def _learn(ds, fit, loss, direction, kind, lattice, axes) -> MonotonePolicy:
    l01 = loss.l01 if isinstance(loss, LossSpec) else float(loss)
    ds.require_both_arms(f"learn {kind} policy")
    lattice = lattice or build_lattice(ds, axes)
    psi = _influence(ds, fit, kind, l01)
    contrib, means = cell_weights(ds, lattice, psi)
    selected = solve_monotone(lattice, contrib, direction)
    chosen = {lattice.index(c) for c in selected}
    value, se = _value_and_se(ds, lattice, psi, chosen, contrib)
    return MonotonePolicy(kind, direction, selected, value, se, contrib, means, lattice, l01)


def learn_provision_policy(
    ds: Dataset, fit: NuisanceFit, loss: LossSpec | float, direction: str = "increasing",
    lattice: ScoreLattice | None = None, axes: Mapping[str, Sequence[int]] | None = None,
) -> MonotonePolicy:
    """Monotone rule for when to show the AI recommendation.

    The value is the estimated risk change relative to never showing it.
    """
    return _learn(ds, fit, loss, direction, "provision", lattice, axes)


def learn_follow_policy(
    ds: Dataset, fit: NuisanceFit, loss: LossSpec | float, direction: str = "increasing",
    lattice: ScoreLattice | None = None, axes: Mapping[str, Sequence[int]] | None = None,
) -> MonotonePolicy:
    """Monotone rule for when to follow the AI recommendation.

    Minimises the estimated worst-case (upper-bound) excess risk over the
    human-alone system.
    """
    return _learn(ds, fit, loss, direction, "follow", lattice, axes)


def evaluate_policy_value(
    ds: Dataset, fit: NuisanceFit, cells: Iterable[Sequence[int]], kind: str,
    loss: LossSpec | float, lattice: ScoreLattice | None = None,
    axes: Mapping[str, Sequence[int]] | None = None,
) -> tuple[float, float]:
    """Objective value and standard error of an arbitrary cell set."""
    l01 = loss.l01 if isinstance(loss, LossSpec) else float(loss)
    lattice = lattice or build_lattice(ds, axes)
    chosen = {lattice.index(c) for c in cells}
    psi = _influence(ds, fit, kind, l01)
    contrib, _ = cell_weights(ds, lattice, psi)
    return _value_and_se(ds, lattice, psi, chosen, contrib)


def render_policy(block: Mapping[str, Any]) -> str:
    """Text grid of a policy report block, one panel per level of the axes beyond the first two.

    ``#`` marks selected cells, ``.`` unselected ones, ``-`` empty cells;
    the number is the record count.
    """
    names = list(block["axes"])
    counts = {tuple(c): int(n) for c, n in block["cell_counts"]}
    chosen = {tuple(c) for c in block["selected_cells"]}
    levels = [list(dict.fromkeys(c[k] for c in counts)) for k in range(len(names))]

    def mark(cell):
        sym = "#" if cell in chosen else ("-" if counts[cell] == 0 else ".")
        return f"{sym}{counts[cell]:>4}"

    if len(names) == 1:
        return f"{names[0]}: " + " ".join(mark((v,)) for v in levels[0])
    panels = []
    rest = list(zip(names[2:], levels[2:]))
    for extra in itertools.product(*(lv for _, lv in rest)):
        title = ", ".join(f"{n}={v}" for (n, _), v in zip(rest, extra)) or "all"
        lines = [f"[{title}]  rows {names[0]}, columns {names[1]}",
                 "      " + " ".join(f"{c:>5}" for c in levels[1])]
        for r in levels[0]:
            lines.append(f"{r:>5} " + " ".join(mark((r, c) + tuple(extra)) for c in levels[1]))
        panels.append("\n".join(lines))
    return "\n\n".join(panels)
