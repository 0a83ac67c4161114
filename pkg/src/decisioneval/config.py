"""Run configuration: one INI document with a section per module.

Example::

    [data]
    input = trial.csv

    [schema]
    race = white, nonwhite
    gender = *                ; levels inferred from the data

    [scores]
    fta = 1-6

    [nuisance]
    model_kind = stratified_frequency
    folds = 5

    [loss]
    l01 = 0.5, 1, 2

    [prefer]
    alpha = 0.05
    comparisons = human_vs_humanAI, ai_vs_human

    [subgroups]
    nonwhite = race=nonwhite

    [policy]
    kinds = provision
    directions = increasing

    [axes]
    fta = 1-6
    nca = 1-6
    nvca = 0-1

A JSON document with the same fields (for instance the ``config`` block of
an earlier report) is accepted as well, which makes reports replayable.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping, Sequence

from .core import DEFAULT_SCORE_RANGES, DatasetSchema, Subgroup
from .errors import ConfigError, IoError
from .nuisance import NuisanceConfig
from .oracle import SimConfig
from .policy import DEFAULT_AXES, DIRECTIONS, POLICY_KINDS
from .preference import COMPARISONS

SECTIONS = ("run", "data", "schema", "scores", "nuisance", "loss", "prefer", "bounds",
            "subgroups", "policy", "axes", "sim", "oracle")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a list of numbers, got {text!r}") from None


def _words(text: str) -> list[str]:
    return [v.strip() for v in text.replace(";", ",").split(",") if v.strip()]


def _int_levels(text: str) -> list[int]:
    """``"1-6"`` or ``"0, 1, 2"``."""
    text = text.strip()
    try:
        if "-" in text and "," not in text:
            lo, hi = (int(v) for v in text.split("-"))
            if lo > hi:
                raise ConfigError(f"empty range {text!r}")
            return list(range(lo, hi + 1))
        return [int(v) for v in _words(text)]
    except ValueError:
        raise ConfigError(f"expected integer levels, got {text!r}") from None


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    out: str | None = None
    seed: int = 0
    covariates: Mapping[str, tuple[str, ...] | None] | None = None
    score_ranges: Mapping[str, tuple[int, int]] = field(default_factory=lambda: dict(DEFAULT_SCORE_RANGES))
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    losses: tuple[float, ...] = (1.0,)
    l00: float = 0.0
    l11: float = 0.0
    alpha: float = 0.05
    grid_min: float = 0.01
    grid_max: float = 100.0
    grid_points: int = 400
    comparisons: tuple[str, ...] = COMPARISONS
    resamples: int = 0
    subgroups: Mapping[str, str] = field(default_factory=dict)
    kinds: tuple[str, ...] = POLICY_KINDS
    directions: tuple[str, ...] = ("increasing",)
    axes: Mapping[str, tuple[int, ...]] = field(default_factory=lambda: dict(DEFAULT_AXES))
    sim: Mapping[str, Any] = field(default_factory=dict)
    populations: int = 500
    max_strata: int = 8

    def __post_init__(self):
        if not self.losses or any(not l > 0 for l in self.losses):
            raise ConfigError("loss values l01 must be positive")
        if not 0 < self.alpha < 0.5:
            raise ConfigError("alpha must lie in (0, 0.5)")
        if not 0 < self.grid_min < self.grid_max or self.grid_points < 2:
            raise ConfigError("grid needs 0 < grid_min < grid_max and at least 2 points")
        for c in self.comparisons:
            if c not in COMPARISONS:
                raise ConfigError(f"unknown comparison {c!r}; expected one of {COMPARISONS}")
        for k in self.kinds:
            if k not in POLICY_KINDS:
                raise ConfigError(f"unknown policy kind {k!r}; expected one of {POLICY_KINDS}")
        for d in self.directions:
            if d not in DIRECTIONS:
                raise ConfigError(f"unknown direction {d!r}; expected one of {DIRECTIONS}")
        if self.resamples < 0 or self.populations < 1 or self.max_strata < 1:
            raise ConfigError("resamples must be >= 0; populations and max_strata >= 1")
        self.schema()  # validates subgroup references
        self.sim_config()
        if self.nuisance.seed != self.seed:
            object.__setattr__(self, "nuisance", replace(self.nuisance, seed=self.seed))

    def schema(self) -> DatasetSchema:
        groups = {name: Subgroup.parse(name, text) for name, text in self.subgroups.items()}
        return DatasetSchema(covariates=self.covariates, subgroups=groups, score_ranges=dict(self.score_ranges))

    def subgroup_objects(self) -> list[Subgroup]:
        return [Subgroup.parse(name, text) for name, text in sorted(self.subgroups.items())]

    def sim_config(self) -> SimConfig:
        params = dict(self.sim)
        params.pop("scores", None)
        if "e_range" in params:
            params["e_range"] = tuple(params["e_range"])
        try:
            return SimConfig(seed=self.seed, **params)
        except TypeError as exc:
            raise ConfigError(f"bad [sim] settings: {exc}") from None

    def to_dict(self) -> dict[str, Any]:
        """Echo for reports; the output path is left out so reports do not depend on it."""
        return {
            "input": self.input,
            "seed": self.seed,
            "covariates": None if self.covariates is None else {
                k: None if v is None else list(v) for k, v in self.covariates.items()},
            "score_ranges": {k: list(v) for k, v in self.score_ranges.items()},
            "nuisance": self.nuisance.to_dict(),
            "losses": list(self.losses),
            "l00": self.l00,
            "l11": self.l11,
            "alpha": self.alpha,
            "grid_min": self.grid_min,
            "grid_max": self.grid_max,
            "grid_points": self.grid_points,
            "comparisons": list(self.comparisons),
            "resamples": self.resamples,
            "subgroups": dict(self.subgroups),
            "kinds": list(self.kinds),
            "directions": list(self.directions),
            "axes": {k: list(v) for k, v in self.axes.items()},
            "sim": dict(self.sim),
            "populations": self.populations,
            "max_strata": self.max_strata,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kw: dict[str, Any] = dict(data)
        try:
            if "nuisance" in kw and not isinstance(kw["nuisance"], NuisanceConfig):
                nz = dict(kw["nuisance"])
                if nz.get("stratify_by") is not None:
                    nz["stratify_by"] = tuple(nz["stratify_by"])
                kw["nuisance"] = NuisanceConfig(**nz)
            if kw.get("covariates") is not None:
                kw["covariates"] = {k: None if v is None else tuple(v) for k, v in kw["covariates"].items()}
            if "score_ranges" in kw:
                kw["score_ranges"] = {k: tuple(v) for k, v in kw["score_ranges"].items()}
            if "axes" in kw:
                kw["axes"] = {k: tuple(v) for k, v in kw["axes"].items()}
            for key in ("losses", "comparisons", "kinds", "directions"):
                if key in kw:
                    kw[key] = tuple(kw[key])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"malformed configuration: {exc}") from None


def _ini_to_dict(parser: configparser.ConfigParser) -> dict[str, Any]:
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
    out: dict[str, Any] = {}

    def get(section, key, conv=str):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return conv(raw)
            except ValueError:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
        return None

    def allowed(section, keys):
        if parser.has_section(section):
            extra = set(parser.options(section)) - set(keys)
            if extra:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")

    allowed("run", ("seed", "out"))
    allowed("data", ("input",))
    allowed("loss", ("l01", "l00", "l11"))
    allowed("prefer", ("alpha", "grid_min", "grid_max", "grid_points", "comparisons"))
    allowed("bounds", ("resamples",))
    allowed("policy", ("kinds", "directions"))
    allowed("oracle", ("populations", "max_strata"))
    for key, section, conv in (
        ("seed", "run", int), ("out", "run", str), ("input", "data", str),
        ("l00", "loss", float), ("l11", "loss", float),
        ("alpha", "prefer", float), ("grid_min", "prefer", float), ("grid_max", "prefer", float),
        ("grid_points", "prefer", int), ("resamples", "bounds", int),
        ("populations", "oracle", int), ("max_strata", "oracle", int),
    ):
        v = get(section, key, conv)
        if v is not None:
            out[key] = v
    if (v := get("loss", "l01", _floats)) is not None:
        out["losses"] = v
    if (v := get("prefer", "comparisons", _words)) is not None:
        out["comparisons"] = v
    if (v := get("policy", "kinds", _words)) is not None:
        out["kinds"] = v
    if (v := get("policy", "directions", _words)) is not None:
        out["directions"] = v
    if parser.has_section("schema"):
        out["covariates"] = {
            k: None if v.strip() in ("", "*") else [s.strip() for s in v.replace("|", ",").split(",") if s.strip()]
            for k, v in parser.items("schema")
        }
    if parser.has_section("scores"):
        ranges = {}
        for k, v in parser.items("scores"):
            levels = _int_levels(v)
            ranges[k] = [min(levels), max(levels)]
        out["score_ranges"] = ranges
    if parser.has_section("axes"):
        out["axes"] = {k: _int_levels(v) for k, v in parser.items("axes")}
    if parser.has_section("subgroups"):
        out["subgroups"] = dict(parser.items("subgroups"))
    if parser.has_section("nuisance"):
        nz: dict[str, Any] = {}
        conv = {"propensity_value": float, "smoothing": float, "folds": int, "clip_eta": float,
                "ridge": float, "max_iter": int}
        for k, v in parser.items("nuisance"):
            if k == "stratify_by":
                nz[k] = _words(v)
            elif k == "propensity_table":
                table = {}
                for item in _words(v):
                    key, _, val = item.partition(":")
                    table[key.strip()] = float(val)
                nz[k] = table
            elif k in conv:
                try:
                    nz[k] = conv[k](v)
                except ValueError:
                    raise ConfigError(f"[nuisance] {k}: cannot parse {v!r}") from None
            elif k in ("propensity_mode", "model_kind"):
                nz[k] = v.strip()
            else:
                raise ConfigError(f"unknown key in [nuisance]: {k!r}")
        out["nuisance"] = nz
    if parser.has_section("sim"):
        sim: dict[str, Any] = {}
        for k, v in parser.items("sim"):
            if k in ("strata", "n"):
                sim[k] = int(v)
            elif k in ("concentration", "zero_prob", "effect"):
                sim[k] = float(v)
            elif k == "e_range":
                sim[k] = _floats(v)
            elif k == "kind":
                sim[k] = v.strip()
            elif k == "scores":
                sim[k] = v.strip().lower() in ("1", "true", "yes")
            else:
                raise ConfigError(f"unknown key in [sim]: {k!r}")
        out["sim"] = sim
    return out


def load_config(path: str | os.PathLike | None) -> dict[str, Any]:
    """Read an INI or JSON configuration into a plain dict (no validation yet)."""
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return dict(data.get("config", data))
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return _ini_to_dict(parser)


def resolve_config(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> RunConfig:
    """File values overridden by command-line values (``None`` means not given)."""
    data = dict(base)
    for k, v in overrides.items():
        if v is not None:
            data[k] = v
    return RunConfig.from_dict(data)
