"""Command-line interface.

Subcommands: evaluate, bounds, prefer, learn-policy, simulate, oracle-check.
Each run writes one JSON report (to ``--out`` or stdout); ``--text`` also
writes a plain-text rendering of that report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .bounds import alt_metric_bounds, estimate_ai_vs_human_bounds, per_system_risk_bounds, ALT_METRICS, SYSTEMS
from .config import RunConfig, load_config, resolve_config
from .core import Dataset, LossSpec, agreement_difference, validate_dataset
from .errors import ConfigError, DecisionEvalError, IoError
from .nuisance import fit_nuisance
from .oracle import (
    PAIRS,
    attach_scores,
    make_population,
    load_population,
    oracle_check,
    sample_dataset,
    save_population,
    true_risk,
    true_risk_diff,
)
from .point import METRICS, estimate_metric_difference, estimate_risk_difference, subgroup_analysis
from .policy import DEFAULT_AXES, build_lattice, learn_follow_policy, learn_provision_policy, render_policy
from .preference import default_grid, invert_preference, render_region

COMMANDS = ("evaluate", "bounds", "prefer", "learn-policy", "simulate", "oracle-check")


# --- report helpers --------------------------------------------------------------------


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else ("nan" if math.isnan(f) else ("inf" if f > 0 else "-inf"))
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(report: Mapping[str, Any]) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _loss(cfg: RunConfig, l01: float) -> LossSpec:
    return LossSpec(l01=l01, l00=cfg.l00, l11=cfg.l11)


def _load_data(cfg: RunConfig) -> Dataset:
    if cfg.input is None:
        raise ConfigError("no input data given (use --input or [data] input)")
    if not os.path.exists(cfg.input):
        raise IoError(f"input file not found: {cfg.input}")
    return validate_dataset(cfg.input, cfg.schema())


def _nuisance_slice(cfg: RunConfig) -> dict[str, Any]:
    return {"nuisance": cfg.nuisance.to_dict(), "seed": cfg.seed}


# --- commands -------------------------------------------------------------------------


def cmd_evaluate(cfg: RunConfig) -> dict[str, Any]:
    ds = _load_data(cfg)
    fit = fit_nuisance(ds, cfg.nuisance)
    blocks: list[dict[str, Any]] = []
    agree = agreement_difference(ds)
    blocks.append({"type": "agreement", **agree.to_dict(), "config_slice": {}})
    for l01 in cfg.losses:
        loss = _loss(cfg, l01)
        est = estimate_risk_difference(ds, fit, loss)
        blocks.append({"type": "risk_diff", **est.to_dict(cfg.alpha),
                       "config_slice": {"l01": l01, "l00": cfg.l00, "l11": cfg.l11, "alpha": cfg.alpha,
                                        **_nuisance_slice(cfg)}})
    for metric in METRICS:
        est = estimate_metric_difference(ds, fit, metric)
        blocks.append({"type": "metric_diff", **est.to_dict(cfg.alpha),
                       "config_slice": {"alpha": cfg.alpha, **_nuisance_slice(cfg)}})
    for sg in cfg.subgroup_objects():
        for l01 in cfg.losses:
            est = subgroup_analysis(ds, sg, lambda d, f, l=l01: estimate_risk_difference(d, f, _loss(cfg, l)),
                                    cfg=cfg.nuisance)
            blocks.append({"type": "risk_diff", **est.to_dict(cfg.alpha),
                           "config_slice": {"l01": l01, "alpha": cfg.alpha, "subgroup": sg.describe(),
                                            "refit": True, **_nuisance_slice(cfg)}})
    return {"dataset": ds.summary(), "results": blocks, "diagnostics": {"nuisance": fit.diagnostics}}


def cmd_bounds(cfg: RunConfig) -> dict[str, Any]:
    ds = _load_data(cfg)
    fit = fit_nuisance(ds, cfg.nuisance)
    blocks: list[dict[str, Any]] = []

    def bound_blocks(d, f, subgroup=None):
        out = []
        for l01 in cfg.losses:
            base = {"l01": l01, "alpha": cfg.alpha, "subgroup": subgroup, **_nuisance_slice(cfg)}
            for z in (0, 1):
                b = estimate_ai_vs_human_bounds(d, f, z, l01)
                out.append({"type": "bounds", **b.to_dict(cfg.alpha), "subgroup": subgroup, "config_slice": base})
            for system in SYSTEMS:
                ib = per_system_risk_bounds(d, f, system, l01)
                out.append({"type": "system_risk_bounds", "system": system, "l01": l01, **ib.to_dict(),
                            "subgroup": subgroup, "config_slice": base})
        return out

    blocks += bound_blocks(ds, fit)
    for system in SYSTEMS:
        for metric in ALT_METRICS:
            r = alt_metric_bounds(ds, fit, metric, system, resamples=cfg.resamples, seed=cfg.seed, alpha=cfg.alpha)
            blocks.append({"type": "metric_bounds", **r.to_dict(),
                           "config_slice": {"resamples": cfg.resamples, "alpha": cfg.alpha, **_nuisance_slice(cfg)}})
    for sg in cfg.subgroup_objects():
        blocks += subgroup_analysis(ds, sg, lambda d, f, name=sg.name: bound_blocks(d, f, name), cfg=cfg.nuisance)
    return {"dataset": ds.summary(), "results": blocks, "diagnostics": {"nuisance": fit.diagnostics}}


def _grid(cfg: RunConfig) -> tuple[np.ndarray, str]:
    grid = default_grid(cfg.grid_points, cfg.grid_min, cfg.grid_max)
    return grid, f"{cfg.grid_points} log-spaced in [{cfg.grid_min:g},{cfg.grid_max:g}]"


def cmd_prefer(cfg: RunConfig) -> dict[str, Any]:
    ds = _load_data(cfg)
    fit = fit_nuisance(ds, cfg.nuisance)
    grid, spec = _grid(cfg)
    blocks: list[dict[str, Any]] = []
    slice_ = {"alpha": cfg.alpha, "grid": spec, **_nuisance_slice(cfg)}
    for comp in cfg.comparisons:
        region = invert_preference(ds, fit, comp, grid, cfg.alpha)
        blocks.append({"type": "preference", **region.to_dict(), "grid": spec, "subgroup": None,
                       "config_slice": slice_})
    for sg in cfg.subgroup_objects():
        for comp in cfg.comparisons:
            region = subgroup_analysis(ds, sg, lambda d, f, c=comp: invert_preference(d, f, c, grid, cfg.alpha),
                                       cfg=cfg.nuisance)
            blocks.append({"type": "preference", **region.to_dict(), "grid": spec, "subgroup": sg.name,
                           "config_slice": {**slice_, "subgroup": sg.describe(), "refit": True}})
    return {"dataset": ds.summary(), "results": blocks, "diagnostics": {"nuisance": fit.diagnostics}}


def cmd_learn_policy(cfg: RunConfig) -> dict[str, Any]:
    ds = _load_data(cfg)
    fit = fit_nuisance(ds, cfg.nuisance)
    lattice = build_lattice(ds, cfg.axes)
    blocks: list[dict[str, Any]] = []
    learners = {"provision": learn_provision_policy, "follow": learn_follow_policy}
    for kind in cfg.kinds:
        for direction in cfg.directions:
            for l01 in cfg.losses:
                pol = learners[kind](ds, fit, l01, direction, lattice=lattice)
                blocks.append({"type": "policy", **pol.to_dict(),
                               "config_slice": {"l01": l01, "axes": {k: list(v) for k, v in cfg.axes.items()},
                                                **_nuisance_slice(cfg)}})
    return {"dataset": ds.summary(), "results": blocks, "diagnostics": {"nuisance": fit.diagnostics}}


def _sibling(out: str | None, suffix: str) -> str:
    if out is None:
        raise ConfigError("simulate needs --out to place the dataset and population files")
    p = Path(out)
    return str(p.with_name(p.stem + suffix))


def cmd_simulate(cfg: RunConfig) -> dict[str, Any]:
    sim = cfg.sim_config()
    pop = make_population(sim)
    if cfg.sim.get("scores"):
        pop = attach_scores(pop, cfg.axes, seed=cfg.seed)
    ds = sample_dataset(pop, sim.n, cfg.seed)
    data_path = _sibling(cfg.out, ".csv")
    pop_path = _sibling(cfg.out, ".population.json")
    if Path(cfg.out).resolve() in (Path(data_path).resolve(), Path(pop_path).resolve()):
        raise ConfigError(f"simulate --out {cfg.out} would overwrite its own data files; use a .json report path")
    ds.to_csv(data_path)
    save_population(pop, pop_path)
    truths = []
    for l01 in cfg.losses:
        for pair in PAIRS:
            truths.append({"type": "true_risk_diff", "pair": pair, "l01": l01,
                           "value": true_risk_diff(pop, pair, l01), "config_slice": {"l01": l01}})
        for system in SYSTEMS:
            truths.append({"type": "true_risk", "system": system, "l01": l01,
                           "value": true_risk(pop, system, l01), "config_slice": {"l01": l01}})
    return {
        "dataset": ds.summary(),
        "results": truths,
        "diagnostics": {"data_file": os.path.basename(data_path), "population_file": os.path.basename(pop_path),
                        "strata": pop.strata, "label": pop.label,
                        "note": "y for d=1 rows is an independent fair coin (non-informative)"},
    }


def cmd_oracle_check(cfg: RunConfig) -> dict[str, Any]:
    pops = None
    if cfg.input is not None:
        if not os.path.exists(cfg.input):
            raise IoError(f"population file not found: {cfg.input}")
        pops = [load_population(cfg.input)]
    res = oracle_check(cfg.populations, cfg.seed, cfg.max_strata, pops=pops)
    block = {"type": "oracle_check", **res.to_dict(),
             "config_slice": {"populations": cfg.populations, "seed": cfg.seed, "max_strata": cfg.max_strata}}
    return {"results": [block], "diagnostics": {}}


HANDLERS: dict[str, Callable[[RunConfig], dict[str, Any]]] = {
    "evaluate": cmd_evaluate,
    "bounds": cmd_bounds,
    "prefer": cmd_prefer,
    "learn-policy": cmd_learn_policy,
    "simulate": cmd_simulate,
    "oracle-check": cmd_oracle_check,
}


def run(command: str, cfg: RunConfig, timings: bool = False) -> dict[str, Any]:
    """Execute one subcommand and assemble its report."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    start = time.perf_counter()
    body = HANDLERS[command](cfg)
    report = {
        "tool": {"name": "decisioneval", "version": __version__},
        "command": command,
        "config": cfg.to_dict(),
        **body,
    }
    if timings:
        report["timings"] = {"total_seconds": time.perf_counter() - start}
    return report


# --- text rendering ---------------------------------------------------------------------


def _fmt(v: Any) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def render_text(report: Mapping[str, Any]) -> str:
    """Human-readable view of a report; reads only the JSON content."""
    lines = [f"decisioneval {report['tool']['version']}  command: {report['command']}"]
    for b in report.get("results", []):
        t = b["type"]
        if t == "agreement":
            lines.append(f"agreement control {_fmt(b['control']['agreement'])}  treated "
                         f"{_fmt(b['treated']['agreement'])}  difference {_fmt(b['difference'])} (se {_fmt(b['se'])})")
        elif t in ("risk_diff", "metric_diff"):
            sub = f" [{b['subgroup']}]" if b.get("subgroup") else ""
            lines.append(f"{b['metric']}{sub} l01={b['l01']}: {_fmt(b['beta_hat'])} (se {_fmt(b['se'])}) "
                         f"CI [{_fmt(b['ci_low'])}, {_fmt(b['ci_high'])}]")
        elif t == "bounds":
            lines.append(f"{b['comparison']} l01={b['l01']}: [{_fmt(b['L'])}, {_fmt(b['U'])}] "
                         f"IM [{_fmt(b['im_low'])}, {_fmt(b['im_high'])}] {' '.join(b['flags'])}".rstrip())
        elif t == "system_risk_bounds":
            lines.append(f"risk({b['system']}) l01={b['l01']}: [{_fmt(b['lo'])}, {_fmt(b['hi'])}]")
        elif t == "metric_bounds":
            lines.append(f"{b['metric']}({b['system']}): [{_fmt(b['lo'])}, {_fmt(b['hi'])}] {' '.join(b['flags'])}".rstrip())
        elif t == "preference":
            sub = f" [{b['subgroup']}]" if b.get("subgroup") else ""
            lines.append(f"{b['comparison']}{sub} (alpha {b['alpha']}, grid {b['grid']})")
            lines.append(render_region(b))
        elif t == "policy":
            lines.append(f"{b['kind']} policy, {b['direction']}, l01={b['l01']}: value {_fmt(b['value'])} "
                         f"(se {_fmt(b['se'])})")
            lines.append(render_policy(b))
        elif t in ("true_risk_diff", "true_risk"):
            what = b.get("pair") or b.get("system")
            lines.append(f"{t} {what} l01={b['l01']}: {_fmt(b['value'])}")
        elif t == "oracle_check":
            lines.append(f"oracle check: {b['populations']} populations, {b['checks']} checks, "
                         f"validity failures {b['validity_failures']}, sharpness failures "
                         f"{b['sharpness_failures']}, max gap {b['max_abs_gap']:.2e}")
    return "\n".join(lines) + "\n"


# --- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decisioneval", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"decisioneval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input", help="CSV dataset (oracle-check: optional population JSON)")
        p.add_argument("--config", help="INI config, or a JSON config / earlier report to replay")
        p.add_argument("--out", help="JSON report path (default: stdout)")
        p.add_argument("--text", help="also write a plain-text rendering here")
        p.add_argument("--seed", type=int)
        p.add_argument("--l01", type=float, action="append", help="false-positive loss (repeatable)")
        p.add_argument("--alpha", type=float)
        p.add_argument("--comparison", action="append", help="preference comparison (repeatable)")
        p.add_argument("--subgroup", action="append",
                       help="NAME=CONDITIONS, e.g. 'nonwhite=race=nonwhite' (repeatable)")
        p.add_argument("--direction", action="append", help="policy direction (repeatable)")
        p.add_argument("--kind", action="append", help="policy kind: provision or follow (repeatable)")
        p.add_argument("--timings", action="store_true", help="add wall-clock timings to the report")
        if name == "simulate":
            p.add_argument("--n", type=int)
            p.add_argument("--population-kind", dest="population_kind")
            p.add_argument("--strata", type=int)
            p.add_argument("--with-scores", action="store_true")
        if name == "oracle-check":
            p.add_argument("--populations", type=int)
            p.add_argument("--max-strata", dest="max_strata", type=int)
    return parser


def _overrides(args: argparse.Namespace, base: Mapping[str, Any]) -> dict[str, Any]:
    ov: dict[str, Any] = {
        "input": args.input, "out": args.out, "seed": args.seed, "alpha": args.alpha,
        "losses": args.l01, "comparisons": args.comparison, "directions": args.direction, "kinds": args.kind,
    }
    if args.subgroup:
        groups = dict(base.get("subgroups", {}))
        for item in args.subgroup:
            name, sep, cond = item.partition("=")
            if not sep:
                raise ConfigError(f"--subgroup expects NAME=CONDITIONS, got {item!r}")
            groups[name.strip()] = cond
        ov["subgroups"] = groups
    if args.command == "simulate":
        sim = dict(base.get("sim", {}))
        for key, val in (("n", args.n), ("kind", args.population_kind), ("strata", args.strata)):
            if val is not None:
                sim[key] = val
        if args.with_scores:
            sim["scores"] = True
        ov["sim"] = sim
    if args.command == "oracle-check":
        ov["populations"] = args.populations
        ov["max_strata"] = args.max_strata
    return ov


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        base = load_config(args.config)
        cfg = resolve_config(base, _overrides(args, base))
        report = run(args.command, cfg, timings=args.timings)
        text = dumps(report)
        if cfg.out:
            try:
                Path(cfg.out).write_text(text, encoding="utf-8")
            except OSError as exc:
                raise IoError(f"cannot write report {cfg.out}: {exc}") from exc
        else:
            sys.stdout.write(text)
        if args.text:
            Path(args.text).write_text(render_text(json.loads(text)), encoding="utf-8")
    except DecisionEvalError as exc:
        print(f"error [{exc.module}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
