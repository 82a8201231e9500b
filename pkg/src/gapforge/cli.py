"""``gapforge`` command line: band structure and gap-state embedding runs.

Every command reads an optional flat key-value config file (``key = value``
lines, or a flat JSON object when the file ends in ``.json``); command-line
flags override it.  Exit codes: 0 success, 2 invalid configuration or
precondition, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .elliptic import lame_potential
from .errors import NumericalError, PreconditionError
from .gapstates import (EmbeddingSpec, check_darboux_invariance, embed_first_order,
                        embed_second_order)
from .report import provenance, write_csv, write_json
from .spectral import find_band_edges

COMMANDS = ("bands", "embed1", "embed2", "invariance")

DEFAULTS = {
    "potential": "lame",
    "m": 0.5,
    "eps_min": -0.5,
    "eps_max": 3.0,
    "n_scan": 400,
    "eps": None,
    "eps_a": None,
    "lambda": None,
    "lambda_a": None,
    "branch": "plus",
    "periods": None,
    "step_div": 4000,
    "out": None,
    "formats": "csv,json",
}

COMMAND_DEFAULTS = {
    "embed1": {"eps": -0.1, "lambda": 1.0},
    "embed2": {"eps_a": 1.1, "eps": 1.45},
    "invariance": {"eps": -0.1, "lambda": 1.0},
}


class ConfigError(PreconditionError):
    pass


def _read_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} does not exist", "config")
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}", "config")
        if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
            raise ConfigError("config must be a flat key-value object", "config")
        return {str(k).replace("-", "_"): v for k, v in data.items()}
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}", "config")
    return {k.replace("-", "_"): v.strip().strip('"').strip("'") for k, v in cp["run"].items()}


def _as_float(name, v, allow_inf=False):
    if v is None:
        return None
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {v!r}", name)
    if math.isnan(f) or (math.isinf(f) and not allow_inf):
        raise ConfigError(f"{name} must be finite, got {v!r}", name)
    return f


def _as_int(name, v):
    if v is None:
        return None
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {v!r}", name)
    if not f.is_integer():
        raise ConfigError(f"{name} must be an integer, got {v!r}", name)
    return int(f)


def resolve_config(command, file_values: dict, overrides: dict) -> dict:
    """Merge defaults, file and flags, then validate every field."""
    raw = dict(DEFAULTS)
    raw.update({k: v for k, v in COMMAND_DEFAULTS.get(command, {}).items()})
    for k, v in file_values.items():
        if k not in DEFAULTS:
            raise ConfigError(f"unknown config key {k!r}", k)
        raw[k] = v
    raw.update({k: v for k, v in overrides.items() if v is not None})

    cfg = {}
    if str(raw["potential"]).lower() != "lame":
        raise ConfigError(f"potential must be 'lame', got {raw['potential']!r}", "potential")
    cfg["potential"] = "lame"
    m = _as_float("m", raw["m"])
    if not 0.0 <= m < 1.0:
        raise ConfigError(f"m must lie in [0, 1), got {m}", "m")
    cfg["m"] = m
    cfg["eps_min"] = _as_float("eps_min", raw["eps_min"])
    cfg["eps_max"] = _as_float("eps_max", raw["eps_max"])
    if cfg["eps_max"] <= cfg["eps_min"]:
        raise ConfigError("eps_max must exceed eps_min", "eps_max")
    cfg["n_scan"] = _as_int("n_scan", raw["n_scan"])
    if cfg["n_scan"] < 100:
        raise ConfigError("n_scan must be at least 100", "n_scan")
    cfg["eps"] = _as_float("eps", raw["eps"])
    cfg["eps_a"] = _as_float("eps_a", raw["eps_a"])
    cfg["lambda"] = _as_float("lambda", raw["lambda"], allow_inf=True)
    cfg["lambda_a"] = _as_float("lambda_a", raw["lambda_a"], allow_inf=True)
    branch = str(raw["branch"]).lower()
    if branch not in ("plus", "minus", "mixed"):
        raise ConfigError(f"branch must be plus, minus or mixed, got {raw['branch']!r}", "branch")
    cfg["branch"] = branch
    periods = raw["periods"]
    if periods is not None and str(periods).lower() != "auto":
        periods = _as_int("periods", periods)
        if periods < 2:
            raise ConfigError("periods must be at least 2", "periods")
    else:
        periods = None
    cfg["periods"] = periods
    cfg["step_div"] = _as_int("step_div", raw["step_div"])
    if cfg["step_div"] < 1000:
        raise ConfigError("step_div must be at least 1000 (h <= period/1000)", "step_div")
    formats = [f.strip().lower() for f in str(raw["formats"]).split(",") if f.strip()]
    if not formats or any(f not in ("csv", "json") for f in formats):
        raise ConfigError(f"formats must be a comma list of csv, json; got {raw['formats']!r}", "formats")
    cfg["formats"] = ",".join(formats)
    out = raw["out"] or os.environ.get("GAPFORGE_OUT") or "gapforge-out"
    cfg["out"] = str(out)

    if command == "embed1":
        if cfg["lambda"] is None or not 0.0 < cfg["lambda"] < math.inf:
            raise ConfigError("lambda must satisfy 0 < lambda < inf for a normalisable state", "lambda")
    if command == "embed2":
        if cfg["eps_a"] == cfg["eps"]:
            raise ConfigError("eps_a and eps must differ", "eps_a")
    if command == "invariance" and branch == "mixed" and cfg["lambda"] is None:
        raise ConfigError("mixed branch needs lambda", "lambda")
    return cfg


def _grid_block(x, V, steps, periods):
    return {"period": V.period, "steps_per_period": steps, "h": float(x[1] - x[0]),
            "periods": periods, "x_min": float(x[0]), "x_max": float(x[-1]), "samples": int(len(x))}


def _want(cfg, fmt):
    return fmt in cfg["formats"].split(",")


def cmd_bands(cfg) -> dict:
    V = lame_potential(cfg["m"])
    bs = find_band_edges(V, (cfg["eps_min"], cfg["eps_max"]), cfg["n_scan"], cfg["step_div"])
    out = Path(cfg["out"])
    report = {
        "command": "bands",
        "m": cfg["m"],
        "period": V.period,
        "edges": bs.edges,
        "edge_kinds": bs.edge_kinds,
        "bands": [[lo, hi] for lo, hi in bs.bands],
        "gaps": [[None if math.isinf(lo) else lo, hi] for lo, hi in bs.gaps],
        "open_lower": bs.open_lower,
        "closures": bs.closures,
        "warnings": bs.warnings,
        "discriminant_samples": {"energy": bs.scan_energies, "D": bs.scan_discriminant},
        "provenance": provenance(cfg, {"period": V.period, "steps_per_period": cfg["step_div"],
                                       "h": V.period / cfg["step_div"], "n_scan": cfg["n_scan"]}),
    }
    if _want(cfg, "csv"):
        write_csv(out / "discriminant.csv", {"eps": bs.scan_energies, "D": bs.scan_discriminant})
    if _want(cfg, "json"):
        write_json(out / "bands.json", report)
    return report


def cmd_embed1(cfg) -> dict:
    spec = EmbeddingSpec(cfg["m"], (cfg["eps"],), (cfg["lambda"],), cfg["periods"], cfg["step_div"])
    V = spec.build_potential()
    r = embed_first_order(spec)
    d = r.darboux
    phi = r.states[0]
    x = d.x
    tau = V.period
    report = {
        "command": "embed1",
        "m": cfg["m"],
        "energy": cfg["eps"],
        "lambda": cfg["lambda"],
        "regular": d.regular,
        "peak_x": r.extras["peak_x"],
        "peak_x_over_tau": r.extras["peak_x"] / tau,
        "t_plus": r.extras["t_plus"],
        "t_minus": 1.0 / r.extras["t_plus"],
        "nodes_u": r.extras["nodes_u"],
        "norm": r.norms[0].as_dict(),
        "residuals": r.residuals,
        "decay": r.decay["state"],
        "provenance": provenance(cfg, _grid_block(x, V, spec.steps, r.extras["periods"])),
    }
    out = Path(cfg["out"])
    if _want(cfg, "csv"):
        write_csv(out / "potential1.csv", {"x": x, "x_over_tau": x / tau, "V0": d.V0, "V1": d.V_out})
        write_csv(out / "state1.csv", {"x": x, "x_over_tau": x / tau, "phi": phi.psi, "phi_sq": phi.psi**2})
    if _want(cfg, "json"):
        write_json(out / "report1.json", report)
    return report


def cmd_embed2(cfg) -> dict:
    spec = EmbeddingSpec(cfg["m"], (cfg["eps_a"], cfg["eps"]), (cfg["lambda_a"], cfg["lambda"]),
                         cfg["periods"], cfg["step_div"])
    V = spec.build_potential()
    r = embed_second_order(spec)
    d = r.darboux
    pa, pe = r.states
    x = d.x
    tau = V.period
    ex = r.extras
    witness = {"nodes_u_a": ex["nodes_u_a"], "nodes_u": ex["nodes_u"], "nodes_W": ex["nodes_W"],
               "nodes_u_a_per_period": ex["nodes_u_a"] / (2 * ex["periods"]),
               "nodes_u_per_period": ex["nodes_u"] / (2 * ex["periods"]),
               "outer_cell_nodes_u_a": ex["outer_cell_nodes_u_a"],
               "outer_cell_nodes_u": ex["outer_cell_nodes_u"],
               "min_cell_nodes_u_a": ex["min_cell_nodes_u_a"],
               "min_cell_nodes_u": ex["min_cell_nodes_u"]}
    report = {
        "command": "embed2",
        "m": cfg["m"],
        "energies": {"eps_a": cfg["eps_a"], "eps": cfg["eps"]},
        "lambdas": {"lambda_a": ex["lambdas"][0], "lambda": ex["lambdas"][1]},
        "strategy": ex["strategy"],
        "route": r.route,
        "regular": d.regular,
        "irreducibility_witness": witness,
        "residuals": r.residuals,
        "norms": {"state_a": r.norms[0].as_dict(), "state": r.norms[1].as_dict()},
        "decay": r.decay,
        "asymptotic_fits": r.invariance,
        "provenance": provenance(cfg, _grid_block(x, V, spec.steps, ex["periods"])),
    }
    if "chain" in ex:
        report["chain_equivalence"] = ex["chain"]
    out = Path(cfg["out"])
    if _want(cfg, "csv"):
        write_csv(out / "potential2.csv", {"x": x, "x_over_tau": x / tau, "V0": d.V0, "V2": d.V_out})
        write_csv(out / "states2.csv", {"x": x, "x_over_tau": x / tau, "phi_a": pa.psi, "phi": pe.psi,
                                        "phi_a_sq": pa.psi**2, "phi_sq": pe.psi**2})
    if _want(cfg, "json"):
        write_json(out / "report2.json", report)
    return report


def cmd_invariance(cfg) -> dict:
    V = lame_potential(cfg["m"])
    periods = cfg["periods"] or 10
    inv = check_darboux_invariance(V, cfg["eps"], cfg["branch"], cfg["lambda"] or 1.0,
                                   periods, cfg["step_div"])
    report = {
        "command": "invariance",
        "m": cfg["m"],
        "energy": cfg["eps"],
        "branch": inv.branch,
        "lambda": inv.lam if inv.branch == "mixed" else None,
        "delta": inv.delta,
        "delta_over_tau": inv.delta / V.period,
        "mismatch": inv.mismatch,
        "invariant": inv.invariant,
        "provenance": provenance(cfg, _grid_block(inv.x, V, cfg["step_div"], periods)),
    }
    out = Path(cfg["out"])
    if _want(cfg, "csv"):
        write_csv(out / "shifted.csv", {"x": inv.x, "x_over_tau": inv.x / V.period,
                                        "V1": inv.V1, "V0_shifted": inv.V0_shifted})
    if _want(cfg, "json"):
        write_json(out / "invariance.json", report)
    return report


RUNNERS = {"bands": cmd_bands, "embed1": cmd_embed1, "embed2": cmd_embed2, "invariance": cmd_invariance}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gapforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "bands": "band edges and discriminant scan",
        "embed1": "first-order embedding below the lowest band",
        "embed2": "second-order embedding of two levels in one gap",
        "invariance": "translational Darboux invariance fit",
    }
    for name in COMMANDS:
        c = sub.add_parser(name, help=helps[name])
        c.add_argument("--config", help="flat key = value config file (or .json)")
        c.add_argument("--out", help="output directory (default: $GAPFORGE_OUT or ./gapforge-out)")
        c.add_argument("--m", help="Lamé parameter m in [0, 1)")
        c.add_argument("--eps", help="energy (order 1) or second energy (order 2)")
        c.add_argument("--eps-a", dest="eps_a", help="first energy of a second-order embedding")
        c.add_argument("--lambda", dest="lambda_", help="mixing ratio c_minus/c_plus (inf allowed)")
        c.add_argument("--lambda-a", dest="lambda_a", help="mixing ratio for the eps_a function")
        c.add_argument("--branch", help="plus, minus or mixed (invariance)")
        c.add_argument("--periods", help="window half-width in periods (or 'auto')")
        c.add_argument("--step-div", dest="step_div", help="RK4 steps per period")
        c.add_argument("--eps-min", dest="eps_min", help="lower end of the band scan")
        c.add_argument("--eps-max", dest="eps_max", help="upper end of the band scan")
        c.add_argument("--n-scan", dest="n_scan", help="number of scan energies")
        c.add_argument("--formats", help="comma list of csv, json")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "lambda_")}
    overrides["lambda"] = args.lambda_
    try:
        file_values = _read_config(args.config) if args.config else {}
        cfg = resolve_config(args.command, file_values, overrides)
        report = RUNNERS[args.command](cfg)
    except PreconditionError as exc:
        field = f" [{exc.field}]" if getattr(exc, "field", None) else ""
        print(f"gapforge {args.command}: invalid input{field}: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"gapforge {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    summary = {k: report[k] for k in ("edges", "energy", "energies", "route", "delta", "mismatch")
               if k in report}
    print(f"gapforge {args.command}: wrote results to {cfg['out']} "
          + " ".join(f"{k}={_short(v)}" for k, v in summary.items()))
    return 0


def _short(v):
    if isinstance(v, dict):
        return "{" + ",".join(f"{k}:{_short(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ",".join(_short(x) for x in v) + "]"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


if __name__ == "__main__":
    sys.exit(main())
