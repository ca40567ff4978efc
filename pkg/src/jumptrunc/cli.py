"""Command-line front end: ``jumptrunc <subcommand> [options]``.

Exit codes: 0 success with every pass flag true, 1 a numeric check failed,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import jsonschema

from . import analysis, experiments
from .errors import JumpTruncError, SimulationError
from .experiments import (
    BOUNDEDNESS_DEFAULTS,
    CONVERGENCE_DEFAULTS,
    DEFAULT_SEED,
    STABILITY_DEFAULTS,
    ExperimentSpec,
)
from .model import PRESET_NAMES

log = logging.getLogger("jumptrunc")

SUBCOMMANDS = ("convergence", "stability", "boundedness", "oracle", "check-assumptions", "rates")
KINDS = ("plain", "truncated_full", "truncated_partial")
DEFAULT_OUT = "./out"

_POLY = {"type": "string", "pattern": r"^poly:-?[0-9.eE+-]+(,-?[0-9.eE+-]+)*$"}
CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "jumptrunc run configuration",
    "type": "object",
    "required": ["preset"],
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": list(PRESET_NAMES) + ["custom"]},
        "problem": {
            "type": "object",
            "required": ["drift", "diffusion", "jump"],
            "additionalProperties": False,
            "properties": {
                "drift": _POLY,
                "diffusion": _POLY,
                "jump": _POLY,
                "intensity": {"type": "number", "minimum": 0},
                "x0": {"type": "number"},
                "decomposition": {
                    "type": "object",
                    "required": ["F1", "F", "G1", "G"],
                    "additionalProperties": False,
                    "properties": {"F1": _POLY, "F": _POLY, "G1": _POLY, "G": _POLY},
                },
            },
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu_scale": {"type": "number", "exclusiveMinimum": 0},
                "mu_power": {"type": "number", "exclusiveMinimum": 0},
                "phi_eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.25},
                "phi_scale": {"type": "number", "exclusiveMinimum": 0},
                "delta_star": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "n_paths": {"type": "integer", "minimum": 2},
        "levels": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 26}, "minItems": 1},
        "reference_level": {"type": "integer", "minimum": 0, "maximum": 26},
        "r": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "burn_in": {"type": "number", "minimum": 0},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "gamma": {"type": "number", "minimum": 0},
        "p": {"type": "number", "exclusiveMinimum": 0},
        "low": {"type": "boolean"},
        "out": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
        "plot": {"type": "boolean"},
        "dump_noise": {"type": "boolean"},
    },
}


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    subcommand: str
    preset: Optional[str] = None
    problem: Optional[dict] = None
    policy: Optional[dict] = None
    kind: Optional[str] = None
    seed: int = DEFAULT_SEED
    n_paths: Optional[int] = None
    levels: Optional[list] = None
    reference_level: Optional[int] = None
    r: Optional[float] = None
    horizon: Optional[float] = None
    delta: Optional[float] = None
    burn_in: Optional[float] = None
    eps: Optional[float] = None
    gamma: Optional[float] = None
    p: Optional[float] = None
    low: bool = False
    out: str = DEFAULT_OUT
    workers: Optional[int] = None
    plot: bool = True
    dump_noise: bool = False

    def to_spec(self) -> ExperimentSpec:
        return ExperimentSpec(
            name=f"{self.subcommand}:{self.preset}",
            preset=self.preset,
            kind=self.kind,
            policy=self.policy,
            problem=self.problem,
            levels=self.levels,
            reference_level=self.reference_level,
            r=self.r,
            n_paths=self.n_paths,
            horizon=self.horizon,
            delta=self.delta,
            burn_in=self.burn_in,
            eps=self.eps,
            master_seed=self.seed,
            out=self.out,
            workers=self.workers,
            plot=self.plot,
            dump_noise=self.dump_noise,
        )


def _format_error(err: jsonschema.ValidationError) -> str:
    path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
    return f"{path}: {err.message}"


def load_config_file(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return data


def validate(data) -> None:
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(_format_error(e) for e in errors))


def _preset_defaults(subcommand: str, preset: str) -> dict:
    if subcommand == "convergence":
        return dict(CONVERGENCE_DEFAULTS.get(preset, CONVERGENCE_DEFAULTS["custom"]))
    if subcommand == "oracle":
        return dict(CONVERGENCE_DEFAULTS["geometric-jump"])
    if subcommand == "stability":
        return dict(STABILITY_DEFAULTS)
    if subcommand == "boundedness":
        return dict(BOUNDEDNESS_DEFAULTS)
    return {}


def parse_config(source=None, subcommand: str = "convergence", overrides: Optional[dict] = None) -> RunConfig:
    """Merge defaults, a JSON config (path or dict) and flag overrides into a validated RunConfig.

    Precedence: flags > file > preset defaults > global defaults.
    """
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = dict(source)
    else:
        data = load_config_file(source)
    if source is not None:
        validate(data)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged = {**data, **overrides}
    if subcommand == "oracle":
        merged.setdefault("preset", "geometric-jump")
    if subcommand != "rates":
        if "preset" not in merged:
            raise ConfigError("invalid configuration:\n  $: missing required field 'preset'")
        validate(merged)
    preset = merged.get("preset")
    defaults = _preset_defaults(subcommand, preset) if preset else {}
    user_paths = merged.get("n_paths")
    if user_paths is not None and "n_paths" in defaults and user_paths < defaults["n_paths"] and preset != "custom":
        warnings.warn(
            f"n_paths={user_paths} is below {defaults['n_paths']}; acceptance thresholds assume at least that many paths",
            stacklevel=2,
        )
    for k, v in defaults.items():
        if merged.get(k) is None:
            merged[k] = v
    known = {f.name for f in fields(RunConfig)}
    cfg = RunConfig(subcommand=subcommand, **{k: v for k, v in merged.items() if k in known and k != "subcommand"})
    if cfg.preset == "custom" and cfg.problem is None and subcommand != "rates":
        raise ConfigError("invalid configuration:\n  $: preset 'custom' requires 'problem'")
    return cfg


def _levels(text: str) -> list:
    try:
        if "-" in text:
            lo, hi = text.split("-")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must look like '11-15' or '11,12,13', got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run options")
    g.add_argument("--config", help="JSON config file (keys: preset, problem, policy, kind, seed, n_paths, levels, "
                   "reference_level, r, horizon, delta, burn_in, eps, out, workers, plot, dump_noise); "
                   "problem and policy are config-only; schema in docs/config.schema.json")
    g.add_argument("--preset", help=f"problem preset: {', '.join(PRESET_NAMES)} or custom (custom needs a problem in --config)")
    g.add_argument("--kind", choices=KINDS, help="scheme kind (default per preset)")
    g.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")
    g.add_argument("--n-paths", type=int, dest="n_paths", help="Monte Carlo sample paths")
    g.add_argument("--levels", type=_levels, help="coarse grid levels, step = horizon*2^-level, e.g. 11-15")
    g.add_argument("--reference-level", type=int, dest="reference_level", help="fine reference level (convergence)")
    g.add_argument("--r", type=float, help="moment order r of the strong error E|e|^r")
    g.add_argument("--horizon", type=float, help="terminal time T")
    g.add_argument("--delta", type=float, help="step size for stability/boundedness")
    g.add_argument("--burn-in", type=float, dest="burn_in", help="start of the lim-sup window (boundedness)")
    g.add_argument("--eps", type=float, help="epsilon in rate formulas / boundedness bound")
    g.add_argument("--out", help=f"output directory (default {DEFAULT_OUT})")
    g.add_argument("--workers", type=int, help="worker threads (env JUMPTRUNC_THREADS); never changes results")
    g.add_argument("--no-plot", dest="plot", action="store_false", default=None, help="skip plot.svg (plot)")
    g.add_argument("--dump-noise", dest="dump_noise", action="store_true", default=None,
                   help="write path 0's fine increments to noise.csv (dump_noise)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="jumptrunc",
        description="Truncated Euler-Maruyama for SDEs with Poisson jumps: convergence, stability and boundedness experiments.",
        epilog="exit codes: 0 ok, 1 a numeric check failed, 2 usage/configuration error",
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")
    sub.required = True
    helps = {
        "convergence": "strong L^r error table and log-log rate fit",
        "stability": "mean-square decay E|X|^2 and fitted exponent",
        "boundedness": "asymptotic bound on E|X|^2",
        "oracle": "EM vs the exact geometric jump-diffusion",
        "check-assumptions": "sampling checks of policy, decomposition and Khasminskii preservation",
        "rates": "closed-form convergence rates",
    }
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
        if name == "rates":
            rg = sp.add_argument_group("rate parameters")
            rg.add_argument("--gamma", type=float, help="super-linear growth constant (gamma-bar with --low)")
            rg.add_argument("--p", type=float, help="Khasminskii parameter p (r >= 2 rate)")
            rg.add_argument("--low", action="store_true", default=None, help="0 < r < 2 optimal rate r(2-r)/(2(2+r gamma))")
    return parser


def _run_rates(cfg: RunConfig) -> int:
    if cfg.r is None or cfg.gamma is None:
        raise ConfigError("rates needs --r and --gamma")
    if cfg.low or cfg.p is None:
        eps, rate = analysis.theoretical_rate_low(cfg.r, cfg.gamma)
        print(f"{rate:.12g}")
        log.info("optimal eps %.12g", eps)
        return 0
    print(f"{analysis.theoretical_rate_high(cfg.r, cfg.gamma, cfg.p, cfg.eps):.12g}")
    return 0


RUNNERS = {
    "convergence": experiments.run_convergence,
    "stability": experiments.run_stability,
    "boundedness": experiments.run_boundedness,
    "oracle": experiments.run_oracle,
    "check-assumptions": experiments.run_check_assumptions,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    overrides = {k: v for k, v in vars(args).items() if k not in ("subcommand", "config", "verbose")}
    try:
        cfg = parse_config(args.config, args.subcommand, overrides)
        if cfg.subcommand == "rates":
            return _run_rates(cfg)
        result = RUNNERS[cfg.subcommand](cfg.to_spec())
    except ConfigError as exc:
        print(f"jumptrunc: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"jumptrunc: {exc}", file=sys.stderr)
        return 1
    except (JumpTruncError, FileNotFoundError) as exc:
        print(f"jumptrunc: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(experiments._jsonable(result.summary), indent=2, sort_keys=True))
    for name, ok in result.summary.get("pass", {}).items():
        print(f"{'PASS' if ok else 'FAIL'} {name}", file=sys.stderr)
    return 0 if result.passed else 1


def run_config_fields() -> list:
    return [f.name for f in fields(RunConfig)]


if __name__ == "__main__":
    sys.exit(main())
