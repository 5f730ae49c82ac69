"""Command-line interface.

    aircap [global flags] calibrate
    aircap [global flags] run <experiment>
    aircap [global flags] synth <spec.json>
    aircap [global flags] trace --hour H

Settings come from a JSON scenario file (``--config``); command-line flags
override it. Exit status is 0 on success, 1 on a numerical failure and 2 on
bad usage or invalid input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import data_io, experiments
from .calibration import (
    CalibratedAirport,
    CalibrationError,
    calibrate_airport,
    calibration_report,
    summary_text,
)
from .costs import FitError, QuadratureError, curve_diagnostics
from .equilibrium import EquilibriumError, demand_supply_trace, solve_window
from .model import COEFF_PRESETS, CostCoefficients, ModelError, coefficient_preset

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

EXPERIMENTS = (
    "sweep-capacity",
    "sweep-nf",
    "sweep-predictability",
    "breakeven-alpha",
    "compare-airports",
    "exploratory",
    "sensitivity-smoothness",
)


class ConfigError(ModelError):
    pass


@dataclass(frozen=True)
class GridConfig:
    lo: float
    hi: float
    steps: int

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario settings.

    Grids left unset fall back to ranges around the calibrated airport:
    capacity 0.5x to 2x the current capacity, n_f 0.5x to 2.5x, sigma scale
    0.1 to 1 and smoothness 250 to 2500 euros.
    """

    records: Optional[str] = None
    financials: Optional[str] = None
    out: str = "out"
    model: Optional[str] = None
    name: str = "airport"
    coeffs: object = "paper"
    s: float = 500.0
    alpha: float = 60000.0
    delta_C: float = 1.0
    C_fixed: Optional[float] = None
    cap_at_init: bool = False
    capacity: Optional[GridConfig] = None
    n_f: Optional[GridConfig] = None
    sigma_scale: Optional[GridConfig] = None
    smoothness: Optional[GridConfig] = None
    t_e: float = 0.0
    s_e: float = 0.0
    compare: tuple = ()
    seed: int = 0
    threads: int = 1
    _base: str = field(default=".", repr=False)

    def path(self, p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else Path(self._base) / q

    @property
    def out_dir(self) -> Path:
        return self.path(self.out)

    @property
    def model_path(self) -> Path:
        return self.path(self.model) if self.model else self.out_dir / "model.json"


_GRID_KEYS = ("capacity", "n_f", "sigma_scale", "smoothness")
_EXPLORATORY_KEYS = {"t_e", "s_e"}


def _number(key: str, value, *, integer: bool = False, positive: bool = False, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if integer and not float(value).is_integer():
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite")
    if positive and value <= 0:
        raise ConfigError(f"{key} must be > 0, got {value}")
    return int(value) if integer else float(value)


def _grid(key: str, raw) -> GridConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"sweeps.{key} must be an object with lo, hi, steps")
    unknown = sorted(set(raw) - {"lo", "hi", "steps"})
    if unknown:
        raise ConfigError(f"unknown keys in sweeps.{key}: {unknown}")
    try:
        lo = _number(f"sweeps.{key}.lo", raw["lo"])
        hi = _number(f"sweeps.{key}.hi", raw["hi"])
        steps = _number(f"sweeps.{key}.steps", raw["steps"], integer=True)
    except KeyError as exc:
        raise ConfigError(f"sweeps.{key} is missing {exc.args[0]!r}") from None
    if not lo < hi or steps < 2:
        raise ConfigError(f"sweeps.{key} needs lo < hi and steps >= 2")
    return GridConfig(lo, hi, steps)


def parse_config(raw: dict, base: str = ".") -> ScenarioConfig:
    """Check a scenario dictionary against the schema; unknown keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("scenario config must be a JSON object")
    top = {f.name for f in fields(ScenarioConfig) if not f.name.startswith("_")} - set(_GRID_KEYS) - _EXPLORATORY_KEYS
    top |= {"sweeps", "exploratory"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    kw: dict = {"_base": base}
    for key in ("records", "financials", "out", "model", "name"):
        if key in raw:
            if raw[key] is not None and not isinstance(raw[key], str):
                raise ConfigError(f"{key} must be a string")
            kw[key] = raw[key]
    if "coeffs" in raw:
        kw["coeffs"] = raw["coeffs"]
        resolve_coeffs(raw["coeffs"], base)
    if "s" in raw:
        kw["s"] = _number("s", raw["s"], positive=True)
    if "alpha" in raw:
        kw["alpha"] = _number("alpha", raw["alpha"])
    if "delta_C" in raw:
        kw["delta_C"] = _number("delta_C", raw["delta_C"], positive=True)
    if "C_fixed" in raw:
        kw["C_fixed"] = _number("C_fixed", raw["C_fixed"], positive=True, allow_none=True)
    if "cap_at_init" in raw:
        if not isinstance(raw["cap_at_init"], bool):
            raise ConfigError("cap_at_init must be true or false")
        kw["cap_at_init"] = raw["cap_at_init"]
    if "seed" in raw:
        kw["seed"] = _number("seed", raw["seed"], integer=True)
    if "threads" in raw:
        kw["threads"] = _number("threads", raw["threads"], integer=True, positive=True)
    sweeps = raw.get("sweeps", {})
    if not isinstance(sweeps, dict):
        raise ConfigError("sweeps must be an object")
    unknown = sorted(set(sweeps) - set(_GRID_KEYS))
    if unknown:
        raise ConfigError(f"unknown sweeps {unknown}; valid: {list(_GRID_KEYS)}")
    for key, value in sweeps.items():
        kw[key] = _grid(key, value)
    expl = raw.get("exploratory", {})
    if not isinstance(expl, dict):
        raise ConfigError("exploratory must be an object")
    unknown = sorted(set(expl) - _EXPLORATORY_KEYS)
    if unknown:
        raise ConfigError(f"unknown exploratory keys {unknown}")
    for key in _EXPLORATORY_KEYS & set(expl):
        kw[key] = _number(f"exploratory.{key}", expl[key])
    if "compare" in raw:
        if not isinstance(raw["compare"], list) or not all(isinstance(p, str) for p in raw["compare"]):
            raise ConfigError("compare must be a list of model file paths")
        kw["compare"] = tuple(raw["compare"])
    return ScenarioConfig(**kw)


def load_config(path: Optional[str]) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from None
    return parse_config(raw, str(p.parent))


def resolve_coeffs(spec, base: str = ".") -> CostCoefficients:
    """Preset name, JSON file path, list of four numbers or an object with a1..b2."""
    if isinstance(spec, CostCoefficients):
        return spec
    if isinstance(spec, str):
        if spec in COEFF_PRESETS:
            return coefficient_preset(spec)
        p = Path(spec) if Path(spec).is_absolute() else Path(base) / spec
        if not p.is_file():
            raise ConfigError(f"coefficients must be one of {sorted(COEFF_PRESETS)} or a JSON file; {spec!r} is neither")
        try:
            return resolve_coeffs(json.loads(p.read_text(encoding="utf-8")), base)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from None
    if isinstance(spec, list) and len(spec) == 4:
        return CostCoefficients(*(_number("coeffs", v) for v in spec))
    if isinstance(spec, dict):
        keys = {"a1", "a2", "b1", "b2"}
        if set(spec) != keys:
            raise ConfigError(f"coefficient object needs exactly the keys {sorted(keys)}")
        return CostCoefficients(**{k: _number(f"coeffs.{k}", v) for k, v in spec.items()})
    raise ConfigError(f"cannot read cost coefficients from {spec!r}")


def _merge_flags(cfg: ScenarioConfig, args) -> ScenarioConfig:
    from dataclasses import replace

    updates = {}
    if args.out is not None:
        updates.update(out=str(Path(args.out).resolve()))
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        updates["threads"] = args.threads
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.coeffs is not None:
        resolve_coeffs(args.coeffs, ".")
        updates["coeffs"] = args.coeffs if args.coeffs in COEFF_PRESETS else str(Path(args.coeffs).resolve())
    for key in ("records", "financials", "model"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = str(Path(value).resolve())
    if getattr(args, "s", None) is not None:
        updates["s"] = _number("--s", args.s, positive=True)
    if getattr(args, "alpha", None) is not None:
        updates["alpha"] = _number("--alpha", args.alpha)
    return replace(cfg, **updates)


def _load_model(cfg: ScenarioConfig) -> CalibratedAirport:
    path = cfg.model_path
    if not path.is_file():
        if cfg.records and cfg.financials:
            return _calibrate(cfg)
        raise ConfigError(f"model file not found: {path} (run `calibrate` first or set records and financials)")
    return load_model(path)


def load_model(path) -> CalibratedAirport:
    try:
        return CalibratedAirport.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a model file ({exc})") from None


def _calibrate(cfg: ScenarioConfig) -> CalibratedAirport:
    if not cfg.records or not cfg.financials:
        raise ConfigError("calibrate needs records and financials paths")
    loaded = data_io.load_records(cfg.path(cfg.records))
    for err in loaded.errors:
        print(f"warning: {cfg.records}:{err.line}: {err.message}", file=sys.stderr)
    fin = data_io.load_financials(cfg.path(cfg.financials))
    return calibrate_airport(
        fin, loaded.records, cfg.s, resolve_coeffs(cfg.coeffs, cfg._base), threads=cfg.threads, name=cfg.name
    )


def cmd_calibrate(cfg: ScenarioConfig) -> int:
    model = _calibrate(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    model_path = cfg.model_path
    data_io._write_text(model_path, model.dumps())
    data_io.write_results(calibration_report(model), out / "calibration.csv")
    data_io.write_results(curve_diagnostics(model.curve), out / "cost_curve.csv")
    data_io._write_text(out / "calibration_summary.txt", summary_text(model))
    print(summary_text(model), end="")
    print(f"model written to {model_path}")
    return EXIT_OK


def _grid_or(cfg_grid: Optional[GridConfig], lo: float, hi: float, steps: int) -> np.ndarray:
    return cfg_grid.values() if cfg_grid is not None else np.linspace(lo, hi, steps)


def run_experiment(name: str, cfg: ScenarioConfig, model: CalibratedAirport):
    """Dispatch one experiment; returns (rows, summary, headline)."""
    p = model.params
    C_grid = _grid_or(cfg.capacity, 0.5 * p.C_init, 2.0 * p.C_init, 61)
    th = cfg.threads
    if name == "sweep-capacity":
        r = experiments.sweep_capacity(model, cfg.alpha, C_grid, cap_at_init=cfg.cap_at_init, threads=th)
        s = r.summary
        head = f"optimal capacity {s['optimum_C']:.6g} flights/h, daily profit {s['optimum_profit']:.6g} EUR"
    elif name == "sweep-nf":
        nf = _grid_or(cfg.n_f, 0.5 * p.n_f, 2.5 * p.n_f, 21)
        r = experiments.sweep_nf(model, cfg.alpha, nf, C_grid, threads=th)
        s = r.summary
        head = f"optimum leaves C_init above n_f = {s['threshold_n_f']:.6g}; tail slope {s['tail_slope']:.6g} (R2 {s['tail_r2']:.4f})"
    elif name == "sweep-predictability":
        ks = _grid_or(cfg.sigma_scale, 0.1, 1.0, 10)
        r = experiments.sweep_predictability(model, cfg.alpha, ks, C_grid, C_fixed=cfg.C_fixed, threads=th)
        last = min(r.rows, key=lambda row: row["k"])
        head = f"k = {last['k']:.3g}: profit {last['profit']:.6g} EUR/day, mean delay {last['mean_delay']:.4g} min"
    elif name == "breakeven-alpha":
        be = experiments.breakeven_alpha(model, cfg.delta_C)
        rows = [{"airport": model.name, "delta_C": be.delta_C, "alpha_star": be.alpha_analytic,
                 "alpha_root": be.alpha_root, "rel_diff": be.rel_diff, "revenue_gain": be.revenue_gain}]
        r = experiments.SweepResult(rows, dict(rows[0]))
        head = f"{be.alpha_analytic:.10g}"
    elif name == "compare-airports":
        models = [model] + [load_model(cfg.path(m)) for m in cfg.compare]
        r = experiments.compare_airports(models, cfg.delta_C, threads=th)
        head = "; ".join(f"{row['airport']}: alpha* {row['alpha_star']:.6g}, ratio {row['ratio']:.4g}" for row in r.rows)
    elif name == "exploratory":
        sp = experiments.ExploratorySpendParams.from_model(model, cfg.t_e, cfg.s_e)
        r = experiments.exploratory_profit(model, cfg.alpha, sp, C_grid, threads=th)
        maxima = r.summary["local_maxima"]
        head = "local maxima at C = " + (", ".join(f"{m['C']:.6g}" for m in maxima) or "(none)")
    elif name == "sensitivity-smoothness":
        ss = _grid_or(cfg.smoothness, 250.0, 2500.0, 10)
        r = experiments.sensitivity_smoothness(model, ss, alpha=cfg.alpha, C_grid=C_grid, threads=th)
        delays = [row["mean_delay_opt"] for row in r.rows if math.isfinite(row["mean_delay_opt"])]
        head = (f"mean delay at optimum {min(delays):.4g} to {max(delays):.4g} min" if delays
                else "no smoothness value could be evaluated")
    else:
        raise ConfigError(f"unknown experiment {name!r}; valid experiments: {', '.join(EXPERIMENTS)}")
    return r.rows, r.summary, head


def cmd_run(cfg: ScenarioConfig, name: str) -> int:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; valid experiments: {', '.join(EXPERIMENTS)}")
    model = _load_model(cfg)
    rows, summary, head = run_experiment(name, cfg, model)
    summary = dict(summary, experiment=name, seed=cfg.seed)
    data_io.write_results(rows, cfg.out_dir / f"{name}.csv", summary=summary)
    print(head)
    return EXIT_OK


def cmd_synth(cfg: ScenarioConfig, spec_path: str, seed_flag: Optional[int]) -> int:
    p = Path(spec_path)
    if not p.is_file():
        raise ConfigError(f"synthetic spec not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from None
    if seed_flag is not None:
        raw = dict(raw, seed=seed_flag)
    try:
        spec = data_io.SyntheticAirportSpec.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    airport = data_io.generate_synthetic(spec)
    paths = data_io.write_synthetic(airport, cfg.out_dir, spec.name)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_trace(cfg: ScenarioConfig, hour: int, C: Optional[float], lo: float, hi: float, steps: int) -> int:
    model = _load_model(cfg)
    window = next((w for w in model.windows if w.hour == hour), None)
    if window is None:
        raise ConfigError(f"no window starts at hour {hour}; valid hours are 5..22")
    C = model.params.C_init if C is None else C
    if steps < 2 or not lo < hi:
        raise ConfigError("trace grid needs lo < hi and at least 2 points")
    rows = demand_supply_trace(window, C, model.curve, model.params.s, model.params.cc, np.linspace(lo, hi, steps))
    eq = solve_window(window, C, model.curve, model.params.s, model.params.cc)
    summary = {"hour": hour, "C": C, "equilibrium_delay": eq.mean_delay, "operate_prob": eq.operate_prob,
               "realized_traffic": eq.realized_traffic}
    data_io.write_results(rows, cfg.out_dir / f"trace_h{hour:02d}.csv",
                          columns=["delay_min", "demand_Pa", "supply_Pa", "in_domain"], summary=summary)
    print(f"hour {hour}: equilibrium delay {eq.mean_delay:.6g} min, operate probability {eq.operate_prob:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aircap", description="Economic value of airport departure capacity.")
    ap.add_argument("--config", help="scenario JSON file")
    ap.add_argument("--out", help="output directory (default: config 'out' or ./out)")
    ap.add_argument("--threads", type=int, help="worker threads for per-point evaluation")
    ap.add_argument("--seed", type=int, help="seed for synthetic generation")
    ap.add_argument("--coeffs", help="delay-cost coefficients: paper, sign-swapped, zero or a JSON file")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="calibrate a model from records and financials")
    c.add_argument("--records")
    c.add_argument("--financials")
    c.add_argument("--model", help="where to write the model file")
    c.add_argument("--s", type=float, help="airline decision smoothness, EUR")

    r = sub.add_parser("run", help="run an experiment on a calibrated model")
    r.add_argument("experiment", help="one of: " + ", ".join(EXPERIMENTS))
    r.add_argument("--model")
    r.add_argument("--alpha", type=float, help="marginal capacity cost, EUR per flight/h per hour")

    s = sub.add_parser("synth", help="generate a synthetic airport")
    s.add_argument("spec")

    t = sub.add_parser("trace", help="demand and supply curves of one window")
    t.add_argument("--hour", type=int, required=True)
    t.add_argument("--model")
    t.add_argument("--C", type=float)
    t.add_argument("--lo", type=float, default=-4.0)
    t.add_argument("--hi", type=float, default=60.0)
    t.add_argument("--steps", type=int, default=129)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = _merge_flags(load_config(args.config), args)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "run":
            return cmd_run(cfg, args.experiment)
        if args.command == "synth":
            return cmd_synth(cfg, args.spec, args.seed)
        return cmd_trace(cfg, args.hour, args.C, args.lo, args.hi, args.steps)
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if exc.stage in ("records", "direct") else EXIT_NUMERIC
    except (EquilibriumError, FitError, QuadratureError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
