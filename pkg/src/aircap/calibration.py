"""Turning flight records and airport accounts into a calibrated model.

Calibration runs in three stages. Direct ratios come from the financial
totals and the records. The delay-capacity law and the per-window delay
distributions are then fitted to the records. Finally each window's
potential demand ``beta`` is searched so the equilibrium at the current
capacity reproduces the observed traffic.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, least_squares

from .costs import (
    MIN_SAMPLES,
    CorrectedCostCurve,
    FitError,
    ShiftedLogNormal,
    build_corrected_curve,
    fit_shifted_lognormal,
)
from .equilibrium import EquilibriumError, solve_window
from .parallel import parallel_map
from .model import (
    DELAY_SCALE,
    HOURS,
    N_WINDOWS,
    PAPER_COEFFS,
    AirportParameters,
    CostCoefficients,
    HourWindow,
    ModelError,
    check_day,
)

MODEL_SCHEMA = "aircap-model/1"
MIN_PAIRS = 50
BETA_TOL = 1e-6
MAX_DOUBLINGS = 60


class CalibrationError(RuntimeError):
    """A calibration stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class FlightRecord:
    date: dt.date
    hour: int
    minute: int
    delay_min: float
    mtow_t: float
    pax: Optional[int] = None

    def __post_init__(self) -> None:
        if isinstance(self.date, str):
            try:
                object.__setattr__(self, "date", dt.date.fromisoformat(self.date))
            except ValueError:
                raise ModelError(f"bad date {self.date!r}") from None
        if not 0 <= self.hour <= 23 or not 0 <= self.minute <= 59:
            raise ModelError(f"bad departure time {self.hour:02d}:{self.minute:02d}")
        if not math.isfinite(self.delay_min):
            raise ModelError("delay must be finite")
        if not (math.isfinite(self.mtow_t) and self.mtow_t > 0):
            raise ModelError(f"mtow must be > 0, got {self.mtow_t}")
        if self.pax is not None and self.pax < 0:
            raise ModelError(f"pax must be >= 0, got {self.pax}")


@dataclass(frozen=True)
class FlightRecords:
    """Column store of departures. ``day`` holds proleptic ordinals."""

    day: np.ndarray
    hour: np.ndarray
    minute: np.ndarray
    delay: np.ndarray
    mtow: np.ndarray
    pax: np.ndarray

    @classmethod
    def from_records(cls, records: Iterable[FlightRecord]) -> "FlightRecords":
        records = list(records)
        return cls(
            day=np.array([r.date.toordinal() for r in records], dtype=np.int64),
            hour=np.array([r.hour for r in records], dtype=np.int64),
            minute=np.array([r.minute for r in records], dtype=np.int64),
            delay=np.array([r.delay_min for r in records], dtype=float),
            mtow=np.array([r.mtow_t for r in records], dtype=float),
            pax=np.array([math.nan if r.pax is None else r.pax for r in records], dtype=float),
        )

    def __len__(self) -> int:
        return int(self.day.size)

    def __getitem__(self, i: int) -> FlightRecord:
        pax = self.pax[i]
        return FlightRecord(
            dt.date.fromordinal(int(self.day[i])),
            int(self.hour[i]),
            int(self.minute[i]),
            float(self.delay[i]),
            float(self.mtow[i]),
            None if math.isnan(pax) else int(pax),
        )

    @property
    def n_days(self) -> int:
        return int(np.unique(self.day).size)


@dataclass(frozen=True)
class AirportFinancials:
    """Period totals for one airport."""

    total_flights: float
    total_passengers: float
    total_aero_revenue: float
    total_non_aero_revenue: float
    total_operating_cost: float
    period_days: int = 1

    def __post_init__(self) -> None:
        for name in (
            "total_flights",
            "total_passengers",
            "total_aero_revenue",
            "total_non_aero_revenue",
            "total_operating_cost",
        ):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ModelError(f"{name} must be finite and >= 0, got {v}")
        if self.period_days < 1:
            raise ModelError(f"period_days must be >= 1, got {self.period_days}")


@dataclass(frozen=True)
class DirectEstimates:
    n_f: float
    P: float
    w_init: float
    c_init: float
    sqrt_mtow: float
    T_obs: dict
    n_days: int


@dataclass(frozen=True)
class DelayCapacityFit:
    C: float
    cc: float
    r2: float
    r2_linear: float
    n_pairs: int


def direct_calibrate(financials: AirportFinancials, records: FlightRecords) -> DirectEstimates:
    """Ratios read straight off the accounts and the records.

    ``T_obs`` for each window is its departure count divided by the number
    of distinct dates in the records.
    """
    if len(records) == 0:
        raise ModelError("no flight records")
    if financials.total_flights <= 0:
        raise ModelError("total_flights must be > 0")
    if financials.total_passengers <= 0:
        raise ModelError("total_passengers must be > 0")
    n_days = records.n_days
    counts = np.bincount(records.hour, minlength=24)
    return DirectEstimates(
        n_f=financials.total_passengers / financials.total_flights,
        P=financials.total_aero_revenue / financials.total_flights,
        w_init=financials.total_non_aero_revenue / financials.total_passengers,
        c_init=financials.total_operating_cost / (financials.period_days * N_WINDOWS),
        sqrt_mtow=float(np.mean(np.sqrt(records.mtow))),
        T_obs={h: float(counts[h]) / n_days for h in HOURS},
        n_days=n_days,
    )


def hourly_pairs(records: FlightRecords) -> tuple[np.ndarray, np.ndarray]:
    """(departures, mean delay) for every (date, hour) slot with traffic in the model day."""
    keep = np.isin(records.hour, HOURS)
    key = records.day[keep] * 24 + records.hour[keep]
    slots, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=records.delay[keep], minlength=slots.size)
    return counts.astype(float), sums / counts


def _r2(y: np.ndarray, fitted: np.ndarray) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - fitted) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else 0.0
    return 1.0 - ss_res / ss_tot


def fit_delay_capacity(traffic: Sequence[float], mean_delay: Sequence[float]) -> DelayCapacityFit:
    """Least-squares fit of ``delay = 120 (exp(T/C) - cc)`` to hourly observations.

    A straight line is fitted alongside for comparison. The exponential fit
    works in ``g = 1/C`` and starts from the line's slope and intercept.
    """
    T = np.asarray(traffic, dtype=float)
    y = np.asarray(mean_delay, dtype=float)
    if T.shape != y.shape:
        raise ModelError("traffic and delay columns differ in length")
    if T.size < MIN_PAIRS:
        raise FitError(f"insufficient (traffic, delay) pairs: {T.size} < {MIN_PAIRS}")
    if not (np.all(np.isfinite(T)) and np.all(np.isfinite(y))):
        raise FitError("non-finite traffic or delay")
    if np.ptp(T) == 0:
        raise FitError("degenerate regressor: traffic is constant")

    slope, intercept = np.polyfit(T, y, 1)
    r2_lin = _r2(y, slope * T + intercept)

    scale = float(np.max(T))
    g0 = slope / DELAY_SCALE if slope > 0 else 1.0 / scale
    cc0 = 1.0 - intercept / DELAY_SCALE

    def resid(p):
        g, cc = p
        return DELAY_SCALE * (np.exp(T * g) - cc) - y

    sol = least_squares(
        resid,
        np.array([g0, cc0]),
        x_scale=np.array([1.0 / scale, 1.0]),
        method="lm",
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=10000,
    )
    g, cc = (float(v) for v in sol.x)
    if not sol.success or not (math.isfinite(g) and g > 0) or not (math.isfinite(cc) and cc > 0):
        raise FitError(f"delay-capacity fit diverged (1/C={g}, cc={cc}, status {sol.status})")
    fitted = DELAY_SCALE * (np.exp(T * g) - cc)
    return DelayCapacityFit(C=1.0 / g, cc=cc, r2=_r2(y, fitted), r2_linear=r2_lin, n_pairs=int(T.size))


def post_calibrate_beta(
    window: HourWindow, C_init: float, curve: CorrectedCostCurve, s: float, cc: float
) -> float:
    """Potential demand whose equilibrium traffic at ``C_init`` equals ``window.T_obs``.

    Realised traffic never exceeds demand, so the search starts at
    ``T_obs`` and doubles upward until it overshoots, then bisects.
    """
    target = window.T_obs
    if target == 0:
        return 0.0

    def gap(beta: float) -> float:
        return solve_window(window, C_init, curve, s, cc, beta=beta).realized_traffic - target

    g_lo = gap(target)
    if g_lo >= 0:
        return target
    lo, hi = target, 2.0 * target
    g_hi = gap(hi)
    n = 0
    while g_hi < 0:
        if n >= MAX_DOUBLINGS:
            raise EquilibriumError(
                f"target traffic {target} unreachable; at most {g_hi + target:.6g} flights/hour "
                f"realised with beta up to {hi:.6g}",
                hour=window.hour,
            )
        lo, hi = hi, 2.0 * hi
        g_hi = gap(hi)
        n += 1
    beta = brentq(gap, lo, hi, xtol=1e-13 * hi, rtol=4 * np.finfo(float).eps, maxiter=200)
    miss = gap(beta)
    if abs(miss) > BETA_TOL:
        raise EquilibriumError(f"beta search stalled {miss:.3e} flights/hour from target", hour=window.hour)
    return float(beta)


@dataclass(frozen=True)
class CalibratedAirport:
    params: AirportParameters
    windows: tuple
    curve: CorrectedCostCurve
    coeffs: CostCoefficients = PAPER_COEFFS
    diagnostics: dict = field(default_factory=dict)
    name: str = "airport"

    def __post_init__(self) -> None:
        check_day(self.windows)

    def with_beta(self, betas: Sequence[float]) -> "CalibratedAirport":
        windows = tuple(replace(w, beta=b) for w, b in zip(self.windows, betas))
        return replace(self, windows=windows)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "schema": MODEL_SCHEMA,
            "name": self.name,
            "params": {
                "n_f": p.n_f,
                "P": p.P,
                "w_init": p.w_init,
                "C_init": p.C_init,
                "cc": p.cc,
                "c_init": p.c_init,
                "sqrt_mtow": p.sqrt_mtow,
                "s": p.s,
                "v": p.v,
            },
            "coeffs": [self.coeffs.a1, self.coeffs.a2, self.coeffs.b1, self.coeffs.b2],
            "windows": [
                {
                    "hour": w.hour,
                    "T_obs": w.T_obs,
                    "beta": w.beta,
                    "delay_dist": None if w.delay_dist is None else w.delay_dist.to_dict(),
                }
                for w in self.windows
            ],
            "curve": self.curve.to_dict(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibratedAirport":
        if data.get("schema") != MODEL_SCHEMA:
            raise ModelError(f"unsupported model schema {data.get('schema')!r}; expected {MODEL_SCHEMA}")
        windows = tuple(
            HourWindow(
                w["hour"],
                w["T_obs"],
                w["beta"],
                None if w["delay_dist"] is None else ShiftedLogNormal.from_dict(w["delay_dist"]),
            )
            for w in data["windows"]
        )
        return cls(
            params=AirportParameters(**data["params"]),
            windows=windows,
            curve=CorrectedCostCurve.from_dict(data["curve"]),
            coeffs=CostCoefficients(*data["coeffs"]),
            diagnostics=data.get("diagnostics", {}),
            name=data.get("name", "airport"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CalibratedAirport":
        return cls.from_dict(json.loads(text))


def _run_stage(stage: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except CalibrationError:
        raise
    except (ModelError, EquilibriumError, ArithmeticError, RuntimeError) as exc:
        raise CalibrationError(stage, str(exc)) from exc


def calibrate_beta(airport: CalibratedAirport, *, s: Optional[float] = None, threads: int = 1) -> CalibratedAirport:
    """Redo the demand stage, optionally at a different smoothness ``s``."""
    params = airport.params if s is None else replace(airport.params, s=s)
    cal = replace(airport, params=params)

    def one(w):
        return post_calibrate_beta(w, params.C_init, cal.curve, params.s, params.cc)

    betas = _run_stage("post-calibration", parallel_map, one, cal.windows, threads)
    return cal.with_beta(betas)


def calibrate_airport(
    financials: AirportFinancials,
    records: FlightRecords,
    s: float = 500.0,
    coeffs: CostCoefficients = PAPER_COEFFS,
    *,
    v: float = 0.0,
    threads: int = 1,
    name: str = "airport",
) -> CalibratedAirport:
    """Run all calibration stages and assemble the model.

    Every model hour must have departures in the records; the error lists
    the empty ones otherwise.
    """
    if len(records) == 0:
        raise CalibrationError("direct", "no flight records")
    counts = np.bincount(records.hour, minlength=24)
    missing = [h for h in HOURS if counts[h] == 0]
    thin = [h for h in HOURS if 0 < counts[h] < MIN_SAMPLES]
    if missing or thin:
        parts = []
        if thin or len(records) < MIN_SAMPLES * N_WINDOWS:
            parts.append(f"insufficient samples: windows {thin} have fewer than {MIN_SAMPLES} departures")
        if missing:
            parts.append(f"no departures in windows {missing}")
        raise CalibrationError("records", "; ".join(parts))

    direct = _run_stage("direct", direct_calibrate, financials, records)
    T, y = hourly_pairs(records)
    dc = _run_stage("delay-capacity", fit_delay_capacity, T, y)

    by_hour = [records.delay[records.hour == h] for h in HOURS]

    def fit_one(delays):
        return fit_shifted_lognormal(delays)

    dists = _run_stage("delay-distribution", parallel_map, fit_one, by_hour, threads)
    windows = tuple(HourWindow(h, direct.T_obs[h], None, d) for h, d in zip(HOURS, dists))
    curve = _run_stage("cost-curve", build_corrected_curve, windows, 1.0, direct.sqrt_mtow, coeffs)

    params = _run_stage(
        "direct",
        AirportParameters,
        n_f=direct.n_f,
        P=direct.P,
        w_init=direct.w_init,
        C_init=dc.C,
        cc=dc.cc,
        c_init=direct.c_init,
        sqrt_mtow=direct.sqrt_mtow,
        s=s,
        v=v,
    )
    diagnostics = {
        "n_records": len(records),
        "n_days": direct.n_days,
        "delay_capacity": {"C": dc.C, "cc": dc.cc, "r2": dc.r2, "r2_linear": dc.r2_linear, "n_pairs": dc.n_pairs},
        "windows": [
            {
                "hour": h,
                "n": int(d.size),
                "sample_mean": float(d.mean()),
                "fitted_mean": dist.mean,
                "mean_warning": dist.mean_warning,
            }
            for h, d, dist in zip(HOURS, by_hour, dists)
        ],
        "curve_warnings": curve.flags.warnings(),
    }
    model = CalibratedAirport(params, windows, curve, coeffs, diagnostics, name)
    return calibrate_beta(model, threads=threads)


def calibration_report(model: CalibratedAirport) -> list[dict]:
    """One row per window for the calibration CSV."""
    rows = []
    for w, diag in zip(model.windows, model.diagnostics.get("windows", [{}] * N_WINDOWS)):
        d = w.delay_dist
        rows.append(
            {
                "hour": w.hour,
                "T_obs": w.T_obs,
                "beta": w.beta,
                "mu": d.mu if d else math.nan,
                "sigma": d.sigma if d else math.nan,
                "theta": d.theta if d else math.nan,
                "fitted_mean_min": d.mean if d else math.nan,
                "sample_mean_min": diag.get("sample_mean", math.nan),
                "n_flights": diag.get("n", 0),
                "mean_warning": bool(d.mean_warning) if d else False,
            }
        )
    return rows


def summary_text(model: CalibratedAirport) -> str:
    p = model.params
    dc = model.diagnostics.get("delay_capacity", {})
    lines = [
        f"airport {model.name}",
        f"  passengers per flight n_f   {p.n_f:.6g}",
        f"  aero revenue per flight P   {p.P:.6g} EUR",
        f"  spend per passenger w_init  {p.w_init:.6g} EUR",
        f"  operating cost c_init       {p.c_init:.6g} EUR/h",
        f"  mean sqrt(MTOW)             {p.sqrt_mtow:.6g}",
        f"  capacity C_init             {p.C_init:.6g} flights/h",
        f"  delay offset cc             {p.cc:.6g}",
        f"  smoothness s                {p.s:.6g} EUR",
    ]
    if dc:
        lines.append(f"  delay-capacity fit R2       {dc['r2']:.4f} (linear {dc['r2_linear']:.4f}, {dc['n_pairs']} pairs)")
    lines.append(f"  cost curve R2               {model.curve.r2:.5f}")
    for msg in model.curve.flags.warnings():
        lines.append(f"  warning: {msg}")
    return "\n".join(lines) + "\n"
