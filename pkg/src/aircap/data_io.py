"""Reading inputs, generating synthetic airports and writing result tables.

Record CSV: header ``date,hour,minute,delay_min,mtow_t[,pax]``, one departure
per row, ISO dates. Financials: ``key = value`` lines naming the
:class:`AirportFinancials` fields; ``#`` starts a comment.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .calibration import (
    AirportFinancials,
    FlightRecord,
    FlightRecords,
    post_calibrate_beta,
)
from .costs import ShiftedLogNormal, build_corrected_curve
from .model import (
    HOURS,
    N_WINDOWS,
    PAPER_COEFFS,
    CostCoefficients,
    HourWindow,
    ModelError,
    delay_from_traffic,
)

RECORD_COLUMNS = ("date", "hour", "minute", "delay_min", "mtow_t")
SIG_DIGITS = 12


class DataError(ModelError):
    """Bad or unreadable input data."""


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass(frozen=True)
class RecordLoad:
    records: FlightRecords
    errors: tuple = ()


def fmt_num(x, digits: int = SIG_DIGITS) -> str:
    """Plain decimal text for a number; ``digits=None`` keeps the shortest exact form."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "0"
    if digits is None:
        return np.format_float_positional(x, unique=True, trim="-")
    return np.format_float_positional(x, precision=digits, unique=False, fractional=False, trim="-")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        return ";".join(_cell(v) for v in value)
    return fmt_num(value)


def load_records(path) -> RecordLoad:
    """Parse a record CSV. Malformed rows are skipped and listed with their line numbers."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"records file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in header]
    missing = [c for c in RECORD_COLUMNS if c not in header]
    if missing:
        raise DataError(f"{path}: missing required columns {missing}")
    idx = {c: header.index(c) for c in header}
    has_pax = "pax" in idx
    rows: list[FlightRecord] = []
    errors: list[RowError] = []
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if len(row) != len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(row)}")
            pax_text = row[idx["pax"]].strip() if has_pax else ""
            rec = FlightRecord(
                date=dt.date.fromisoformat(row[idx["date"]].strip()),
                hour=int(row[idx["hour"]]),
                minute=int(row[idx["minute"]]),
                delay_min=float(row[idx["delay_min"]]),
                mtow_t=float(row[idx["mtow_t"]]),
                pax=int(pax_text) if pax_text else None,
            )
        except (ValueError, ModelError) as exc:
            errors.append(RowError(line, str(exc)))
            continue
        rows.append(rec)
    if not rows:
        raise DataError(f"{path}: no valid records ({len(errors)} malformed rows)")
    return RecordLoad(FlightRecords.from_records(rows), tuple(errors))


def write_records(records: FlightRecords, path) -> None:
    path = Path(path)
    with_pax = not np.all(np.isnan(records.pax))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS + (("pax",) if with_pax else ()))
    for i in range(len(records)):
        row = [
            dt.date.fromordinal(int(records.day[i])).isoformat(),
            str(int(records.hour[i])),
            str(int(records.minute[i])),
            fmt_num(records.delay[i], None),
            fmt_num(records.mtow[i], None),
        ]
        if with_pax:
            row.append("" if math.isnan(records.pax[i]) else str(int(records.pax[i])))
        w.writerow(row)
    _write_text(path, buf.getvalue())


def load_financials(path) -> AirportFinancials:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"financials file not found: {path}")
    names = {f.name for f in fields(AirportFinancials)}
    values: dict = {}
    for n, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{n}: expected key=value")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in names:
            raise DataError(f"{path}:{n}: unknown key {key!r}")
        if key in values:
            raise DataError(f"{path}:{n}: duplicate key {key!r}")
        try:
            values[key] = int(val) if key == "period_days" else float(val)
        except ValueError:
            raise DataError(f"{path}:{n}: {key} is not a number: {val!r}") from None
    absent = sorted(names - set(values))
    if absent:
        raise DataError(f"{path}: missing keys {absent}")
    return AirportFinancials(**values)


def write_financials(fin: AirportFinancials, path) -> None:
    lines = [f"{f.name} = {fmt_num(getattr(fin, f.name), None)}" for f in fields(AirportFinancials)]
    _write_text(Path(path), "\n".join(lines) + "\n")


@dataclass(frozen=True)
class SyntheticAirportSpec:
    """Ground truth for a generated airport.

    ``traffic`` gives departures per day in each of the 18 windows. Without
    noise every day repeats those counts and each window's delays are the
    exact quantiles of its true distribution, shifted so their mean sits on
    the delay-capacity curve. With noise, daily counts are Poisson and delays
    are random draws, shifted so each day's mean follows that day's count.

    Each window's true distribution has mean ``delay_from_traffic(traffic)``,
    standard deviation ``sd_base + sd_slope * mean`` and shift ``theta``.
    """

    traffic: tuple
    C: float
    cc: float
    n_f: float = 120.0
    P: float = 1500.0
    w_init: float = 12.0
    c_init: float = 60000.0
    mtow_t: tuple = (74.0,)
    sd_base: float = 12.0
    sd_slope: float = 0.5
    theta: float = -25.0
    days: int = 30
    n_records: Optional[int] = None
    noise: bool = False
    seed: int = 0
    s: float = 500.0
    coeffs: tuple = (PAPER_COEFFS.a1, PAPER_COEFFS.a2, PAPER_COEFFS.b1, PAPER_COEFFS.b2)
    name: str = "synthetic"
    start_date: str = "2024-01-01"

    def __post_init__(self) -> None:
        object.__setattr__(self, "traffic", tuple(self.traffic))
        object.__setattr__(self, "mtow_t", tuple(float(m) for m in self.mtow_t))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.traffic) != N_WINDOWS:
            raise ModelError(f"traffic needs {N_WINDOWS} windows, got {len(self.traffic)}")
        for t in self.traffic:
            if not (isinstance(t, int) or float(t).is_integer()) or t < 0:
                raise ModelError(f"traffic must be whole departures per day >= 0, got {t}")
        object.__setattr__(self, "traffic", tuple(int(t) for t in self.traffic))
        if self.days < 1:
            raise ModelError(f"days must be >= 1, got {self.days}")
        if self.n_records is not None and self.n_records < 1:
            raise ModelError(f"n_records must be >= 1, got {self.n_records}")
        if not self.mtow_t or any(m <= 0 for m in self.mtow_t):
            raise ModelError("mtow_t needs positive values")
        if len(self.coeffs) != 4:
            raise ModelError("coeffs needs four values a1, a2, b1, b2")
        if self.C <= 0 or self.cc <= 0 or self.s <= 0:
            raise ModelError("C, cc and s must be > 0")
        for t in self.traffic:
            m = delay_from_traffic(t, self.C, self.cc)
            if m <= self.theta:
                raise ModelError(f"theta {self.theta} is not below the mean delay {m:.4g}")
            if self.sd_base + self.sd_slope * m <= 0:
                raise ModelError("delay standard deviation must be > 0 in every window")
        dt.date.fromisoformat(self.start_date)

    @property
    def cost_coefficients(self) -> CostCoefficients:
        return CostCoefficients(*self.coeffs)

    def true_distributions(self) -> list[ShiftedLogNormal]:
        out = []
        for t in self.traffic:
            m = delay_from_traffic(t, self.C, self.cc)
            out.append(ShiftedLogNormal.from_moments(m, self.sd_base + self.sd_slope * m, self.theta))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticAirportSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ModelError(f"unknown synthetic-spec keys {unknown}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["traffic"] = list(self.traffic)
        d["mtow_t"] = list(self.mtow_t)
        d["coeffs"] = list(self.coeffs)
        return d


@dataclass(frozen=True)
class SyntheticAirport:
    records: FlightRecords
    financials: AirportFinancials
    manifest: dict = field(default_factory=dict)


def _window_delays(dist: ShiftedLogNormal, counts: np.ndarray, target: float, rng, noise: bool,
                   day_mean=None) -> list[np.ndarray]:
    """Delays for one window, one array per day."""
    if noise:
        # a busier day is a later day: each day's draws centre on its own count's delay
        return [dist.sample(rng, int(n)) + (day_mean(int(n)) - target) for n in counts]
    n_day = int(counts[0])
    days = counts.size
    total = n_day * days
    q = (np.arange(total) + 0.5) / total
    x = dist.theta + np.exp(dist.mu + dist.sigma * ndtri(q))
    # one shift for the whole window puts the pooled mean on the curve; days
    # share a count, so the hourly fit only sees that pooled mean
    x += target - x.mean()
    # day d takes every days-th quantile from d, so each day spans the distribution
    return list(x.reshape(n_day, days).T)


def generate_synthetic(spec: SyntheticAirportSpec) -> SyntheticAirport:
    """Simulate an airport's departures from known parameters.

    All randomness comes from ``numpy.random.default_rng(spec.seed)``.
    """
    rng = np.random.default_rng(spec.seed)
    dists = spec.true_distributions()
    start = dt.date.fromisoformat(spec.start_date).toordinal()
    daily = sum(spec.traffic)
    days = spec.days
    if spec.n_records is not None:
        days = max(1, math.ceil(spec.n_records / max(daily, 1)))

    if spec.noise:
        counts = rng.poisson(np.array(spec.traffic, dtype=float), size=(days, N_WINDOWS))
    else:
        counts = np.tile(np.array(spec.traffic, dtype=np.int64), (days, 1))

    per_window = []
    for j, (dist, t) in enumerate(zip(dists, spec.traffic)):
        if counts[:, j].sum() == 0:
            per_window.append([np.empty(0)] * days)
            continue
        target = delay_from_traffic(t, spec.C, spec.cc)
        per_window.append(_window_delays(dist, counts[:, j], target, rng, spec.noise,
                                         lambda n: delay_from_traffic(n, spec.C, spec.cc)))

    day_col, hour_col, minute_col, delay_col = [], [], [], []
    for d in range(days):
        for j, h in enumerate(HOURS):
            delays = per_window[j][d]
            n = delays.size
            day_col.append(np.full(n, start + d, dtype=np.int64))
            hour_col.append(np.full(n, h, dtype=np.int64))
            minute_col.append((60 * np.arange(n)) // max(n, 1))
            delay_col.append(delays)
    day = np.concatenate(day_col)
    n_total = day.size
    keep = n_total if spec.n_records is None else min(spec.n_records, n_total)
    mtow = np.resize(np.array(spec.mtow_t), n_total)
    records = FlightRecords(
        day=day[:keep],
        hour=np.concatenate(hour_col)[:keep],
        minute=np.concatenate(minute_col)[:keep].astype(np.int64),
        delay=np.concatenate(delay_col)[:keep],
        mtow=mtow[:keep],
        pax=np.full(keep, round(spec.n_f), dtype=float),
    )
    flights = float(keep)
    pax_total = flights * spec.n_f
    financials = AirportFinancials(
        total_flights=flights,
        total_passengers=pax_total,
        total_aero_revenue=spec.P * flights,
        total_non_aero_revenue=spec.w_init * pax_total,
        total_operating_cost=spec.c_init * N_WINDOWS * days,
        period_days=days,
    )
    return SyntheticAirport(records, financials, _manifest(spec, dists, records, days))


def _manifest(spec: SyntheticAirportSpec, dists, records: FlightRecords, days: int) -> dict:
    coeffs = spec.cost_coefficients
    sqrt_mtow = float(np.mean(np.sqrt(records.mtow))) if len(records) else float(np.mean(np.sqrt(spec.mtow_t)))
    windows = [HourWindow(h, float(t), None, d) for h, t, d in zip(HOURS, spec.traffic, dists)]
    curve = build_corrected_curve(windows, 1.0, sqrt_mtow, coeffs)
    betas = [post_calibrate_beta(w, spec.C, curve, spec.s, spec.cc) for w in windows]
    return {
        "name": spec.name,
        "seed": spec.seed,
        "days": days,
        "n_records": len(records),
        "C": spec.C,
        "cc": spec.cc,
        "n_f": spec.n_f,
        "P": spec.P,
        "w_init": spec.w_init,
        "c_init": spec.c_init,
        "sqrt_mtow": sqrt_mtow,
        "s": spec.s,
        "coeffs": list(spec.coeffs),
        "noise": spec.noise,
        "windows": [
            {"hour": w.hour, "T_obs": w.T_obs, "beta": b, "mu": d.mu, "sigma": d.sigma, "theta": d.theta}
            for w, b, d in zip(windows, betas, dists)
        ],
    }


def write_synthetic(airport: SyntheticAirport, out_dir, stem: str = "synthetic") -> dict:
    """Write records CSV, financials and manifest; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out / f"{stem}_records.csv",
        "financials": out / f"{stem}_financials.txt",
        "manifest": out / f"{stem}_manifest.json",
    }
    write_records(airport.records, paths["records"])
    write_financials(airport.financials, paths["financials"])
    write_json(airport.manifest, paths["manifest"])
    return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(data: dict, path) -> None:
    _write_text(Path(path), json.dumps(_jsonable(data), indent=1, sort_keys=True) + "\n")


def write_results(rows: Sequence[dict], path, columns: Optional[Sequence[str]] = None,
                  summary: Optional[dict] = None) -> Path:
    """Write a table as CSV with 12 significant digits.

    Columns follow ``columns`` or the first row's key order. With ``summary``
    a JSON file with the same stem is written next to the CSV.
    """
    if not rows:
        raise DataError(f"refusing to write an empty table to {path}")
    path = Path(path)
    cols = list(columns) if columns is not None else list(rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    _write_text(path, buf.getvalue())
    if summary is not None:
        write_json(summary, path.with_suffix(".json"))
    return path


def read_results(path) -> list[dict]:
    """Read a CSV written by :func:`write_results`; numeric cells become floats."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                if v in ("true", "false"):
                    parsed[k] = v == "true"
                    continue
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = v
            out.append(parsed)
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
