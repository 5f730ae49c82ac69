"""Domain types and the constituent equations of the airport capacity model.

Every quantity is per one-hour window unless stated otherwise. A model day is
made of 18 windows starting at 05:00 and ending with the 22:00-23:00 window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

HOURS: tuple[int, ...] = tuple(range(5, 23))
N_WINDOWS = len(HOURS)

# Scale of the delay-traffic law, minutes.
DELAY_SCALE = 120.0


class ModelError(ValueError):
    """Raised when an input violates a model precondition."""


def _finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ModelError(f"{name}: non-finite input {v!r}")


@dataclass(frozen=True)
class AirportParameters:
    """Calibrated per-airport constants.

    Attributes:
        n_f: Average passengers per flight.
        P: Aeronautical revenue per flight, euros.
        w_init: Non-aeronautical revenue per passenger, euros.
        C_init: Current departure capacity, flights/hour.
        cc: Delay offset at zero traffic (dimensionless).
        c_init: Current operating cost, euros/hour.
        sqrt_mtow: Fleet average of the square root of MTOW, sqrt(tonnes).
        s: Airline decision smoothness, euros.
        v: Value of time, euros/minute. Stored only; no equation uses it.
    """

    n_f: float
    P: float
    w_init: float
    C_init: float
    cc: float
    c_init: float
    sqrt_mtow: float
    s: float = 500.0
    v: float = 0.0

    def __post_init__(self) -> None:
        for name in ("n_f", "P", "w_init", "C_init", "cc", "c_init", "sqrt_mtow", "s", "v"):
            _finite(name, getattr(self, name))
        positive = {"n_f": self.n_f, "C_init": self.C_init, "cc": self.cc, "s": self.s}
        for name, value in positive.items():
            if value <= 0:
                raise ModelError(f"{name} must be > 0, got {value}")
        non_negative = {
            "P": self.P,
            "w_init": self.w_init,
            "c_init": self.c_init,
            "sqrt_mtow": self.sqrt_mtow,
            "v": self.v,
        }
        for name, value in non_negative.items():
            if value < 0:
                raise ModelError(f"{name} must be >= 0, got {value}")

    @property
    def revenue_per_flight(self) -> float:
        return self.P + self.n_f * self.w_init


@dataclass(frozen=True)
class CostCoefficients:
    """Quadratic delay-cost coefficients.

    The effective linear and quadratic coefficients for a fleet are
    ``a1 + b1 * sqrt_mtow`` and ``a2 + b2 * sqrt_mtow``.
    """

    a1: float = 7.0
    a2: float = 0.18
    b1: float = -6.0
    b2: float = -0.092

    def effective(self, sqrt_mtow: float) -> tuple[float, float]:
        return self.a1 + self.b1 * sqrt_mtow, self.a2 + self.b2 * sqrt_mtow

    def is_nonnegative(self, sqrt_mtow: float) -> bool:
        lin, quad = self.effective(sqrt_mtow)
        return lin >= 0.0 and quad >= 0.0


PAPER_COEFFS = CostCoefficients()
# MTOW-free and MTOW terms with their signs exchanged.
SIGN_SWAPPED_COEFFS = CostCoefficients(a1=-7.0, a2=-0.18, b1=6.0, b2=0.092)
ZERO_COEFFS = CostCoefficients(a1=0.0, a2=0.0, b1=0.0, b2=0.0)

COEFF_PRESETS: dict[str, CostCoefficients] = {
    "paper": PAPER_COEFFS,
    "sign-swapped": SIGN_SWAPPED_COEFFS,
    "zero": ZERO_COEFFS,
}


def coefficient_preset(name: str) -> CostCoefficients:
    try:
        return COEFF_PRESETS[name]
    except KeyError:
        raise ModelError(
            f"unknown cost-coefficient preset {name!r}; choose from {sorted(COEFF_PRESETS)}"
        ) from None


@dataclass(frozen=True)
class HourWindow:
    """One hour of the operating day.

    ``delay_dist`` is a :class:`aircap.costs.ShiftedLogNormal` once the window
    has been calibrated; ``beta`` is set by post-calibration.
    """

    hour: int
    T_obs: float
    beta: Optional[float] = None
    delay_dist: Optional[object] = None

    def __post_init__(self) -> None:
        if self.hour not in HOURS:
            raise ModelError(f"window hour must be in 5..22, got {self.hour}")
        _finite("T_obs", self.T_obs)
        if self.T_obs < 0:
            raise ModelError(f"T_obs must be >= 0, got {self.T_obs}")
        if self.beta is not None:
            _finite("beta", self.beta)
            if self.beta < 0:
                raise ModelError(f"beta must be >= 0, got {self.beta}")


def check_day(windows) -> None:
    """Require exactly one window per model hour, in order."""
    hours = tuple(w.hour for w in windows)
    if hours != HOURS:
        missing = sorted(set(HOURS) - set(hours))
        raise ModelError(f"expected windows for hours 5..22 in order; missing {missing}, got {hours}")


@dataclass(frozen=True)
class WindowOutcome:
    hour: int
    revenue: float
    traffic: float
    mean_delay: float
    operate_prob: float
    w: float


@dataclass(frozen=True)
class ProfitBreakdown:
    """Daily profit and its components, euros/day."""

    aero_revenue: float
    non_aero_revenue: float
    capacity_cost: float
    operating_profit: float
    per_window: tuple[WindowOutcome, ...] = field(default=())

    @classmethod
    def assemble(cls, aero: float, non_aero: float, capacity_cost: float, per_window=()) -> "ProfitBreakdown":
        return cls(aero, non_aero, capacity_cost, aero + non_aero - capacity_cost, tuple(per_window))

    @property
    def revenue(self) -> float:
        return self.aero_revenue + self.non_aero_revenue

    @property
    def traffic(self) -> float:
        return sum(w.traffic for w in self.per_window)

    @property
    def mean_delay(self) -> float:
        """Traffic-weighted mean delay over the day, minutes."""
        total = self.traffic
        if total <= 0:
            return float("nan")
        return sum(w.traffic * w.mean_delay for w in self.per_window) / total


def delay_from_traffic(T: float, C: float, cc: float) -> float:
    """Mean departure delay in minutes for traffic ``T`` at capacity ``C``."""
    _finite("delay_from_traffic", T, C, cc)
    if C <= 0:
        raise ModelError(f"capacity must be > 0, got {C}")
    if cc <= 0:
        raise ModelError(f"cc must be > 0, got {cc}")
    if T < 0:
        raise ModelError(f"traffic must be >= 0, got {T}")
    return DELAY_SCALE * (math.exp(T / C) - cc)


def traffic_from_delay(mean_delay: float, C: float, cc: float) -> float:
    """Inverse of :func:`delay_from_traffic`."""
    _finite("traffic_from_delay", mean_delay, C, cc)
    arg = mean_delay / DELAY_SCALE + cc
    if arg <= 0:
        raise ModelError(f"delay {mean_delay} is below the supply-curve domain (-120*cc)")
    return C * math.log(arg)


def raw_cost_of_delay(delay: float, sqrt_mtow: float, coeffs: CostCoefficients = PAPER_COEFFS) -> float:
    """Airline cost of a single flight delay, euros. Early departures cost nothing."""
    _finite("raw_cost_of_delay", delay, sqrt_mtow)
    if delay < 0:
        return 0.0
    lin, quad = coeffs.effective(sqrt_mtow)
    return lin * delay + quad * delay * delay


def operate_probability(cost: float, s: float) -> float:
    """Probability that an airline operates a flight given its delay cost."""
    _finite("operate_probability", cost, s)
    if s <= 0:
        raise ModelError(f"smoothness must be > 0, got {s}")
    x = cost / s
    if x > 700.0:
        # 2 / (1 + e^x) ~ 2 e^-x without overflowing
        return 2.0 * math.exp(-x)
    return 2.0 / (1.0 + math.exp(x))


def hourly_revenue(params: AirportParameters, w: float, P_a: float, beta: float) -> tuple[float, float]:
    """Aeronautical and non-aeronautical revenue for one hour, euros."""
    traffic = P_a * beta
    return params.P * traffic, params.n_f * w * traffic


def capacity_cost(alpha: float, C: float, params: AirportParameters) -> float:
    """Hourly operating cost of running capacity ``C``, euros."""
    if C <= 0:
        raise ModelError(f"capacity must be > 0, got {C}")
    return alpha * (C - params.C_init) + params.c_init
