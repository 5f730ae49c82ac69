"""Delay-traffic equilibrium within one hour window.

Airline demand for departures falls with the expected cost of the mean delay,
while the capacity law turns traffic back into delay. The equilibrium mean
delay is where the two agree:

    2 / (1 + exp(cost(d) / s)) == (C / beta) * ln(d / 120 + cc)

The left side is the operate probability, the right side the fraction of
demand the capacity curve says is flying at delay ``d``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .costs import CorrectedCostCurve, corrected_cost
from .model import (
    DELAY_SCALE,
    HOURS,
    ModelError,
    ProfitBreakdown,
    WindowOutcome,
    capacity_cost,
    delay_from_traffic,
    hourly_revenue,
    operate_probability,
)

RESIDUAL_TOL = 1e-9
# load u = T/C; d(delay)/du = 120 e^u, so 1e-14 in load is ~1e-12 minutes
XTOL_LOAD = 1e-14
MAX_ITER = 200
MAX_EXPANSIONS = 60


class EquilibriumError(RuntimeError):
    """The implicit delay equation could not be bracketed or solved."""

    def __init__(self, message: str, bracket: tuple[float, float] = (math.nan, math.nan), hour: Optional[int] = None):
        prefix = f"window {hour}: " if hour is not None else ""
        super().__init__(f"{prefix}{message} (bracket {bracket})")
        self.bracket = bracket
        self.hour = hour


class MultipleRootsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EquilibriumResult:
    mean_delay: float
    operate_prob: float
    realized_traffic: float
    residual: float
    iterations: int
    bracket: tuple[float, float]
    multiple_roots: bool = False


def demand(delay: float, curve: CorrectedCostCurve, s: float) -> float:
    """Operate probability at a given mean delay."""
    if delay == math.inf:
        return 0.0
    cost = corrected_cost(curve, delay)
    if cost == math.inf:
        return 0.0
    return operate_probability(cost, s)


def supply(delay: float, beta: float, C: float, cc: float) -> float:
    """Fraction of demand that capacity ``C`` carries at mean delay ``delay``."""
    return (C / beta) * math.log(delay / DELAY_SCALE + cc)


def _initial_bracket(beta: float, C: float, cc: float) -> tuple[float, float]:
    """Load-space image of the delay bracket ``[120(1 - cc) - 1, delay_from_traffic(beta) + 1]``."""
    lo = math.log1p(-1.0 / DELAY_SCALE)
    x = beta / C
    # ln(e^x + 1/120) without overflowing for large demand
    hi = x + math.log1p(math.exp(-x) / DELAY_SCALE)
    return lo, hi


def _to_load(delay: float, cc: float) -> float:
    return math.log(delay / DELAY_SCALE + cc)


def _to_delay(load: float, cc: float) -> float:
    if load > 709.0:
        return math.inf
    return DELAY_SCALE * (math.exp(load) - cc)


def solve_window(
    window,
    C: float,
    curve: CorrectedCostCurve,
    s: float,
    cc: float,
    *,
    beta: Optional[float] = None,
    bracket_scale: float = 1.0,
) -> EquilibriumResult:
    """Solve the implicit delay equation for one window at capacity ``C``.

    The root is sought in load space, ``u = ln(d/120 + cc) = T/C``, where the
    supply side is linear; the bracket is the delay bracket
    ``[120(1 - cc) - 1, delay_from_traffic(beta) + 1]`` mapped there. It is
    widened (doubling its width) until it straddles the root.

    ``beta`` overrides ``window.beta``. ``bracket_scale`` widens the initial
    bracket about its midpoint, to check the answer does not depend on it.
    """
    b = window.beta if beta is None else beta
    hour = getattr(window, "hour", None)
    if b is None:
        raise ModelError(f"window {hour} has no demand (beta)")
    if b < 0 or not math.isfinite(b):
        raise ModelError(f"beta must be finite and >= 0, got {b}")
    if C <= 0:
        raise ModelError(f"capacity must be > 0, got {C}")
    if b == 0:
        return EquilibriumResult(delay_from_traffic(0.0, C, cc), 1.0, 0.0, 0.0, 0, (math.nan, math.nan))

    slope = C / b

    def g(u: float) -> float:
        return demand(_to_delay(u, cc), curve, s) - slope * u

    lo, hi = _initial_bracket(b, C, cc)
    if bracket_scale != 1.0:
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * bracket_scale
        lo, hi = mid - half, mid + half
    glo, ghi = g(lo), g(hi)
    n = 0
    while not (glo > 0 and ghi < 0):
        if n >= MAX_EXPANSIONS or not (math.isfinite(glo) and math.isfinite(ghi)):
            raise EquilibriumError("bracket expansion failed", (_to_delay(lo, cc), _to_delay(hi, cc)), hour)
        width = hi - lo
        if glo <= 0:
            lo -= width
            glo = g(lo)
        if ghi >= 0:
            hi += width
            ghi = g(hi)
        n += 1

    multiple = False
    if not curve.flags.monotone:
        lo, hi, multiple = _isolate_root(g, lo, hi, slope, cc, b, C, curve, s)
        if multiple:
            warnings.warn(
                f"window {hour}: demand curve is not monotone; several equilibria, "
                "returning the one nearest the supply-side anchor",
                MultipleRootsWarning,
                stacklevel=2,
            )

    u, info = brentq(g, lo, hi, xtol=XTOL_LOAD, rtol=4 * np.finfo(float).eps, maxiter=MAX_ITER, full_output=True)
    bracket = (_to_delay(lo, cc), _to_delay(hi, cc))
    if not info.converged:
        raise EquilibriumError("root finder did not converge", bracket, hour)
    delay = _to_delay(u, cc)
    p_a = demand(delay, curve, s)
    residual = p_a - supply(delay, b, C, cc)
    if abs(residual) > RESIDUAL_TOL:
        raise EquilibriumError(f"residual {residual:.3e} above tolerance", bracket, hour)
    return EquilibriumResult(delay, p_a, p_a * b, residual, info.iterations, bracket, multiple)


def _isolate_root(g, lo, hi, slope, cc, beta, C, curve, s, n=2001):
    """Narrow the bracket to the sign change nearest the supply-side anchor."""
    grid = np.linspace(lo, hi, n)
    vals = np.array([g(u) for u in grid])
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if idx.size <= 1:
        return lo, hi, False
    guess = min(demand(_to_delay(beta / C, cc), curve, s), 1.0)
    anchor = beta * guess / C
    centres = 0.5 * (grid[idx] + grid[idx + 1])
    j = idx[int(np.argmin(np.abs(centres - anchor)))]
    a, b = grid[j], grid[j + 1]
    if vals[j] == 0:
        b = a + 1e-12 * max(1.0, abs(a))
    return a, b, True


def demand_supply_trace(window, C: float, curve: CorrectedCostCurve, s: float, cc: float, delay_grid: Sequence[float]):
    """Demand and supply operate probabilities over a grid of mean delays.

    Rows outside the supply curve's log domain carry ``supply_Pa = nan`` and
    ``in_domain = False``.
    """
    if len(delay_grid) == 0:
        raise ModelError("delay grid is empty")
    beta = window.beta
    if not beta:
        raise ModelError("trace needs a window with beta > 0")
    rows = []
    for d in delay_grid:
        d = float(d)
        ok = d / DELAY_SCALE + cc > 0
        rows.append(
            {
                "delay_min": d,
                "demand_Pa": demand(d, curve, s),
                "supply_Pa": supply(d, beta, C, cc) if ok else math.nan,
                "in_domain": ok,
            }
        )
    return rows


def daily_profit(airport, C: float, alpha: float, *, curve: Optional[CorrectedCostCurve] = None,
                 spend: Optional[Callable[[float], float]] = None, params=None) -> ProfitBreakdown:
    """Operating profit over the 18 windows at capacity ``C``.

    ``airport`` needs ``params``, ``windows`` (with ``beta``) and ``curve``.
    ``curve`` and ``params`` override the airport's own; ``spend`` maps a
    window's equilibrium mean delay to non-aeronautical revenue per passenger
    in place of the constant ``w_init``.
    """
    params = airport.params if params is None else params
    curve = airport.curve if curve is None else curve
    aero = non_aero = 0.0
    outcomes = []
    for window in airport.windows:
        try:
            eq = solve_window(window, C, curve, params.s, params.cc)
        except EquilibriumError as exc:
            if exc.hour is None:
                exc.hour = window.hour
            raise
        w = params.w_init if spend is None else spend(eq.mean_delay)
        a, n = hourly_revenue(params, w, eq.operate_prob, window.beta)
        aero += a
        non_aero += n
        outcomes.append(WindowOutcome(window.hour, a + n, eq.realized_traffic, eq.mean_delay, eq.operate_prob, w))
    cost = len(HOURS) * capacity_cost(alpha, C, params)
    return ProfitBreakdown.assemble(aero, non_aero, cost, outcomes)
