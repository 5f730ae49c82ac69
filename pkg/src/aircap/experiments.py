"""Capacity, demand, predictability and smoothness experiments on a calibrated airport.

Each experiment returns plain rows (one dict per grid point) plus a summary
dict, which :func:`aircap.data_io.write_results` turns into CSV and JSON.
Grid points are evaluated independently and assembled by grid index, so the
output does not depend on the thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .calibration import CalibratedAirport, calibrate_beta
from .costs import build_corrected_curve, corrected_cost, order_family
from .equilibrium import EquilibriumError, daily_profit
from .model import DELAY_SCALE, N_WINDOWS, ModelError, ProfitBreakdown
from .parallel import parallel_map

GOLDEN_TOL = 1e-3
VARIABLES = ("capacity", "n_f", "sigma_scale", "smoothness", "alpha")


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    lo: float
    hi: float
    steps: int
    alpha: Optional[float] = None

    def __post_init__(self) -> None:
        if self.variable not in VARIABLES:
            raise ModelError(f"unknown sweep variable {self.variable!r}; choose from {list(VARIABLES)}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.lo < self.hi:
            raise ModelError(f"sweep needs lo < hi, got {self.lo}, {self.hi}")
        if self.steps < 2:
            raise ModelError(f"sweep needs at least 2 steps, got {self.steps}")

    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class ExploratorySpendParams:
    """Delay-dependent spend per passenger.

    ``delta_t_init`` is the airport's traffic-weighted mean delay at its
    current capacity; build it with :meth:`from_model`.
    """

    t_e: float
    s_e: float
    delta_t_init: float

    @classmethod
    def from_model(cls, model: CalibratedAirport, t_e: float, s_e: float) -> "ExploratorySpendParams":
        base = daily_profit(model, model.params.C_init, 0.0)
        return cls(t_e, s_e, base.mean_delay)

    def spend(self, w_init: float) -> Callable[[float], float]:
        t_e, s_e, d0 = self.t_e, self.s_e, self.delta_t_init

        def w(delay: float) -> float:
            u = (delay - d0) / DELAY_SCALE
            sat = s_e * u * u * w_init
            return w_init + t_e * u * w_init + (sat if delay < d0 else -sat)

        return w


@dataclass
class SweepResult:
    rows: list
    summary: dict = field(default_factory=dict)


def _profit_row(C: float, pb: Optional[ProfitBreakdown], error: str = "") -> dict:
    if pb is None:
        nan = math.nan
        return {"C": C, "operating_profit": nan, "aero_revenue": nan, "non_aero_revenue": nan,
                "capacity_cost": nan, "traffic": nan, "mean_delay": nan, "error": error}
    return {
        "C": C,
        "operating_profit": pb.operating_profit,
        "aero_revenue": pb.aero_revenue,
        "non_aero_revenue": pb.non_aero_revenue,
        "capacity_cost": pb.capacity_cost,
        "traffic": pb.traffic,
        "mean_delay": pb.mean_delay,
        "error": error,
    }


def _safe_profit(model, C, alpha, **kw):
    try:
        return daily_profit(model, C, alpha, **kw), ""
    except (EquilibriumError, ModelError, ArithmeticError) as exc:
        return None, str(exc)


def golden_max(f: Callable[[float], float], a: float, b: float, c: float, tol: float = GOLDEN_TOL):
    """Golden-section refinement of a maximum bracketed by ``a < b < c`` with ``f(b)`` highest."""
    scale = max(abs(b), 1.0)
    res = minimize_scalar(lambda x: -f(x), bracket=(a, b, c), method="golden",
                          options={"xtol": tol / (2.0 * scale)})
    x = float(res.x)
    fx = -float(res.fun)
    fb = f(b)
    if fb > fx:
        x, fx = b, fb
    return x, fx


def local_maxima(xs: Sequence[float], ys: Sequence[float]) -> list[tuple[int, int]]:
    """Index ranges ``(i, j)`` of grid-local maxima.

    A single point counts when it beats both neighbours; a run of equal
    values beating the points on either side counts as a plateau.
    """
    ys = list(ys)
    n = len(ys)
    out = []
    i = 1
    while i < n - 1:
        if not math.isfinite(ys[i]):
            i += 1
            continue
        j = i
        while j + 1 < n and ys[j + 1] == ys[i]:
            j += 1
        left, right = ys[i - 1], ys[j + 1] if j + 1 < n else -math.inf
        if j + 1 < n and math.isfinite(left) and math.isfinite(right) and ys[i] > left and ys[i] > right:
            out.append((i, j))
        i = j + 1
    return out


def _refine(profit: Callable[[float], float], xs, ys, run: tuple[int, int]) -> tuple[float, float]:
    i, j = run
    if i != j:
        mid = 0.5 * (xs[i] + xs[j])
        return mid, profit(mid)
    return golden_max(profit, xs[i - 1], xs[i], xs[i + 1])


def sweep_capacity(
    model: CalibratedAirport,
    alpha: float,
    grid: Sequence[float],
    *,
    cap_at_init: bool = False,
    threads: int = 1,
    spend: Optional[Callable[[float], float]] = None,
    params=None,
    curve=None,
) -> SweepResult:
    """Daily profit over a capacity grid and its maximiser.

    The best grid point is refined by golden section to 1e-3 flights/hour
    when it is interior. With ``cap_at_init`` an optimum below the current
    capacity is reported as the current capacity.
    """
    grid = [float(c) for c in grid]
    if len(grid) < 2:
        raise ModelError("capacity grid needs at least 2 points")
    if any(c <= 0 for c in grid):
        raise ModelError("capacity grid must be positive")
    kw = {"spend": spend, "params": params, "curve": curve}
    results = parallel_map(lambda C: _safe_profit(model, C, alpha, **kw), grid, threads)
    rows = [_profit_row(C, pb, err) for C, (pb, err) in zip(grid, results)]
    ys = [r["operating_profit"] for r in rows]
    failures = [{"C": r["C"], "error": r["error"]} for r in rows if r["error"]]
    ok = [i for i, y in enumerate(ys) if math.isfinite(y)]
    summary = {"alpha": alpha, "failures": failures, "n_points": len(grid)}
    if not ok:
        summary.update(optimum_C=math.nan, optimum_profit=math.nan, capped=False)
        return SweepResult(rows, summary)

    def profit(C: float) -> float:
        return daily_profit(model, C, alpha, **kw).operating_profit

    best = max(ok, key=lambda i: (ys[i], -i))
    if 0 < best < len(grid) - 1 and math.isfinite(ys[best - 1]) and math.isfinite(ys[best + 1]):
        # ties at the top form a plateau; refine only a strict maximum
        if ys[best] > ys[best - 1] and ys[best] > ys[best + 1]:
            opt_C, opt_P = golden_max(profit, grid[best - 1], grid[best], grid[best + 1])
        else:
            opt_C, opt_P = grid[best], ys[best]
    else:
        opt_C, opt_P = grid[best], ys[best]
    capped = False
    p = model.params if params is None else params
    if cap_at_init and opt_C < p.C_init:
        opt_C, opt_P, capped = p.C_init, profit(p.C_init), True
    maxima = local_maxima(grid, ys)
    summary.update(
        optimum_C=opt_C,
        optimum_profit=opt_P,
        grid_argmax=grid[best],
        capped=capped,
        interior=0 < best < len(grid) - 1,
        n_local_maxima=len(maxima),
    )
    return SweepResult(rows, summary)


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - fitted) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def sweep_nf(
    model: CalibratedAirport,
    alpha: float,
    nf_grid: Sequence[float],
    C_grid: Sequence[float],
    *,
    threads: int = 1,
) -> SweepResult:
    """Capped optimal capacity for each passengers-per-flight value.

    The summary carries the least-squares line through the points whose
    optimum lies strictly above the current capacity.
    """
    C_init = model.params.C_init

    def one(nf: float) -> dict:
        params = replace(model.params, n_f=float(nf))
        try:
            res = sweep_capacity(model, alpha, C_grid, cap_at_init=True, params=params)
        except (EquilibriumError, ModelError) as exc:
            return {"n_f": float(nf), "optimal_C": math.nan, "optimal_profit": math.nan, "capped": False,
                    "error": str(exc)}
        s = res.summary
        err = "; ".join(f["error"] for f in s["failures"])
        return {"n_f": float(nf), "optimal_C": s["optimum_C"], "optimal_profit": s["optimum_profit"],
                "capped": s["capped"], "error": err}

    rows = parallel_map(one, list(nf_grid), threads)
    tail = [r for r in rows if math.isfinite(r["optimal_C"]) and r["optimal_C"] > C_init + GOLDEN_TOL]
    summary: dict = {"alpha": alpha, "C_init": C_init, "n_tail": len(tail)}
    capped = [r["n_f"] for r in rows if r["capped"]]
    summary["threshold_n_f"] = tail[0]["n_f"] if tail else math.nan
    summary["max_capped_n_f"] = max(capped) if capped else math.nan
    if len(tail) >= 3:
        slope, intercept, r2 = _linear_fit(np.array([r["n_f"] for r in tail]), np.array([r["optimal_C"] for r in tail]))
        summary.update(tail_slope=slope, tail_intercept=intercept, tail_r2=r2)
    else:
        summary.update(tail_slope=math.nan, tail_intercept=math.nan, tail_r2=math.nan)
    return SweepResult(rows, summary)


def sweep_predictability(
    model: CalibratedAirport,
    alpha: float,
    k_grid: Sequence[float],
    C_grid: Sequence[float],
    *,
    C_fixed: Optional[float] = None,
    threads: int = 1,
) -> SweepResult:
    """Profit, punctuality and optimal capacity as delay spread shrinks by ``k``.

    Demand ``beta`` stays at its calibrated value; only the cost curve is
    refitted to the rescaled distributions. ``k = 1`` reuses the model's own
    curve.
    """
    ks = [float(k) for k in k_grid]
    for k in ks:
        if not 0 < k <= 1:
            raise ModelError(f"sigma scale must be in (0, 1], got {k}")
    C_fixed = model.params.C_init if C_fixed is None else float(C_fixed)

    def fit(k: float):
        if k == 1.0:
            return model.curve, ""
        try:
            return build_corrected_curve(model.windows, k, model.params.sqrt_mtow, model.coeffs), ""
        except (ModelError, RuntimeError, ArithmeticError) as exc:
            return None, str(exc)

    fitted = parallel_map(fit, ks, threads)
    good = [c for c, _ in fitted if c is not None]
    ordered = order_family(good) if len(good) >= 2 else good
    by_k = {c.sigma_scale: c for c in ordered}

    def one(item) -> dict:
        k, (curve, err) = item
        row = {"k": k, "profit": math.nan, "mean_delay": math.nan, "traffic": math.nan,
               "optimal_C": math.nan, "optimal_profit": math.nan, "curve_r2": math.nan,
               "curve_ok": False, "error": err}
        if curve is None:
            return row
        pb, perr = _safe_profit(model, C_fixed, alpha, curve=curve)
        flags = by_k.get(k, curve).flags
        row.update(curve_r2=curve.r2, curve_ok=flags.ok)
        if pb is None:
            row["error"] = perr
            return row
        sw = sweep_capacity(model, alpha, C_grid, curve=curve)
        row.update(profit=pb.operating_profit, mean_delay=pb.mean_delay, traffic=pb.traffic,
                   optimal_C=sw.summary["optimum_C"], optimal_profit=sw.summary["optimum_profit"])
        return row

    rows = parallel_map(one, list(zip(ks, fitted)), threads)
    summary = {
        "alpha": alpha,
        "C_fixed": C_fixed,
        "family_ordered": bool(ordered and ordered[0].flags.ordered_in_k),
    }
    return SweepResult(rows, summary)


@dataclass(frozen=True)
class BreakevenResult:
    alpha_analytic: float
    alpha_root: float
    revenue_gain: float
    delta_C: float

    @property
    def rel_diff(self) -> float:
        scale = max(abs(self.alpha_analytic), abs(self.alpha_root))
        return 0.0 if scale == 0 else abs(self.alpha_analytic - self.alpha_root) / scale


def breakeven_alpha(model: CalibratedAirport, delta_C: float) -> BreakevenResult:
    """Marginal capacity cost at which ``delta_C`` more capacity leaves profit unchanged.

    Profit is affine in ``alpha``, so the value follows from the revenue gain
    directly; a root search on the profit difference checks it.
    """
    if not delta_C > 0:
        raise ModelError(f"delta_C must be > 0, got {delta_C}")
    C0 = model.params.C_init
    C1 = C0 + delta_C
    r0 = daily_profit(model, C0, 0.0).revenue
    r1 = daily_profit(model, C1, 0.0).revenue
    gain = r1 - r0
    analytic = gain / (N_WINDOWS * delta_C)

    def diff(alpha: float) -> float:
        return daily_profit(model, C1, alpha).operating_profit - daily_profit(model, C0, alpha).operating_profit

    d0 = diff(0.0)
    if d0 == 0:
        root = 0.0
    else:
        step = 1.0 if d0 > 0 else -1.0
        far = step
        while (diff(far) > 0) == (d0 > 0):
            far *= 2.0
            if abs(far) > 1e300:
                raise EquilibriumError("break-even search diverged")
        lo, hi = sorted((0.0, far))
        root = brentq(diff, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return BreakevenResult(analytic, float(root), gain, delta_C)


def compare_airports(models: Sequence[CalibratedAirport], delta_C: float, *, threads: int = 1) -> SweepResult:
    """Break-even marginal cost of each airport, raw and relative to its daily operating cost."""
    if len(models) < 2:
        raise ModelError("comparison needs at least two airports")

    def one(m: CalibratedAirport) -> dict:
        daily_cost = N_WINDOWS * m.params.c_init
        try:
            be = breakeven_alpha(m, delta_C)
        except (EquilibriumError, ModelError, ArithmeticError) as exc:
            return {"airport": m.name, "alpha_star": math.nan, "alpha_root": math.nan,
                    "daily_cost": daily_cost, "ratio": math.nan, "error": str(exc)}
        ratio = be.alpha_analytic / daily_cost if daily_cost > 0 else math.nan
        return {"airport": m.name, "alpha_star": be.alpha_analytic, "alpha_root": be.alpha_root,
                "daily_cost": daily_cost, "ratio": ratio, "error": ""}

    rows = parallel_map(one, list(models), threads)
    ratios = [r["ratio"] for r in rows if math.isfinite(r["ratio"])]
    summary = {"delta_C": delta_C}
    if ratios:
        summary.update(ratio_min=min(ratios), ratio_max=max(ratios),
                       ratio_spread=(max(ratios) - min(ratios)) / abs(np.mean(ratios)))
    return SweepResult(rows, summary)


def exploratory_profit(
    model: CalibratedAirport,
    alpha: float,
    spend_params: ExploratorySpendParams,
    C_grid: Sequence[float],
    *,
    threads: int = 1,
) -> SweepResult:
    """Capacity sweep with delay-dependent passenger spend, reporting every local maximum.

    The equilibrium is solved as usual; spend per passenger is then read off
    each window's equilibrium mean delay.
    """
    spend = spend_params.spend(model.params.w_init)
    res = sweep_capacity(model, alpha, C_grid, spend=spend, threads=threads)
    xs = [r["C"] for r in res.rows]
    ys = [r["operating_profit"] for r in res.rows]

    def profit(C: float) -> float:
        return daily_profit(model, C, alpha, spend=spend).operating_profit

    maxima = [_refine(profit, xs, ys, run) for run in local_maxima(xs, ys)]
    res.summary.update(
        t_e=spend_params.t_e,
        s_e=spend_params.s_e,
        delta_t_init=spend_params.delta_t_init,
        local_maxima=[{"C": c, "profit": p} for c, p in maxima],
    )
    return res


def daily_delay_cost(model: CalibratedAirport, C: float, *, params=None) -> tuple[float, float]:
    """Traffic-weighted mean delay and airlines' total expected delay cost per day at ``C``."""
    pb = daily_profit(model, C, 0.0, params=params)
    cost = sum(w.traffic * corrected_cost(model.curve, w.mean_delay) for w in pb.per_window)
    return pb.mean_delay, cost


def sensitivity_smoothness(
    model: CalibratedAirport,
    s_grid: Sequence[float],
    *,
    alpha: Optional[float] = None,
    C_grid: Optional[Sequence[float]] = None,
    threads: int = 1,
) -> SweepResult:
    """Recalibrate demand for each smoothness ``s`` and report delay and airline cost.

    Delay and cost are reported at the current capacity and, when ``alpha``
    and ``C_grid`` are given, at the profit-maximising capacity.
    """
    s_values = [float(s) for s in s_grid]
    if any(not (s > 0 and math.isfinite(s)) for s in s_values):
        raise ModelError("smoothness values must be positive and finite")

    def one(s: float) -> dict:
        row = {"s": s, "mean_delay": math.nan, "delay_cost": math.nan, "optimal_C": math.nan,
               "mean_delay_opt": math.nan, "delay_cost_opt": math.nan, "error": ""}
        try:
            m = calibrate_beta(model, s=s)
            row["mean_delay"], row["delay_cost"] = daily_delay_cost(m, m.params.C_init)
            if alpha is not None and C_grid is not None:
                opt = sweep_capacity(m, alpha, C_grid).summary["optimum_C"]
                row["optimal_C"] = opt
                row["mean_delay_opt"], row["delay_cost_opt"] = daily_delay_cost(m, opt)
        except (EquilibriumError, ModelError, RuntimeError, ArithmeticError) as exc:
            row["error"] = str(exc)
        return row

    rows = parallel_map(one, s_values, threads)
    return SweepResult(rows, {"alpha": alpha})
