"""Expected cost of delay under shifted log-normal delay distributions.

A window's delays are modelled as ``theta + exp(mu + sigma * Z)`` with ``Z``
standard normal. The expected airline cost over that distribution is a
smooth function of the window's mean delay once fitted with
:func:`build_corrected_curve`, which is what the equilibrium solver consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize_scalar
from scipy.special import expit, roots_hermite, roots_legendre

from .model import PAPER_COEFFS, CostCoefficients, ModelError, raw_cost_of_delay

MIN_SAMPLES = 30
QUAD_RTOL = 1e-8
QUAD_MAX_ORDER = 512
# Standard-normal mass beyond |z| > 12 is below 1e-32.
_Z_CUT = 12.0


class FitError(ModelError):
    """A distribution or curve fit could not be carried out."""


class QuadratureError(RuntimeError):
    """Order doubling hit the cap before the integral settled."""

    def __init__(self, message: str, orders: Sequence[int], values: Sequence[float]):
        super().__init__(f"{message}; orders={list(orders)} values={list(values)}")
        self.orders = tuple(orders)
        self.values = tuple(values)


@dataclass(frozen=True)
class ShiftedLogNormal:
    """Three-parameter log-normal: support ``(theta, inf)``."""

    mu: float
    sigma: float
    theta: float = 0.0
    mean_warning: bool = False

    def __post_init__(self) -> None:
        for name in ("mu", "sigma", "theta"):
            if not math.isfinite(getattr(self, name)):
                raise ModelError(f"{name} must be finite")
        if self.sigma <= 0:
            raise ModelError(f"sigma must be > 0, got {self.sigma}")
        if self.mu + 0.5 * self.sigma**2 > 709.0 or not math.isfinite(self.mean):
            raise ModelError("distribution mean overflows")

    @classmethod
    def from_moments(cls, mean: float, sd: float, theta: float = 0.0) -> "ShiftedLogNormal":
        """Distribution with the given mean and standard deviation above ``theta``."""
        excess = mean - theta
        if excess <= 0 or sd <= 0:
            raise ModelError(f"need mean > theta and sd > 0, got mean={mean} theta={theta} sd={sd}")
        sigma2 = math.log1p((sd / excess) ** 2)
        return cls(mu=math.log(excess) - 0.5 * sigma2, sigma=math.sqrt(sigma2), theta=theta)

    @property
    def mean(self) -> float:
        return self.theta + math.exp(self.mu + 0.5 * self.sigma**2)

    @property
    def sd(self) -> float:
        return math.sqrt(math.expm1(self.sigma**2)) * math.exp(self.mu + 0.5 * self.sigma**2)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.theta + np.exp(self.mu + self.sigma * rng.standard_normal(size))

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma, "theta": self.theta, "mean_warning": self.mean_warning}

    @classmethod
    def from_dict(cls, data: dict) -> "ShiftedLogNormal":
        return cls(data["mu"], data["sigma"], data["theta"], bool(data.get("mean_warning", False)))


def _profile_loglik(x: np.ndarray, theta: float) -> float:
    logs = np.log(x - theta)
    return float(-logs.sum() - x.size * math.log(logs.std()))


def _profile_shift(x: np.ndarray, lo: float, spread: float) -> Optional[float]:
    """Shift maximising the profile likelihood, or None without an interior maximum."""
    gaps = np.linspace(math.log(1e-6 * spread), math.log(10.0 * spread), 241)
    values = np.array([_profile_loglik(x, lo - math.exp(g)) for g in gaps])
    i = int(np.argmax(values))
    if i == 0 or i == gaps.size - 1:
        return None
    res = minimize_scalar(
        lambda g: -_profile_loglik(x, lo - math.exp(g)),
        bounds=(gaps[i - 1], gaps[i + 1]),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return lo - math.exp(float(res.x))


def fit_shifted_lognormal(delays: Iterable[float], shift: str = "profile") -> ShiftedLogNormal:
    """Fit a shifted log-normal to observed delays (minutes).

    ``mu`` and ``sigma`` are the maximum likelihood estimates of the
    log-excess over the shift. With ``shift="profile"`` the shift maximises
    the profile likelihood below the sample minimum, falling back to the
    fixed rule when there is no interior maximum. ``shift="rule"`` always
    places it at ``min - max(1, 0.01 * range)``.

    ``mean_warning`` is set when the fitted mean misses the sample mean by
    more than 5% of the larger of |sample mean| and the sample standard
    deviation.
    """
    if shift not in ("profile", "rule"):
        raise ModelError(f"unknown shift method {shift!r}")
    x = np.asarray(delays if isinstance(delays, np.ndarray) else list(delays), dtype=float)
    if x.size < MIN_SAMPLES:
        raise FitError(f"insufficient samples: {x.size} < {MIN_SAMPLES}")
    if not np.all(np.isfinite(x)):
        raise FitError("delays contain non-finite values")
    lo, hi = float(x.min()), float(x.max())
    spread = hi - lo
    if spread <= 0:
        raise FitError("degenerate distribution: all delays are equal")
    theta = lo - max(1.0, 0.01 * spread)
    if shift == "profile":
        best = _profile_shift(x, lo, spread)
        if best is not None:
            theta = best
    logs = np.log(x - theta)
    mu = float(logs.mean())
    sigma = float(logs.std())
    dist = ShiftedLogNormal(mu, sigma, theta)
    sample_mean = float(x.mean())
    scale = max(abs(sample_mean), float(x.std()))
    if abs(dist.mean - sample_mean) > 0.05 * scale:
        dist = ShiftedLogNormal(mu, sigma, theta, mean_warning=True)
    return dist


def scale_sigma(dist: ShiftedLogNormal, k: float) -> ShiftedLogNormal:
    """Shrink the standard deviation by ``k`` keeping the mean and shift fixed."""
    if not (0.0 < k <= 1.0):
        raise ModelError(f"sigma scale must be in (0, 1], got {k}")
    if k == 1.0:
        return dist
    sigma2 = math.log1p(k * k * math.expm1(dist.sigma**2))
    mu = dist.mu + 0.5 * dist.sigma**2 - 0.5 * sigma2
    return ShiftedLogNormal(mu, math.sqrt(sigma2), dist.theta, dist.mean_warning)


@lru_cache(maxsize=None)
def _hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_hermite(n)
    # weights against the standard normal density
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


@lru_cache(maxsize=None)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return roots_legendre(n)


def _poly_cost(delta: np.ndarray, lin: float, quad: float) -> np.ndarray:
    return lin * delta + quad * delta * delta


def _quadrature_terms(dist: ShiftedLogNormal, lin: float, quad: float, n: int) -> tuple[float, float]:
    """Full-line expectation of the polynomial branch and its mass below zero delay."""
    z, wz = _hermite(n)
    full = float(np.dot(wz, _poly_cost(dist.theta + np.exp(dist.mu + dist.sigma * z), lin, quad)))
    below = 0.0
    if dist.theta < 0:
        z0 = (math.log(-dist.theta) - dist.mu) / dist.sigma
        upper = min(z0, _Z_CUT)
        if upper > -_Z_CUT:
            t, wt = _legendre(n)
            half = 0.5 * (upper + _Z_CUT)
            zz = -_Z_CUT + half * (t + 1.0)
            delta = np.minimum(dist.theta + np.exp(dist.mu + dist.sigma * zz), 0.0)
            dens = np.exp(-0.5 * zz * zz) / math.sqrt(2.0 * math.pi)
            below = half * float(np.dot(wt, _poly_cost(delta, lin, quad) * dens))
    return full, below


def expected_cost(
    dist: ShiftedLogNormal,
    sqrt_mtow: float,
    coeffs: CostCoefficients = PAPER_COEFFS,
    *,
    clamp: bool = True,
) -> float:
    """Expected airline cost of delay for one window, euros per flight.

    The cost is zero for early departures, so only the positive part of the
    distribution contributes. The polynomial branch is integrated over the
    whole line with Gauss-Hermite after substituting ``z`` for the standard
    normal; the part of that integral lying below zero delay is a finite
    smooth piece and is removed with Gauss-Legendre. Orders double from 16
    until two successive values agree to 1e-8 relative.

    With ``clamp`` the result is floored at zero, which only matters for
    coefficient sets that make the polynomial negative.
    """
    lin, quad = coeffs.effective(sqrt_mtow)
    orders, values = [], []
    n = 16
    prev: Optional[float] = None
    while n <= QUAD_MAX_ORDER:
        full, below = _quadrature_terms(dist, lin, quad, n)
        value = full - below
        orders.append(n)
        values.append(value)
        if prev is not None:
            delta = abs(value - prev)
            scale = abs(full) + abs(below)
            if delta <= QUAD_RTOL * abs(value) or delta <= 1e-13 * scale:
                return max(value, 0.0) if clamp else value
        prev = value
        n *= 2
    raise QuadratureError("expected-cost quadrature did not converge", orders, values)


@dataclass(frozen=True)
class CurveFlags:
    """Shape checks on a fitted corrected-cost curve over its evaluation range."""

    nonnegative: bool
    monotone: bool
    above_raw: bool
    ordered_in_k: Optional[bool] = None

    @property
    def ok(self) -> bool:
        return self.nonnegative and self.monotone and self.above_raw and self.ordered_in_k is not False

    def warnings(self) -> list[str]:
        out = []
        if not self.nonnegative:
            out.append("corrected cost is negative somewhere on the evaluation range")
        if not self.monotone:
            out.append("corrected cost decreases with mean delay somewhere on the evaluation range")
        if not self.above_raw:
            out.append("corrected cost falls below the uncorrected cost")
        if self.ordered_in_k is False:
            out.append("curve family is not ordered by sigma scale")
        return out


@dataclass(frozen=True)
class CorrectedCostCurve:
    """Smooth expected cost as a function of mean delay.

    ``f(x) = 1/2 (1 - tanh(x/s')) (c + d e^{f x}) + 1/2 (1 + tanh(x/s')) c_raw(x)``
    where ``c_raw`` is the uncorrected cost of a flight delayed by exactly ``x``.
    """

    c: float
    d: float
    f: float
    s_prime: float
    coeffs: CostCoefficients
    sqrt_mtow: float
    sigma_scale: float = 1.0
    r2: float = 1.0
    residual_norm: float = 0.0
    x_range: tuple[float, float] = (0.0, 0.0)
    flags: CurveFlags = field(default_factory=lambda: CurveFlags(True, True, True))
    points: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if not self.s_prime > 0:
            raise ModelError(f"s_prime must be > 0, got {self.s_prime}")
        if not self.f > 0:
            raise ModelError(f"f must be > 0, got {self.f}")

    @property
    def validated(self) -> bool:
        return self.flags.ok

    def __call__(self, x):
        return corrected_cost(self, x)

    def eval_range(self) -> tuple[float, float]:
        lo, hi = self.x_range
        span = max(hi - lo, 1.0)
        return lo - span, hi + span

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "d": self.d,
            "f": self.f,
            "s_prime": self.s_prime,
            "coeffs": [self.coeffs.a1, self.coeffs.a2, self.coeffs.b1, self.coeffs.b2],
            "sqrt_mtow": self.sqrt_mtow,
            "sigma_scale": self.sigma_scale,
            "r2": self.r2,
            "residual_norm": self.residual_norm,
            "x_range": list(self.x_range),
            "flags": {
                "nonnegative": self.flags.nonnegative,
                "monotone": self.flags.monotone,
                "above_raw": self.flags.above_raw,
                "ordered_in_k": self.flags.ordered_in_k,
            },
            "points": [list(p) for p in self.points],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorrectedCostCurve":
        return cls(
            c=data["c"],
            d=data["d"],
            f=data["f"],
            s_prime=data["s_prime"],
            coeffs=CostCoefficients(*data["coeffs"]),
            sqrt_mtow=data["sqrt_mtow"],
            sigma_scale=data["sigma_scale"],
            r2=data["r2"],
            residual_norm=data["residual_norm"],
            x_range=tuple(data["x_range"]),
            flags=CurveFlags(**data["flags"]),
            points=tuple(tuple(p) for p in data["points"]),
        )


def zero_cost_curve() -> CorrectedCostCurve:
    """A curve that is identically zero; airlines then always operate."""
    return CorrectedCostCurve(
        c=0.0, d=0.0, f=1.0, s_prime=1.0, coeffs=CostCoefficients(0.0, 0.0, 0.0, 0.0), sqrt_mtow=0.0
    )


def _raw_cost_array(x: np.ndarray, lin: float, quad: float) -> np.ndarray:
    pos = np.maximum(x, 0.0)
    return lin * pos + quad * pos * pos


def _blend(x: np.ndarray, c: float, d: float, f: float, s_prime: float, lin: float, quad: float) -> np.ndarray:
    t = 2.0 * x / s_prime
    low_weight = expit(-t)
    # d e^{f x} / (1 + e^{t}) evaluated in log space so neither factor overflows
    with np.errstate(over="ignore"):
        low = c * low_weight + d * np.exp(f * x - np.logaddexp(0.0, t))
    return low + expit(t) * _raw_cost_array(x, lin, quad)


def _blend_scalar(x: float, c: float, d: float, f: float, s_prime: float, lin: float, quad: float) -> float:
    t = 2.0 * x / s_prime
    e = math.exp(-abs(t))
    softplus = max(t, 0.0) + math.log1p(e)
    if t >= 0:
        high, low_weight = 1.0 / (1.0 + e), e / (1.0 + e)
    else:
        high, low_weight = e / (1.0 + e), 1.0 / (1.0 + e)
    expo = f * x - softplus
    low = c * low_weight + (d * math.exp(expo) if expo < 709.0 else math.inf)
    pos = x if x > 0.0 else 0.0
    return low + high * (lin * pos + quad * pos * pos)


def corrected_cost(curve: CorrectedCostCurve, mean_delay):
    """Evaluate a corrected-cost curve at one or many mean delays."""
    lin, quad = curve.coeffs.effective(curve.sqrt_mtow)
    if isinstance(mean_delay, (float, int)):
        return _blend_scalar(float(mean_delay), curve.c, curve.d, curve.f, curve.s_prime, lin, quad)
    x = np.asarray(mean_delay, dtype=float)
    out = _blend(x, curve.c, curve.d, curve.f, curve.s_prime, lin, quad)
    if out.ndim == 0:
        return float(out)
    return out


def _shape_flags(params, lin: float, quad: float, lo: float, hi: float) -> CurveFlags:
    grid = np.linspace(lo, hi, 801)
    values = _blend(grid, *params, lin, quad)
    raw = _raw_cost_array(grid, lin, quad)
    scale = max(float(np.max(np.abs(values))), 1e-12)
    slack = 1e-9 * scale
    return CurveFlags(
        nonnegative=bool(np.all(values >= -slack)),
        monotone=bool(np.all(np.diff(values) >= -slack)),
        above_raw=bool(np.all(values - raw >= -slack)),
    )


def fit_blend(
    x: Sequence[float],
    y: Sequence[float],
    coeffs: CostCoefficients,
    sqrt_mtow: float,
) -> tuple[tuple[float, float, float, float], float, float]:
    """Least-squares fit of ``(c, d, f, s')`` to expected-cost points.

    Multi-start bounded trust-region least squares. Eight starts scale the
    base guess for ``d``, ``f`` and ``s'`` by 1/2 and 2; the lowest residual
    wins, ties going to the smaller parameter norm. ``f`` is kept below
    ``2/s'`` so the correction dies off at large mean delay.

    Returns the parameters, R^2 and the residual norm.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        raise FitError(f"need at least 4 points to fit the corrected cost, got {x.size}")
    lin, quad = coeffs.effective(sqrt_mtow)
    span = float(x.max() - x.min())
    if not span > 0:
        raise FitError("mean delays do not span a range")
    order = np.argsort(x, kind="stable")
    c0 = max(float(y[order[0]]), 0.0)
    base = (c0, max(c0, 1e-6), 1.0 / span, 0.5 * span)

    # parameters: c, d, s', r with f = 2 r / s'
    def unpack(p):
        c, d, s_prime, r = p
        return c, d, 2.0 * r / s_prime, s_prime

    def residuals(p):
        return _blend(x, *unpack(p), lin, quad) - y

    lower = [0.0, 0.0, 1e-3 * span, 1e-6]
    upper = [np.inf, np.inf, 1e3 * span, 0.999]
    best = None
    for fd in (0.5, 2.0):
        for ff in (0.5, 2.0):
            for fs in (0.5, 2.0):
                s_prime = base[3] * fs
                r = min(max(base[2] * ff * s_prime / 2.0, 2e-6), 0.99)
                p0 = np.array([base[0], base[1] * fd, s_prime, r])
                sol = least_squares(residuals, p0, bounds=(lower, upper), method="trf", x_scale="jac",
                                    xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=4000)
                cost = float(np.dot(sol.fun, sol.fun))
                norm = float(np.linalg.norm(sol.x))
                key = (cost, norm)
                if best is None or key < best[0]:
                    best = (key, sol.x)
    params = unpack(best[1])
    res = _blend(x, *params, lin, quad) - y
    ss_res = float(np.dot(res, res))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    if not all(math.isfinite(v) for v in params):
        raise FitError("corrected-cost fit diverged")
    return params, r2, math.sqrt(ss_res)


def expected_cost_points(windows, sigma_scale: float, sqrt_mtow: float, coeffs: CostCoefficients):
    """(mean delay, expected cost) for each window at the given sigma scale."""
    pts = []
    for w in windows:
        if w.delay_dist is None:
            raise FitError(f"window {w.hour} has no delay distribution")
        dist = scale_sigma(w.delay_dist, sigma_scale)
        pts.append((dist.mean, expected_cost(dist, sqrt_mtow, coeffs)))
    return pts


def build_corrected_curve(
    windows,
    sigma_scale: float,
    sqrt_mtow: float,
    coeffs: CostCoefficients = PAPER_COEFFS,
) -> CorrectedCostCurve:
    """Fit the corrected-cost curve to the windows' expected costs at one sigma scale.

    Shape problems (negativity, non-monotonicity, dipping below the raw
    cost) are recorded on ``curve.flags`` rather than raised.
    """
    pts = expected_cost_points(windows, sigma_scale, sqrt_mtow, coeffs)
    return curve_from_points(pts, sigma_scale, sqrt_mtow, coeffs)


def curve_from_points(pts, sigma_scale: float, sqrt_mtow: float, coeffs: CostCoefficients) -> CorrectedCostCurve:
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    params, r2, resid = fit_blend(x, y, coeffs, sqrt_mtow)
    lin, quad = coeffs.effective(sqrt_mtow)
    lo, hi = float(x.min()), float(x.max())
    span = max(hi - lo, 1.0)
    flags = _shape_flags(params, lin, quad, lo - span, hi + span)
    c, d, f, s_prime = params
    return CorrectedCostCurve(
        c=c,
        d=d,
        f=f,
        s_prime=s_prime,
        coeffs=coeffs,
        sqrt_mtow=sqrt_mtow,
        sigma_scale=sigma_scale,
        r2=r2,
        residual_norm=resid,
        x_range=(lo, hi),
        flags=flags,
        points=tuple((float(a), float(b)) for a, b in pts),
    )


def order_family(curves: Sequence[CorrectedCostCurve]) -> list[CorrectedCostCurve]:
    """Check that curves at smaller sigma scale lie pointwise at or below larger ones.

    Returns the curves sorted by sigma scale with ``flags.ordered_in_k`` set.
    """
    curves = sorted(curves, key=lambda c: c.sigma_scale)
    if len(curves) < 2:
        return curves
    lo = min(c.eval_range()[0] for c in curves)
    hi = max(c.eval_range()[1] for c in curves)
    grid = np.linspace(lo, hi, 801)
    values = [corrected_cost(c, grid) for c in curves]
    ordered = True
    for a, b in zip(values, values[1:]):
        slack = 1e-6 * max(float(np.max(np.abs(b))), 1e-12)
        if np.any(a - b > slack):
            ordered = False
    out = []
    for c in curves:
        flags = CurveFlags(c.flags.nonnegative, c.flags.monotone, c.flags.above_raw, ordered)
        out.append(_replace_flags(c, flags))
    return out


def _replace_flags(curve: CorrectedCostCurve, flags: CurveFlags) -> CorrectedCostCurve:
    from dataclasses import replace

    return replace(curve, flags=flags)


def curve_diagnostics(curve: CorrectedCostCurve) -> list[dict]:
    """Rows for the per-fit diagnostic CSV."""
    rows = []
    for x, y in curve.points:
        rows.append(
            {
                "mean_delay_min": x,
                "expected_cost_eur": y,
                "fitted_cost_eur": corrected_cost(curve, x),
                "raw_cost_eur": raw_cost_of_delay(x, curve.sqrt_mtow, curve.coeffs),
            }
        )
    return rows
