"""Prescribed-deadline pricing: users pick a departure time, the facility picks the rate.

A user with demand ``x``, impatience ``alpha`` and desired dwell ``xi`` who
picks deadline ``u >= xi`` pays ``P(x, u) + alpha (u - xi)`` and is charged at
the constant rate ``x / u``, so they leave exactly when charging finishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import optimize

from .bounds import QueueParameters
from .distributions import UserPopulation, expect, make_rng
from .errors import ModelError, NumericalError

DEFAULT_MC_SAMPLES = 1_000_000
DEADLINE_XTOL = 1e-8


@dataclass(frozen=True)
class QuadraticPricing:
    """``P(x, u) = x (D (u - omega)^2 + B)`` with a per-user rate cap."""

    surge: float       # D, $/kWh/hr^2
    base: float        # B, $/kWh
    target_dwell: float  # omega, hr
    rate_cap: float    # R_max, kW

    def __post_init__(self):
        if not self.surge > 0:
            raise ModelError(f"surge price must be positive, got {self.surge}")
        if not self.base >= 0:
            raise ModelError(f"base price must be nonnegative, got {self.base}")
        if not self.target_dwell > 0:
            raise ModelError(f"target dwell must be positive, got {self.target_dwell}")
        if not self.rate_cap > 0:
            raise ModelError(f"rate cap must be positive, got {self.rate_cap}")

    def price(self, x, u):
        return x * (self.surge * (np.asarray(u, dtype=float) - self.target_dwell) ** 2 + self.base)

    def with_target_dwell(self, omega: float) -> "QuadraticPricing":
        return replace(self, target_dwell=float(omega))


@dataclass(frozen=True)
class ConvexPricing:
    """Arbitrary pricing function, convex in the deadline for every demand.

    Convexity is checked on a grid at construction: second differences in
    ``u`` must be nonnegative (up to rounding) for every ``x`` in ``x_grid``.
    """

    func: Callable[[float, float], float] = field(repr=False)
    rate_cap: float
    x_grid: tuple[float, ...] = (1.0, 10.0, 100.0)
    u_grid: tuple[float, ...] = tuple(np.linspace(0.05, 24.0, 480))

    def __post_init__(self):
        if not self.rate_cap > 0:
            raise ModelError("rate cap must be positive")
        u = np.asarray(self.u_grid, dtype=float)
        for x in self.x_grid:
            c = np.array([self.func(x, v) for v in u], dtype=float)
            d2 = c[2:] - 2 * c[1:-1] + c[:-2]
            if np.any(d2 < -1e-9 * max(1.0, np.max(np.abs(c)))):
                raise ModelError(f"pricing function is not convex in the deadline (demand {x})")

    def price(self, x, u):
        return self.func(x, u)


def quadratic_price(x: float, u: float, pricing: QuadraticPricing) -> float:
    if not (x > 0 and u > 0):
        raise ModelError("demand and deadline must be positive")
    return float(pricing.price(x, u))


def pd_total_cost(x: float, u: float, alpha: float, xi: float, pricing) -> float:
    """Charging price plus impatience cost of staying beyond the desired dwell."""
    if u < xi:
        raise ModelError(f"deadline {u} is earlier than the desired dwell {xi}")
    return float(pricing.price(x, u)) + alpha * (u - xi)


def _numeric_deadline(x: float, alpha: float, xi: float, pricing) -> float:
    cost = lambda u: float(pricing.price(x, u)) + alpha * (u - xi)
    lo = xi
    hi = xi + 1.0
    if isinstance(pricing, QuadraticPricing):
        hi = max(hi, xi + pricing.target_dwell + alpha / (2 * pricing.surge * x))
    # convexity: once cost(2h) > cost(h) the minimizer lies below 2h
    for _ in range(64):
        if cost(2 * hi) > cost(hi):
            break
        hi *= 2
    else:
        raise NumericalError("could not bracket the optimal deadline")
    res = optimize.minimize_scalar(cost, bounds=(lo, 2 * hi), method="bounded", options={"xatol": DEADLINE_XTOL})
    u = float(res.x)
    # the bounded search never lands exactly on the lower end
    return xi if cost(xi) <= cost(u) else u


def optimal_deadline(x, alpha, xi, pricing, numeric: bool = False):
    """Cost-minimizing deadline ``u >= xi``.

    Quadratic pricing uses the closed form ``max(xi, omega - alpha / (2 D x))``
    (vectorized); any other convex pricing, or ``numeric=True``, uses a
    bracketed bounded scalar minimization per user.
    """
    if isinstance(pricing, QuadraticPricing) and not numeric:
        x = np.asarray(x, dtype=float)
        u = np.maximum(xi, pricing.target_dwell - np.asarray(alpha, dtype=float) / (2.0 * pricing.surge * x))
        return float(u) if np.ndim(u) == 0 else u
    xs, als, xis = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, alpha, xi)))
    u = np.array([_numeric_deadline(a, b, c, pricing) for a, b, c in zip(xs.ravel(), als.ravel(), xis.ravel())])
    return float(u[0]) if xs.ndim == 0 else u.reshape(xs.shape)


def min_surge_price(target_dwell: float, rate_cap: float, x_min: float, x_max: float, impatience: float) -> float:
    """Lower bound on the surge price from the demand support and an impatience level.

    Returns ``[max_x a R / (2 omega x R - 2 x^2)]_+`` over ``x`` in
    ``[x_min, x_max]``.  The denominator is concave in ``x`` so the maximum
    sits at an endpoint.  With ``impatience = alpha_max`` this guarantees
    ``x / u <= R`` for every user; with ``alpha_min`` it does not (see
    :func:`safe_surge_price`).
    """
    if not target_dwell > x_max / rate_cap:
        raise ModelError(
            f"target dwell {target_dwell} hr is infeasible: it must exceed x_max / R_max = {x_max / rate_cap:.6g} hr"
        )
    if x_min <= 0 or x_min > x_max:
        raise ModelError("need 0 < x_min <= x_max")
    vals = [impatience * rate_cap / (2 * target_dwell * x * rate_cap - 2 * x * x) for x in (x_min, x_max)]
    return max(0.0, max(vals))


def safe_surge_price(pricing_or_omega, rate_cap: float, population: UserPopulation) -> float:
    """Surge-price bound evaluated at the largest impatience, which does enforce the rate cap."""
    omega = pricing_or_omega.target_dwell if isinstance(pricing_or_omega, QuadraticPricing) else float(pricing_or_omega)
    d = population.demand
    return min_surge_price(omega, rate_cap, d.lower, d.upper, population.impatience.upper)


@dataclass(frozen=True)
class RateCapReport:
    samples: int
    max_rate: float
    rate_cap: float
    violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def validate_rate_cap(pricing, population: UserPopulation, seed=0, n: int = DEFAULT_MC_SAMPLES) -> RateCapReport:
    """Sample users and check every chosen rate against the cap.  Violations are reported, not raised."""
    if n < 1:
        raise ModelError("need at least one sample")
    x, a, xi = population.sample_users(make_rng(seed), n)
    with np.errstate(divide="ignore"):
        r = x / optimal_deadline(x, a, xi, pricing)
    # a relative slack of 1e-12 absorbs rounding in x / u at the cap itself
    bad = int(np.count_nonzero(r > pricing.rate_cap * (1 + 1e-12)))
    return RateCapReport(n, float(np.max(r)), float(pricing.rate_cap), bad)


@dataclass(frozen=True)
class PdMoments:
    mean_deadline: float   # E[u], also the mean occupancy and charging time
    mean_rate: float
    mean_rate_sq: float
    method: str
    stderr: dict = field(default_factory=dict)
    analytic_mean_deadline: float | None = None

    def __post_init__(self):
        if not self.mean_deadline > 0:
            raise ModelError("mean deadline must be positive")
        if self.mean_rate_sq < self.mean_rate**2 * (1 - 1e-12):
            raise ModelError("E[r^2] below E[r]^2")

    @property
    def mean_dwell(self) -> float:
        return self.mean_deadline

    @property
    def mean_active(self) -> float:
        return self.mean_deadline

    def queue_parameters(self, arrival_rate: float, rate_cap: float) -> QueueParameters:
        d = self.mean_deadline
        return QueueParameters(arrival_rate, d, d, self.mean_rate, self.mean_rate_sq, rate_cap)


def dwell_never_binds(pricing: QuadraticPricing, population: UserPopulation) -> bool:
    d = population.demand
    return population.dwell.upper <= pricing.target_dwell - population.impatience.upper / (2 * pricing.surge * d.lower)


def pd_moments(
    pricing,
    population: UserPopulation,
    samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    max_stderr: float | None = None,
) -> PdMoments:
    """Monte-Carlo moments of the deadline and rate.

    For quadratic pricing where the dwell never binds, ``E[u]`` also has the
    closed form ``omega - E[alpha] E[1/x] / (2 D)``, returned alongside.
    """
    if samples < 2:
        raise ModelError("need at least 2 Monte-Carlo samples")
    x, a, xi = population.sample_users(make_rng(seed), samples)
    u = optimal_deadline(x, a, xi, pricing)
    if np.any(u <= 0):
        raise ModelError("some users choose a zero deadline; the rate would be unbounded")
    r = x / u
    sq = math.sqrt(samples)
    se = {
        "mean_deadline": float(u.std(ddof=1) / sq),
        "mean_rate": float(r.std(ddof=1) / sq),
        "mean_rate_sq": float((r * r).std(ddof=1) / sq),
    }
    if max_stderr is not None and se["mean_deadline"] > max_stderr:
        raise NumericalError(f"Monte-Carlo standard error {se['mean_deadline']:.3g} exceeds cap {max_stderr:.3g}")
    analytic = None
    if isinstance(pricing, QuadraticPricing) and dwell_never_binds(pricing, population):
        analytic = pricing.target_dwell - population.impatience.mean * expect(population.demand, lambda v: 1.0 / v) / (2 * pricing.surge)
    return PdMoments(float(u.mean()), float(r.mean()), float((r * r).mean()), "monte_carlo", se, analytic)


@dataclass(frozen=True)
class PdModel:
    """Adapter used by the simulator and the CLI."""

    pricing: QuadraticPricing | ConvexPricing
    tag: str = "pd"

    @property
    def rate_cap(self) -> float:
        return self.pricing.rate_cap

    def assign(self, x, alpha, xi):
        u = optimal_deadline(x, alpha, xi, self.pricing)
        return x / u, u, u

    def max_service_time(self, population: UserPopulation) -> float:
        if isinstance(self.pricing, QuadraticPricing):
            return self.pricing.target_dwell + population.dwell.upper
        # no closed form: twice the largest deadline among a fixed sample
        x, a, xi = population.sample_users(make_rng(0), 2000)
        return 2.0 * float(np.max(optimal_deadline(x, a, xi, self.pricing)))

    def moments(self, population: UserPopulation, samples: int = DEFAULT_MC_SAMPLES, seed: int = 0, max_stderr=None) -> PdMoments:
        return pd_moments(self.pricing, population, samples=samples, seed=seed, max_stderr=max_stderr)
