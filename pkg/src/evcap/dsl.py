"""Defined-service-level pricing: discrete charging rates at increasing prices.

A user with demand ``x``, impatience ``alpha`` and desired dwell ``xi`` who
picks level ``l`` pays::

    x V_l + alpha [x / R_l - xi]_+ + F [xi - x / R_l]_+

and rational users pick the cheapest level.  Levels are numbered from 1 in
the public API (level 1 is the slowest and cheapest).

The choice distribution is computed by conditioning on the desired rate
``rho = x / xi``: given ``rho``, the choice depends only on which impatience
interval ``alpha`` falls into.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import QueueParameters
from .distributions import QUAD_EPSREL, BoundedDistribution, UserPopulation, expect, make_rng
from .errors import ModelError, NumericalError

DEFAULT_MC_SAMPLES = 1_000_000


@dataclass(frozen=True)
class ServiceLevel:
    rate: float   # kW
    price: float  # $/kWh

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ModelError(f"service-level rate must be positive, got {self.rate}")
        if not (self.price > 0 and math.isfinite(self.price)):
            raise ModelError(f"service-level price must be positive, got {self.price}")


@dataclass(frozen=True)
class DslFacility:
    levels: tuple[ServiceLevel, ...]
    parking_fee: float = 0.0
    rates: np.ndarray = field(init=False, repr=False, compare=False)
    prices: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ModelError("facility needs at least one service level")
        if not (self.parking_fee >= 0 and math.isfinite(self.parking_fee)):
            raise ModelError(f"parking fee must be nonnegative, got {self.parking_fee}")
        rates = np.array([lv.rate for lv in levels], dtype=float)
        prices = np.array([lv.price for lv in levels], dtype=float)
        if np.any(np.diff(prices) <= 0):
            raise ModelError(
                "rate/price ordering violated: prices must be distinct and strictly increasing "
                f"(V1 < V2 < ... < VL), got {prices.tolist()}"
            )
        if np.any(np.diff(rates) <= 0):
            raise ModelError(
                "rate/price ordering violated: a higher price must buy a strictly higher, distinct "
                f"charging rate (R1 < R2 < ... < RL), got {rates.tolist()}"
            )
        rates.flags.writeable = False
        prices.flags.writeable = False
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "prices", prices)

    @classmethod
    def from_menu(cls, rates: Sequence[float], prices: Sequence[float], parking_fee: float = 0.0) -> "DslFacility":
        if len(rates) != len(prices):
            raise ModelError("rates and prices must have the same length")
        return cls(tuple(ServiceLevel(float(r), float(p)) for r, p in zip(rates, prices)), float(parking_fee))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def rate_cap(self) -> float:
        return float(self.rates[-1])

    def with_rates(self, rates: Sequence[float]) -> "DslFacility":
        return DslFacility.from_menu(rates, self.prices, self.parking_fee)

    def switch_threshold(self, i: int, k: int) -> float:
        """Impatience at which levels ``i`` and ``k`` cost the same when both finish after the dwell.

        Users above the threshold prefer the faster of the two.  Levels are 1-based.
        """
        a, b = sorted((i, k))
        ra, rb = self.rates[a - 1], self.rates[b - 1]
        return float((self.prices[b - 1] - self.prices[a - 1]) / (1.0 / ra - 1.0 / rb))


def _check_level(level: int, facility: DslFacility) -> int:
    if not 1 <= level <= facility.n_levels:
        raise ModelError(f"level index must lie in 1..{facility.n_levels}, got {level}")
    return level - 1


def dsl_cost(level: int, x, alpha, xi, facility: DslFacility):
    """Total cost of service level ``level`` (1-based)."""
    i = _check_level(level, facility)
    t = np.asarray(x, dtype=float) / facility.rates[i]
    out = (
        x * facility.prices[i]
        + alpha * np.maximum(t - xi, 0.0)
        + facility.parking_fee * np.maximum(xi - t, 0.0)
    )
    return float(out) if np.ndim(out) == 0 else out


def dsl_fp_cost(level: int, x, alpha, facility: DslFacility):
    """Cost without parking: energy plus impatience over the whole charging time."""
    i = _check_level(level, facility)
    out = x * facility.prices[i] + alpha * (np.asarray(x, dtype=float) / facility.rates[i])
    return float(out) if np.ndim(out) == 0 else out


def level_costs(x, alpha, xi, facility: DslFacility) -> np.ndarray:
    """Costs of all levels, shape ``(L,) + broadcast(x, alpha, xi).shape``."""
    x, alpha, xi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, alpha, xi)))
    shape = (-1,) + (1,) * x.ndim
    t = x[None] / facility.rates.reshape(shape)
    return (
        x[None] * facility.prices.reshape(shape)
        + alpha[None] * np.maximum(t - xi[None], 0.0)
        + facility.parking_fee * np.maximum(xi[None] - t, 0.0)
    )


def select_level(x, alpha, xi, facility: DslFacility):
    """Cost-minimizing level (1-based); ties go to the lowest level."""
    lv = np.argmin(level_costs(x, alpha, xi, facility), axis=0) + 1
    return int(lv) if np.ndim(lv) == 0 else lv


def _interval_probs(impatience: BoundedDistribution, lo, hi) -> np.ndarray:
    """``[P(lo < alpha <= hi)]_+`` elementwise.

    Thresholds go in unclamped: clamping to the support changes nothing for a
    continuous law and would drop the mass of a degenerate one.
    """
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    p = np.asarray(impatience.cdf(hi)) - np.asarray(impatience.cdf(lo))
    return np.where(lo < hi, np.maximum(p, 0.0), 0.0)


def _fp_thresholds(facility: DslFacility, k: int) -> tuple[float, float]:
    lo = max((facility.switch_threshold(i, k) for i in range(1, k)), default=-math.inf)
    hi = min((facility.switch_threshold(k, i) for i in range(k + 1, facility.n_levels + 1)), default=math.inf)
    return lo, hi


def _ratio_bound(num: np.ndarray, den: np.ndarray, upper: bool) -> np.ndarray:
    """``num / den`` as a bound on alpha, with ``den == 0`` resolved.

    ``den == 0`` happens only when rho equals a level rate; the constraint
    then holds for every alpha or for none, depending on the sign of ``num``.
    """
    ok = den != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        q = num / np.where(ok, den, 1.0)
    sure, never = (math.inf, -math.inf) if upper else (-math.inf, math.inf)
    return np.where(ok, q, np.where(num >= 0, sure, never))


def conditional_choice_probabilities(rho, facility: DslFacility, impatience: BoundedDistribution) -> np.ndarray:
    """``P(level k is cheapest | rho)`` for every level.

    ``rho`` is the desired rate ``x / xi`` (``inf`` when ``xi == 0``), scalar
    or array; the result has shape ``(L,)`` or ``(L, n)``.  The rho axis is
    split at the level rates with half-open pieces ``[R_m, R_{m+1})``.
    """
    rho_arr = np.atleast_1d(np.asarray(rho, dtype=float))
    if np.any(~(rho_arr > 0)):
        raise ModelError("desired rate must be positive or +inf")
    R, V, F = facility.rates, facility.prices, facility.parking_fee
    L = facility.n_levels
    out = np.zeros((L, rho_arr.size))
    piece = np.searchsorted(R, rho_arr, side="right")  # 0: below R_1, L: at or above R_L
    out[0, piece == 0] = 1.0
    top = piece == L
    if top.any():
        fp = [_interval_probs(impatience, *_fp_thresholds(facility, k)) for k in range(1, L + 1)]
        out[:, top] = np.array(fp, dtype=float)[:, None]
    for m in range(1, L):
        sel = piece == m
        if not sel.any():
            continue
        inv_rho = 1.0 / rho_arr[sel]
        # levels 1..m finish after the dwell (impatience cost), levels above m
        # finish before it (parking fee); only level m+1 of the latter can win
        for k in range(1, m + 1):
            lo = max((facility.switch_threshold(i, k) for i in range(1, k)), default=-math.inf)
            hi = np.full(inv_rho.shape, min((facility.switch_threshold(k, i) for i in range(k + 1, m + 1)), default=math.inf))
            for i in range(m + 1, L + 1):
                num = F * (inv_rho - 1.0 / R[i - 1]) - (V[k - 1] - V[i - 1])
                hi = np.minimum(hi, _ratio_bound(num, 1.0 / R[k - 1] - inv_rho, upper=True))
            out[k - 1, sel] = _interval_probs(impatience, lo, hi)
        k = m + 1
        lo = np.full(inv_rho.shape, -math.inf)
        for i in range(1, k):
            num = F * (1.0 / R[k - 1] - inv_rho) - (V[k - 1] - V[i - 1])
            lo = np.maximum(lo, _ratio_bound(num, inv_rho - 1.0 / R[i - 1], upper=False))
        out[k - 1, sel] = _interval_probs(impatience, lo, math.inf)
    return out[:, 0] if np.ndim(rho) == 0 else out


def choice_probability_given_rho(k: int, rho: float, facility: DslFacility, impatience: BoundedDistribution) -> float:
    i = _check_level(k, facility)
    return float(conditional_choice_probabilities(rho, facility, impatience)[i])


@dataclass(frozen=True)
class RatePmf:
    rates: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ModelError(f"probabilities outside [0, 1]: {p}")
        if abs(p.sum() - 1.0) > 1e-4:
            raise ModelError(f"rate probabilities sum to {p.sum():.8f}, not 1")
        object.__setattr__(self, "rates", np.asarray(self.rates, dtype=float))
        object.__setattr__(self, "probs", np.clip(p, 0.0, 1.0))

    @property
    def mean(self) -> float:
        return float(self.rates @ self.probs)

    @property
    def second_moment(self) -> float:
        return float(self.rates**2 @ self.probs)

    @property
    def mean_inverse(self) -> float:
        return float((1.0 / self.rates) @ self.probs)

    def as_dict(self) -> dict[float, float]:
        return {float(r): float(p) for r, p in zip(self.rates, self.probs)}


def rate_pmf_free_parking(facility: DslFacility, impatience: BoundedDistribution) -> RatePmf:
    """Choice distribution when nobody wants to stay beyond charging."""
    probs = []
    for k in range(1, facility.n_levels + 1):
        probs.append(float(_interval_probs(impatience, *_fp_thresholds(facility, k))))
    return RatePmf(facility.rates.copy(), np.array(probs))


def rate_pmf(facility: DslFacility, population: UserPopulation, epsrel: float = QUAD_EPSREL) -> RatePmf:
    """Choice distribution over the menu, by quadrature over the desired rate.

    The desired rate is integrated as a nested expectation over dwell (outer)
    and demand (inner).  The inner integrand jumps where ``x / xi`` crosses a
    level rate, so ``x = R_l * xi`` are passed as split points; the outer one
    has kinks where those points enter or leave the demand support.  A dwell
    atom at zero enters as the ``rho = inf`` case with its exact weight.
    """
    imp = population.impatience
    demand, dwell = population.demand, population.dwell
    if population.zero_dwell:
        return rate_pmf_free_parking(facility, imp)
    R = facility.rates
    inf_case = conditional_choice_probabilities(math.inf, facility, imp)

    def given_dwell(s: float) -> np.ndarray:
        if s == 0:
            return inf_case
        return expect(
            demand,
            lambda v: conditional_choice_probabilities(v / s, facility, imp),
            breakpoints=R * s,
            epsrel=epsrel,
            vectorized=True,
        )

    outer_pts = np.concatenate([demand.lower / R, demand.upper / R])
    probs = expect(dwell, given_dwell, breakpoints=outer_pts, epsrel=epsrel)
    return RatePmf(R.copy(), np.atleast_1d(probs))


def sampled_rate_pmf(facility: DslFacility, population: UserPopulation, seed, n: int) -> RatePmf:
    """Choice frequencies of ``n`` sampled users under direct cost minimization."""
    x, a, xi = population.sample_users(make_rng(seed), n)
    lv = select_level(x, a, xi, facility)
    counts = np.bincount(np.asarray(lv) - 1, minlength=facility.n_levels)
    return RatePmf(facility.rates.copy(), counts / n)


@dataclass(frozen=True)
class DslMoments:
    mean_rate: float
    mean_rate_sq: float
    mean_charge_time: float  # E[x / r]
    mean_dwell: float        # E[max(xi, x / r)]
    mean_active: float       # E[x / r]
    method: str
    stderr: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mean_rate_sq < self.mean_rate**2 * (1 - 1e-12):
            raise ModelError("E[r^2] below E[r]^2")
        if self.mean_dwell < self.mean_active * (1 - 1e-12):
            raise ModelError("mean dwell below mean active time")

    def queue_parameters(self, arrival_rate: float, rate_cap: float) -> QueueParameters:
        return QueueParameters(arrival_rate, self.mean_dwell, self.mean_active, self.mean_rate, self.mean_rate_sq, rate_cap)


def dsl_moments(
    facility: DslFacility,
    population: UserPopulation,
    pmf: RatePmf | None = None,
    samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    max_stderr: float | None = None,
) -> DslMoments:
    """Moments of the chosen rate and of the occupancy and charging times.

    Rate moments come from the choice distribution.  With zero desired dwell
    the rate is independent of demand, so ``E[x/r] = E[x] E[1/r]`` exactly;
    otherwise the time moments are Monte-Carlo estimates with standard errors.
    """
    if pmf is None:
        pmf = rate_pmf(facility, population)
    if len(pmf.rates) != facility.n_levels or not np.allclose(pmf.rates, facility.rates):
        raise ModelError("rate distribution does not match the facility menu")
    if population.zero_dwell:
        t = population.demand.mean * pmf.mean_inverse
        return DslMoments(pmf.mean, pmf.second_moment, t, t, t, "analytic")
    if samples < 2:
        raise ModelError("need at least 2 Monte-Carlo samples")
    x, a, xi = population.sample_users(make_rng(seed), samples)
    r = facility.rates[np.asarray(select_level(x, a, xi, facility)) - 1]
    charge = x / r
    stay = np.maximum(xi, charge)
    se = {
        "mean_charge_time": float(charge.std(ddof=1) / math.sqrt(samples)),
        "mean_dwell": float(stay.std(ddof=1) / math.sqrt(samples)),
        "mean_active": float(charge.std(ddof=1) / math.sqrt(samples)),
    }
    if max_stderr is not None and max(se.values()) > max_stderr:
        raise NumericalError(f"Monte-Carlo standard error {max(se.values()):.3g} exceeds cap {max_stderr:.3g}")
    return DslMoments(pmf.mean, pmf.second_moment, float(charge.mean()), float(stay.mean()), float(charge.mean()), "monte_carlo", se)


@dataclass(frozen=True)
class DslModel:
    """Adapter used by the simulator and the CLI."""

    facility: DslFacility
    tag: str = "dsl"

    @property
    def rate_cap(self) -> float:
        return self.facility.rate_cap

    def assign(self, x, alpha, xi):
        """Rates, occupancy times and charging times for arrays of users."""
        r = self.facility.rates[np.asarray(select_level(x, alpha, xi, self.facility)) - 1]
        charge = x / r
        return r, np.maximum(xi, charge), charge

    def max_service_time(self, population: UserPopulation) -> float:
        return max(population.dwell.upper, population.demand.upper / self.facility.rates[0])

    def moments(self, population: UserPopulation, samples: int = DEFAULT_MC_SAMPLES, seed: int = 0, max_stderr=None) -> DslMoments:
        return dsl_moments(self.facility, population, samples=samples, seed=seed, max_stderr=max_stderr)
