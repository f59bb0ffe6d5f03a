"""Monte-Carlo M/G/inf simulation of a charging facility.

Users never wait and never interact, so a replication is just a sorted list
of arrivals with their occupancy and charging intervals; counts at a time
``t`` follow from binary searches on the sorted interval endpoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .distributions import UserPopulation, make_rng
from .errors import ModelError

DEFAULT_REPLICATIONS = 1000
WARMUP_FACTOR = 5.0
DEFAULT_PERCENTILES = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)


@dataclass(frozen=True)
class UserRealizations:
    """Per-user draws and outcomes of one replication (parallel arrays)."""

    arrival: np.ndarray
    demand: np.ndarray
    impatience: np.ndarray
    dwell: np.ndarray
    rate: np.ndarray
    departure: np.ndarray
    active_until: np.ndarray

    def __len__(self) -> int:
        return len(self.arrival)

    def present_at(self, t: float) -> np.ndarray:
        return (self.arrival <= t) & (t <= self.departure)

    def active_at(self, t: float) -> np.ndarray:
        return (self.arrival <= t) & (t <= self.active_until)


@dataclass(frozen=True)
class SimulationTrace:
    times: np.ndarray
    eta: np.ndarray
    eta_act: np.ndarray
    q_kw: np.ndarray
    seed: int
    replication: int
    model: str
    users: UserRealizations


def default_warmup(model, population: UserPopulation) -> float:
    """Five times the longest possible stay: past it the occupancy is stationary."""
    return WARMUP_FACTOR * model.max_service_time(population)


def simulate(
    model,
    population: UserPopulation,
    horizon: float,
    warmup: float,
    observation_times: Sequence[float],
    seed: int,
    replication: int = 0,
) -> SimulationTrace:
    """One replication starting from an empty facility at time 0.

    ``model`` supplies ``assign(x, alpha, xi) -> (rate, stay, charge_time)``.
    Intervals are closed: a user arriving or leaving exactly at ``t`` counts.
    """
    if not 0 <= warmup < horizon:
        raise ModelError(f"need 0 <= warmup < horizon, got warmup={warmup}, horizon={horizon}")
    times = np.asarray(observation_times, dtype=float)
    if times.size == 0 or np.any(times <= warmup) or np.any(times > horizon):
        raise ModelError("observation times must lie in (warmup, horizon]")
    rng = make_rng(seed, replication)
    n = rng.poisson(population.arrival_rate * horizon)
    arrival = np.sort(rng.uniform(0.0, horizon, n))
    if n:
        x, a, xi = population.sample_users(rng, n)
        rate, stay, charge = model.assign(x, a, xi)
    else:
        x = a = xi = rate = stay = charge = np.zeros(0)
    users = UserRealizations(arrival, x, a, xi, np.asarray(rate, dtype=float), arrival + stay, arrival + charge)

    arrived = np.searchsorted(arrival, times, side="right")
    eta = arrived - np.searchsorted(np.sort(users.departure), times, side="left")
    order = np.argsort(users.active_until)
    ends = users.active_until[order]
    eta_act = arrived - np.searchsorted(ends, times, side="left")
    # Q(t) = (rate arrived by t) - (rate finished before t), via prefix sums
    arr_cum = np.concatenate([[0.0], np.cumsum(users.rate)])
    end_cum = np.concatenate([[0.0], np.cumsum(users.rate[order])])
    q = arr_cum[arrived] - end_cum[np.searchsorted(ends, times, side="left")]
    q = np.maximum(q, 0.0)
    return SimulationTrace(times, eta, eta_act, q, int(seed), int(replication), model.tag, users)


@dataclass(frozen=True)
class PercentileCurve:
    levels: np.ndarray
    mean: np.ndarray
    half_width: np.ndarray  # two standard deviations across replications


@dataclass(frozen=True)
class EnsembleStats:
    """Samples of eta, eta_act and Q at one instant, one per replication."""

    t_star: float
    eta: np.ndarray
    eta_act: np.ndarray
    q_kw: np.ndarray
    eta_percentiles: PercentileCurve | None = None
    q_percentiles: PercentileCurve | None = None

    @property
    def replications(self) -> int:
        return len(self.eta)

    def values(self, quantity: str) -> np.ndarray:
        try:
            return {"eta": self.eta, "eta_act": self.eta_act, "q": self.q_kw}[quantity]
        except KeyError:
            raise ModelError(f"unknown quantity {quantity!r}") from None


def _percentile_curve(series: list[np.ndarray], levels) -> PercentileCurve:
    levels = np.asarray(levels, dtype=float)
    per_rep = np.array([np.quantile(s, levels) for s in series])
    sd = per_rep.std(axis=0, ddof=1) if len(series) > 1 else np.zeros(len(levels))
    return PercentileCurve(levels, per_rep.mean(axis=0), 2.0 * sd)


def summarize_traces(traces: Sequence[SimulationTrace], t_star: float, percentiles=DEFAULT_PERCENTILES) -> EnsembleStats:
    """Collect the values at ``t_star`` and the per-replication time-series percentiles."""
    if len(traces) < 2:
        raise ModelError("need at least 2 replications")
    idx = [int(np.argmin(np.abs(tr.times - t_star))) for tr in traces]
    for tr, i in zip(traces, idx):
        if not math.isclose(tr.times[i], t_star, rel_tol=0, abs_tol=1e-9):
            raise ModelError(f"t_star={t_star} is not an observation time of every trace")
    pick = lambda attr: np.array([getattr(tr, attr)[i] for tr, i in zip(traces, idx)])
    return EnsembleStats(
        float(t_star),
        pick("eta"),
        pick("eta_act"),
        pick("q_kw").astype(float),
        _percentile_curve([tr.eta for tr in traces], percentiles),
        _percentile_curve([tr.q_kw for tr in traces], percentiles),
    )


def run_ensemble(
    model,
    population: UserPopulation,
    replications: int = DEFAULT_REPLICATIONS,
    seed: int = 0,
    t_star: float | None = None,
    warmup: float | None = None,
    series_points: int = 50,
    percentiles=DEFAULT_PERCENTILES,
    return_traces: bool = False,
):
    """Independent replications, each on its own stream derived from ``(seed, index)``.

    Each replication records a time series of ``series_points`` instants
    spread over ``(warmup, t_star]``; exceedance statistics use ``t_star``
    only, the series feed the percentile curves.  With ``return_traces`` the
    result is ``(stats, traces)``.
    """
    if replications < 2:
        raise ModelError("need at least 2 replications for error bars")
    if warmup is None:
        warmup = default_warmup(model, population)
    if t_star is None:
        t_star = 2.0 * warmup
    if not t_star > warmup:
        raise ModelError("observation time must come after the warmup")
    times = np.linspace(warmup, t_star, series_points + 1)[1:]
    traces = [simulate(model, population, t_star, warmup, times, seed, rep) for rep in range(replications)]
    stats = summarize_traces(traces, t_star, percentiles)
    return (stats, traces) if return_traces else stats


@dataclass(frozen=True)
class Exceedance:
    thresholds: np.ndarray
    prob: np.ndarray     # empirical P(value < threshold)
    stderr: np.ndarray   # binomial standard error


def empirical_exceedance(values_or_stats, thresholds, quantity: str = "eta") -> Exceedance:
    """Fraction of replications strictly below each threshold."""
    vals = values_or_stats.values(quantity) if isinstance(values_or_stats, EnsembleStats) else np.asarray(values_or_stats)
    if vals.size == 0:
        raise ModelError("no samples")
    th = np.asarray(thresholds, dtype=float)
    srt = np.sort(vals)
    p = np.searchsorted(srt, th, side="left") / vals.size
    return Exceedance(th, p, np.sqrt(p * (1 - p) / vals.size))


def poisson_gof(counts, mean: float, min_expected: float = 5.0):
    """Chi-square goodness of fit of integer counts against Poisson(mean).

    Cells are consecutive integers, with both tails pooled until every
    cell expects at least ``min_expected`` observations.  Returns
    ``(statistic, p_value, n_cells)``.
    """
    counts = np.asarray(counts, dtype=int)
    n = counts.size
    lo, hi = int(stats.poisson.ppf(1e-9, mean)), int(stats.poisson.isf(1e-9, mean)) + 1
    edges = list(range(lo, hi + 1))
    # cells [e_i, e_{i+1}); the first and last are widened to -inf / +inf
    def expected(e):
        cdf = stats.poisson.cdf(np.array(e[1:-1]) - 1, mean)
        cdf = np.concatenate([[0.0], cdf, [1.0]])
        return n * np.diff(cdf)
    exp = expected(edges)
    while len(edges) > 3 and exp[0] < min_expected:
        edges.pop(1)
        exp = expected(edges)
    while len(edges) > 3 and exp[-1] < min_expected:
        edges.pop(-2)
        exp = expected(edges)
    inner = np.array(edges[1:-1])
    obs = np.bincount(np.searchsorted(inner, counts, side="right"), minlength=len(edges) - 1)
    res = stats.chisquare(obs, exp)
    return float(res.statistic), float(res.pvalue), len(obs)


def write_trace_csv(traces: Sequence[SimulationTrace], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replication", "time", "eta", "eta_act", "q_kw"])
        for tr in traces:
            for t, e, ea, q in zip(tr.times, tr.eta, tr.eta_act, tr.q_kw):
                w.writerow([tr.replication, f"{t:.9g}", int(e), int(ea), f"{q:.9g}"])
    return path
