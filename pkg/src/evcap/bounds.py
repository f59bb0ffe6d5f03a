"""High-confidence occupancy and power bounds for an M/G/inf charging facility.

At steady state the number of present users is Poisson with mean
``lambda * E[theta]`` and the number of charging users is Poisson with mean
``lambda * E[theta_act]``.  Bernstein's inequality turns these facts into
tail bounds on the occupancy and, conditioning on the active count, on the
total power draw.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import ModelError


@dataclass(frozen=True)
class QueueParameters:
    arrival_rate: float
    mean_dwell: float
    mean_active: float
    mean_rate: float
    mean_rate_sq: float
    rate_cap: float

    def __post_init__(self):
        vals = (self.arrival_rate, self.mean_dwell, self.mean_active, self.mean_rate, self.mean_rate_sq, self.rate_cap)
        if not all(v > 0 and math.isfinite(v) for v in vals):
            raise ModelError(f"queue parameters must be positive and finite: {self}")
        tol = 1e-12
        if self.mean_active > self.mean_dwell * (1 + tol):
            raise ModelError("mean active time cannot exceed mean dwell time")
        if self.mean_rate > self.rate_cap * (1 + tol):
            raise ModelError("mean rate cannot exceed the rate cap")
        if self.mean_rate_sq < self.mean_rate**2 * (1 - tol):
            raise ModelError("second moment of the rate is below the squared mean")

    @property
    def mean_present(self) -> float:
        return self.arrival_rate * self.mean_dwell

    @property
    def mean_charging(self) -> float:
        return self.arrival_rate * self.mean_active

    def shifted(self, k: float, stderr: dict[str, float]) -> "QueueParameters":
        """Parameters with every estimated moment moved by ``k`` standard errors.

        ``stderr`` maps field names to standard errors; missing fields are exact.
        """
        def mv(name):
            return max(getattr(self, name) + k * stderr.get(name, 0.0), 1e-12)
        dwell, act = mv("mean_dwell"), mv("mean_active")
        rate = min(mv("mean_rate"), self.rate_cap)
        rate_sq = max(mv("mean_rate_sq"), rate**2)
        return replace(self, mean_dwell=max(dwell, act), mean_active=act, mean_rate=rate, mean_rate_sq=rate_sq)


def bernstein_tail(nu: float, sum_second_moments: float, b: float) -> float:
    """Bernstein bound ``exp(-nu^2 / (2 (S + b nu / 3)))`` on a sum exceeding its mean by ``nu``."""
    if nu < 0:
        raise ModelError(f"deviation must be nonnegative, got {nu}")
    if sum_second_moments <= 0 or b <= 0:
        raise ModelError("second-moment sum and range bound must be positive")
    return math.exp(-(nu**2) / (2.0 * (sum_second_moments + b * nu / 3.0)))


def poisson_tail_bound(mean: float, threshold: float) -> float:
    """Upper bound on ``P(Z >= threshold)`` for ``Z ~ Poisson(mean)``; 1 when threshold <= mean."""
    if mean <= 0:
        raise ModelError(f"Poisson mean must be positive, got {mean}")
    if threshold <= mean:
        return 1.0
    return bernstein_tail(threshold - mean, mean, 1.0)


def poisson_log_pmf(m, mean: float):
    m = np.asarray(m, dtype=float)
    out = m * math.log(mean) - mean - gammaln(m + 1.0)
    return out if out.ndim else float(out)


def poisson_pmf(m, mean: float):
    return np.exp(poisson_log_pmf(m, mean))


def occupancy_bound(params: QueueParameters, threshold: float) -> float:
    """delta(M): ``P(eta(t) >= M) <= delta(M)``."""
    return poisson_tail_bound(params.mean_present, threshold)


def active_occupancy_bound(params: QueueParameters, threshold: float) -> float:
    """delta_act(M): same bound for the number of actively charging users."""
    return poisson_tail_bound(params.mean_charging, threshold)


def _floor(v: float) -> int:
    # absorb representation error so that e.g. 50 / 10 floors to 5
    return math.floor(v * (1 + 1e-12))


def _ceil(v: float) -> int:
    return math.ceil(v * (1 - 1e-12))


def power_bound(params: QueueParameters, power: float) -> float:
    """gamma(R): ``P(Q(t) >= R) <= gamma(R)``.

    Conditions on the number ``m`` of charging users.  Terms with
    ``m < R / R_max`` vanish; for ``m`` up to ``floor(R / E[r])`` each term is
    a Bernstein bound weighted by the Poisson probability of ``m`` charging
    users, and the remaining tail is bounded by delta_act.
    """
    mu = params.mean_charging
    er, er2, rmax = params.mean_rate, params.mean_rate_sq, params.rate_cap
    if power <= mu * er:
        return 1.0
    m_hi = _floor(power / er)
    m_lo = max(_ceil(power / rmax), 0)
    total = active_occupancy_bound(params, m_hi)
    if m_lo <= m_hi:
        m = np.arange(m_lo, m_hi + 1, dtype=float)
        nu = power - m * er
        denom = 2.0 * (m * er2 + rmax * nu / 3.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            expo = np.where(denom > 0, -(nu**2) / denom, 0.0)
        total += float(np.sum(np.exp(expo + poisson_log_pmf(m, mu))))
    return min(1.0, total)


@dataclass(frozen=True)
class BoundCurve:
    kind: str  # "occupancy" | "active" | "power"
    thresholds: np.ndarray
    bounds: np.ndarray

    @property
    def confidence(self) -> np.ndarray:
        return 1.0 - self.bounds

    def rows(self):
        for t, b in zip(self.thresholds, self.bounds):
            yield float(t), float(b), float(1.0 - b)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "bound", "confidence"])
            for row in self.rows():
                w.writerow([f"{v:.9g}" for v in row])
        return path


_BOUND_FUNCS = {
    "occupancy": occupancy_bound,
    "active": active_occupancy_bound,
    "power": power_bound,
}


def bound_curve(params: QueueParameters, grid: Sequence[float], kind: str = "occupancy") -> BoundCurve:
    """Tabulate one of the bounds over an ascending grid."""
    try:
        fn = _BOUND_FUNCS[kind]
    except KeyError:
        raise ModelError(f"unknown bound kind {kind!r}") from None
    grid = np.asarray(grid, dtype=float)
    if grid.size and np.any(np.diff(grid) < 0):
        raise ModelError("bound grid must be sorted ascending")
    vals = np.array([fn(params, t) for t in grid], dtype=float)
    return BoundCurve(kind, grid, vals)
