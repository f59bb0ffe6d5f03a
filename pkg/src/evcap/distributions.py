"""Bounded user-parameter distributions, quadrature expectations and sampling.

Every user parameter (demand, impatience, desired dwell) lives on a finite
interval.  The dwell time may additionally carry a probability atom at zero,
for users who only want to charge.  Three kinds are supported:

* ``uniform``  - uniform density on ``[lower, upper]``
* ``point``    - degenerate at ``lower == upper``
* ``custom``   - user supplied density on ``[lower, upper]`` (normalized here)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import ModelError, NumericalError

QUAD_EPSREL = 1e-8
QUAD_LIMIT = 200  # scipy.quad subdivision cap for mass checks

_CUSTOM_GRID = 4097


def make_rng(seed: int | np.random.Generator, *stream: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``, optionally on an independent child stream.

    ``make_rng(seed, i)`` gives the stream of replication ``i``; identical
    arguments always give bit-identical draws.
    """
    if isinstance(seed, np.random.Generator):
        if stream:
            raise ModelError("cannot derive a child stream from an existing generator")
        return seed
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class BoundedDistribution:
    lower: float
    upper: float
    atom_at_zero: float = 0.0
    kind: str = "uniform"
    density: Callable[[float], float] | None = field(default=None, compare=False, repr=False)
    # tabulated CDF of the continuous part, only for kind == "custom"
    _grid: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        lo, hi, p0 = float(self.lower), float(self.upper), float(self.atom_at_zero)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ModelError(f"support must be finite, got [{lo}, {hi}]")
        if lo < 0:
            raise ModelError(f"lower bound must be nonnegative, got {lo}")
        if self.kind == "point":
            if lo != hi:
                raise ModelError("point distribution needs lower == upper")
            if p0 != 0:
                raise ModelError("point distribution cannot carry a separate atom")
        elif self.kind in ("uniform", "custom"):
            if not lo < hi:
                raise ModelError(f"need lower < upper, got [{lo}, {hi}]")
        else:
            raise ModelError(f"unknown distribution kind {self.kind!r}")
        if not 0 <= p0 < 1:
            raise ModelError(f"atom_at_zero must lie in [0, 1), got {p0}")
        if p0 > 0 and lo != 0:
            raise ModelError("an atom at zero requires lower == 0")
        if self.kind == "custom" and self.density is None:
            raise ModelError("custom distribution needs a density")

    @property
    def is_point(self) -> bool:
        return self.kind == "point"

    def continuous_pdf(self, x):
        """Density of the continuous part, normalized to one on the support."""
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        if self.kind == "uniform":
            out = np.where(inside, 1.0 / (self.upper - self.lower), 0.0)
        elif self.kind == "custom":
            xs, _, norm = self._grid
            vals = np.vectorize(self.density, otypes=[float])(np.clip(x, self.lower, self.upper))
            out = np.where(inside, vals / norm, 0.0)
        else:
            raise ModelError("a point distribution has no density")
        return out if out.ndim else float(out)

    def continuous_cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            out = np.where(x >= self.lower, 1.0, 0.0)
        elif self.kind == "uniform":
            out = np.clip((x - self.lower) / (self.upper - self.lower), 0.0, 1.0)
        else:
            xs, cs, _ = self._grid
            out = np.interp(x, xs, cs, left=0.0, right=1.0)
        return out if out.ndim else float(out)

    def pdf(self, x):
        """Density of the continuous part weighted by its mass ``1 - atom_at_zero``."""
        return (1.0 - self.atom_at_zero) * np.asarray(self.continuous_pdf(x))

    def cdf(self, x):
        """``P(X <= x)``, including the atom at zero."""
        x = np.asarray(x, dtype=float)
        p0 = self.atom_at_zero
        out = p0 * (x >= 0) + (1.0 - p0) * np.asarray(self.continuous_cdf(x))
        return out if out.ndim else float(out)

    def interval_prob(self, lo: float, hi: float) -> float:
        """``P(lo < X <= hi)``, zero when the interval is empty."""
        if not lo < hi:
            return 0.0
        return max(0.0, float(self.cdf(hi)) - float(self.cdf(lo)))

    @property
    def mean(self) -> float:
        return expect(self, lambda v: v)

    def total_mass(self) -> float:
        if self.is_point:
            return 1.0
        cont, _ = integrate.quad(self.continuous_pdf, self.lower, self.upper, epsrel=1e-12, limit=QUAD_LIMIT)
        return self.atom_at_zero + (1.0 - self.atom_at_zero) * cont

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n < 1:
            raise ModelError(f"sample size must be positive, got {n}")
        if self.is_point:
            return np.full(n, self.lower)
        u = rng.random(n)
        if self.kind == "uniform":
            vals = self.lower + (self.upper - self.lower) * rng.random(n)
        else:
            xs, cs, _ = self._grid
            vals = np.interp(rng.random(n), cs, xs)
        if self.atom_at_zero > 0:
            vals = np.where(u < self.atom_at_zero, 0.0, vals)
        return vals


def make_uniform(lower: float, upper: float) -> BoundedDistribution:
    return BoundedDistribution(float(lower), float(upper))


def make_point(value: float) -> BoundedDistribution:
    return BoundedDistribution(float(value), float(value), kind="point")


def make_custom(lower: float, upper: float, density: Callable[[float], float]) -> BoundedDistribution:
    """Distribution with an arbitrary nonnegative density on ``[lower, upper]``.

    The density is normalized numerically; the CDF used for sampling is a
    tabulated cumulative trapezoid on a fine grid.
    """
    lower, upper = float(lower), float(upper)
    if not lower < upper:
        raise ModelError(f"need lower < upper, got [{lower}, {upper}]")
    xs = np.linspace(lower, upper, _CUSTOM_GRID)
    ys = np.array([density(v) for v in xs], dtype=float)
    if np.any(ys < 0) or not np.all(np.isfinite(ys)):
        raise ModelError("density must be finite and nonnegative")
    norm, _ = integrate.quad(density, lower, upper, epsrel=1e-12, limit=QUAD_LIMIT)
    if norm <= 0:
        raise ModelError("density integrates to zero")
    cs = integrate.cumulative_trapezoid(ys, xs, initial=0.0)
    cs /= cs[-1]
    return BoundedDistribution(lower, upper, kind="custom", density=density, _grid=(xs, cs, norm))


def with_atom_at_zero(base: BoundedDistribution, p0: float) -> BoundedDistribution:
    """Mix ``base`` with probability mass ``p0`` at zero."""
    if not 0 <= p0 < 1:
        raise ModelError(f"atom probability must lie in [0, 1), got {p0}")
    if base.lower != 0 or base.is_point:
        raise ModelError("an atom at zero requires a continuous base with lower == 0")
    return BoundedDistribution(base.lower, base.upper, float(p0), base.kind, base.density, base._grid)


# Gauss-Kronrod 7/15 rule on [-1, 1]
_XK8 = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WK8 = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG8 = np.array([
    0.0, 0.129484966168869693270611432679082, 0.0, 0.279705391489276667901467771423780,
    0.0, 0.381830050505118944950369775488975, 0.0, 0.417959183673469387755102040816327,
])
_XK = np.concatenate([-_XK8[:-1], _XK8[::-1]])
_WK = np.concatenate([_WK8[:-1], _WK8[::-1]])
_WG = np.concatenate([_WG8[:-1], _WG8[::-1]])


def integrate_batched(f, a: float, b: float, points=(), epsrel: float = QUAD_EPSREL, epsabs: float = 1e-14, limit: int = 2000):
    """Adaptive Gauss-Kronrod (7/15) quadrature of a vectorized integrand.

    ``f`` maps a 1-D array of abscissae to values of shape ``(n,)`` or
    ``(k, n)``.  All unconverged subintervals are refined together so each
    round costs one call of ``f``.  An interval is accepted once its
    Kronrod-Gauss difference is below its length-share of the global
    tolerance; ``limit`` caps the number of live subintervals.

    Returns ``(value, error_estimate)``.
    """
    edges = np.unique(np.concatenate([[a], [p for p in points if a < p < b], [b]]))
    lo, hi = edges[:-1], edges[1:]
    total = None
    err_done = 0.0
    span = b - a
    while True:
        c = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo)
        x = c[:, None] + h[:, None] * _XK[None, :]
        y = np.asarray(f(x.ravel()), dtype=float)
        scalar = y.ndim == 1
        y = y.reshape(-1, len(lo), len(_XK))
        kron = (y @ _WK) * h
        err = np.max(np.abs(kron - (y @ _WG) * h), axis=0)
        done_sum = np.zeros(y.shape[0]) if total is None else total
        est = done_sum + kron.sum(axis=1)
        tol = max(epsabs, epsrel * float(np.max(np.abs(est))))
        if err_done + err.sum() <= tol:
            total, err_done = est, err_done + float(err.sum())
            break
        ok = err <= tol * (2 * h) / span
        total = done_sum + kron[:, ok].sum(axis=1)
        err_done += float(err[ok].sum())
        lo, hi = lo[~ok], hi[~ok]
        if not len(lo):
            break
        if 2 * len(lo) > limit:
            raise NumericalError(
                f"quadrature hit the subdivision cap ({limit}); error estimate {err_done + err[~ok].sum():.3g}"
            )
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
    return (float(total[0]) if scalar else total), err_done


def expect(
    dist: BoundedDistribution,
    f: Callable,
    breakpoints: Sequence[float] = (),
    epsrel: float = QUAD_EPSREL,
    limit: int = 2000,
    vectorized: bool = False,
):
    """E[f(X)] by adaptive quadrature over the continuous part plus the exact atom term.

    ``f`` may return a scalar or a fixed-length array.  With
    ``vectorized=True`` it is called on an array of points and must return
    shape ``(n,)`` or ``(k, n)``.  ``breakpoints`` are mandatory split points
    for integrands with kinks or jumps; those outside the open support are
    ignored.
    """
    if dist.is_point:
        v = np.array([dist.lower]) if vectorized else dist.lower
        out = np.asarray(f(v), dtype=float)
        out = out[..., 0] if vectorized else out
        return float(out) if np.ndim(out) == 0 else out
    p0 = dist.atom_at_zero
    a, b = dist.lower, dist.upper
    if vectorized:
        g = lambda v: np.asarray(f(v), dtype=float) * dist.continuous_pdf(v)
    else:
        g = lambda v: np.stack([np.asarray(f(t), dtype=float) for t in v], axis=-1) * dist.continuous_pdf(v)
    res, _ = integrate_batched(g, a, b, breakpoints, epsrel=epsrel, limit=limit)
    out = (1.0 - p0) * np.asarray(res)
    if p0 > 0:
        at0 = np.asarray(f(np.array([0.0])) if vectorized else f(0.0), dtype=float)
        out = out + p0 * (at0[..., 0] if vectorized else at0)
    return float(out) if np.ndim(out) == 0 else out


def sample(dist: BoundedDistribution, seed: int | np.random.Generator, n: int) -> np.ndarray:
    return dist.sample(make_rng(seed), n)


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Sorted finite samples plus a count of draws equal to +infinity.

    The infinite draws are kept out of every moment; callers branch on
    ``infinite_fraction`` explicitly.
    """

    values: np.ndarray
    n_infinite: int = 0

    @property
    def count(self) -> int:
        return len(self.values) + self.n_infinite

    @property
    def infinite_fraction(self) -> float:
        return self.n_infinite / self.count

    @property
    def mean(self) -> float:
        """Mean of the finite draws."""
        return float(np.mean(self.values))

    @property
    def variance(self) -> float:
        return float(np.var(self.values, ddof=1))

    def cdf(self, x):
        """Empirical ``P(X <= x)`` over all draws; the infinite mass never counts."""
        return np.searchsorted(self.values, x, side="right") / self.count

    def ks_distance(self, cdf: Callable) -> float:
        """Kolmogorov-Smirnov distance of the finite part against ``cdf``."""
        n = self.count
        v = self.values
        f = np.asarray(cdf(v), dtype=float)
        i = np.arange(1, len(v) + 1)
        return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ratio_distribution(
    numerator: BoundedDistribution,
    denominator: BoundedDistribution,
    seed: int | np.random.Generator,
    n: int,
    min_count: int = 1,
) -> EmpiricalDistribution:
    """Sampled distribution of ``numerator / denominator``.

    A zero denominator gives +infinity, which is counted separately.
    """
    if numerator.lower <= 0:
        raise ModelError("ratio numerator must be bounded away from zero")
    if n < max(1, min_count):
        raise ModelError(f"need at least {max(1, min_count)} draws, got {n}")
    rng = make_rng(seed)
    num = numerator.sample(rng, n)
    den = denominator.sample(rng, n)
    zero = den == 0
    vals = np.sort(num[~zero] / den[~zero])
    return EmpiricalDistribution(vals, int(zero.sum()))


@dataclass(frozen=True)
class UserPopulation:
    arrival_rate: float
    demand: BoundedDistribution
    impatience: BoundedDistribution
    dwell: BoundedDistribution

    def __post_init__(self):
        if not (self.arrival_rate > 0 and math.isfinite(self.arrival_rate)):
            raise ModelError(f"arrival rate must be positive, got {self.arrival_rate}")
        if self.demand.lower <= 0:
            raise ModelError("demand must be bounded away from zero (lower > 0)")
        if self.demand.atom_at_zero > 0 or self.impatience.atom_at_zero > 0:
            raise ModelError("only the dwell time may carry an atom at zero")

    @property
    def zero_dwell(self) -> bool:
        """True when every user has zero desired dwell."""
        return self.dwell.is_point and self.dwell.lower == 0

    def sample_users(self, rng: np.random.Generator, n: int):
        """Draw ``n`` independent users; returns arrays ``(demand, impatience, dwell)``."""
        return self.demand.sample(rng, n), self.impatience.sample(rng, n), self.dwell.sample(rng, n)

    def replace(self, **changes) -> "UserPopulation":
        from dataclasses import replace

        return replace(self, **changes)
