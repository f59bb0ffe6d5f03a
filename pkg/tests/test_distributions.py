import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from evcap.distributions import (
    EmpiricalDistribution,
    UserPopulation,
    expect,
    integrate_batched,
    make_custom,
    make_point,
    make_rng,
    make_uniform,
    ratio_distribution,
    sample,
    with_atom_at_zero,
)
from evcap.errors import ModelError, NumericalError


class TestMakeUniform:
    def test_mean(self):
        assert make_uniform(0, 10).mean == pytest.approx(5.0, abs=1e-12)

    def test_case_supports(self):
        d = make_uniform(10, 100)
        assert (d.lower, d.upper) == (10, 100)
        xi = make_uniform(0, 3.5)
        assert xi.cdf(3.5) == pytest.approx(1.0)
        assert xi.pdf(1.0) == pytest.approx(1 / 3.5)

    @pytest.mark.parametrize("lo,hi", [(5, 5), (6, 5), (-1, 2), (0, math.inf)])
    def test_rejects_bad_support(self, lo, hi):
        with pytest.raises(ModelError):
            make_uniform(lo, hi)


class TestAtom:
    def test_zero_atom_is_identity(self):
        base = make_uniform(0, 3.5)
        d = with_atom_at_zero(base, 0.0)
        assert d.mean == pytest.approx(base.mean)
        assert d.cdf(1.0) == pytest.approx(base.cdf(1.0))

    def test_mixture_mean(self):
        assert with_atom_at_zero(make_uniform(0, 2), 0.5).mean == pytest.approx(0.5)

    def test_cdf_at_zero(self):
        assert with_atom_at_zero(make_uniform(0, 2), 0.25).cdf(0.0) == pytest.approx(0.25)

    @pytest.mark.parametrize("p0", [-0.1, 1.0, 1.5])
    def test_rejects_bad_probability(self, p0):
        with pytest.raises(ModelError):
            with_atom_at_zero(make_uniform(0, 2), p0)

    def test_rejects_positive_lower(self):
        with pytest.raises(ModelError):
            with_atom_at_zero(make_uniform(1, 2), 0.2)


class TestExpect:
    def test_uniform_mean(self):
        assert expect(make_uniform(0, 10), lambda v: v) == pytest.approx(5.0, abs=1e-10)

    def test_inverse_demand(self):
        assert expect(make_uniform(10, 100), lambda v: 1 / v) == pytest.approx(math.log(10) / 90, rel=1e-10)

    def test_inverse_demand_against_scipy(self):
        ref, _ = integrate.quad(lambda v: 1 / v / 90, 10, 100, epsabs=1e-14, epsrel=1e-12)
        assert expect(make_uniform(10, 100), lambda v: 1 / v) == pytest.approx(ref, rel=1e-10)

    def test_atom_mixture(self):
        assert expect(with_atom_at_zero(make_uniform(0, 2), 0.5), lambda v: v) == pytest.approx(0.5, abs=1e-12)

    def test_point(self):
        assert expect(make_point(3.0), lambda v: v * v) == pytest.approx(9.0)

    def test_vector_valued_with_breakpoints(self):
        d = make_uniform(0, 10)
        res = expect(d, lambda v: np.array([v < 3, v >= 3], dtype=float), breakpoints=[3.0])
        assert res == pytest.approx([0.3, 0.7], abs=1e-12)

    def test_vectorized_matches_scalar(self):
        d = make_uniform(10, 100)
        f = lambda v: np.sqrt(v) + np.floor(v / 25)
        a = expect(d, f, breakpoints=[25, 50, 75])
        b = expect(d, f, breakpoints=[25, 50, 75], vectorized=True)
        assert a == pytest.approx(b, rel=1e-12)

    def test_custom_density(self):
        tri = make_custom(0, 2, lambda v: v)
        assert tri.total_mass() == pytest.approx(1.0, abs=1e-8)
        assert expect(tri, lambda v: v) == pytest.approx(4 / 3, rel=1e-8)
        assert tri.cdf(1.0) == pytest.approx(0.25, abs=1e-6)

    def test_non_convergence_reported(self):
        with pytest.raises(NumericalError, match="error"):
            integrate_batched(lambda v: np.sin(1 / np.maximum(v, 1e-300)), 0.0, 1.0, (), epsrel=1e-14, epsabs=0.0, limit=5)

    @settings(max_examples=30, deadline=None)
    @given(
        a=st.floats(-5, 5),
        b=st.floats(-5, 5),
        lo=st.floats(0, 50),
        width=st.floats(0.5, 50),
    )
    def test_linearity(self, a, b, lo, width):
        d = make_uniform(lo, lo + width)
        f, g = np.cos, lambda v: v**2
        lhs = expect(d, lambda v: a * f(v) + b * g(v))
        rhs = a * expect(d, f) + b * expect(d, g)
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(lo=st.floats(0, 1e3), width=st.floats(1e-3, 1e3))
    def test_uniform_identity_mean(self, lo, width):
        d = make_uniform(lo, lo + width)
        assert expect(d, lambda v: v) == pytest.approx(lo + width / 2, rel=1e-10, abs=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(lo=st.floats(0, 100), width=st.floats(0.01, 100), p0=st.floats(0, 0.99))
    def test_total_mass(self, lo, width, p0):
        d = make_uniform(lo, lo + width)
        assert d.total_mass() == pytest.approx(1.0, abs=1e-8)
        d0 = with_atom_at_zero(make_uniform(0, width), p0)
        assert d0.total_mass() == pytest.approx(1.0, abs=1e-8)


class TestSample:
    def test_rejects_zero(self):
        with pytest.raises(ModelError):
            sample(make_uniform(0, 10), 0, 0)

    def test_deterministic(self):
        d = make_uniform(0, 10)
        assert np.array_equal(sample(d, 7, 100), sample(d, 7, 100))
        assert not np.array_equal(sample(d, 7, 100), sample(d, 8, 100))

    def test_mean_clt(self):
        assert abs(sample(make_uniform(0, 10), 1, 10**6).mean() - 5.0) < 0.02

    def test_atom_fraction(self):
        v = sample(with_atom_at_zero(make_uniform(0, 2), 0.3), 2, 10**6)
        assert abs(np.mean(v == 0) - 0.3) < 0.002

    def test_streams_independent(self):
        a = make_rng(0, 1).random(5)
        b = make_rng(0, 2).random(5)
        assert not np.array_equal(a, b)
        assert np.array_equal(a, make_rng(0, 1).random(5))


class TestRatio:
    def test_scaled_uniform(self):
        rho = ratio_distribution(make_uniform(10, 100), make_point(2.0), 3, 10**5)
        assert rho.n_infinite == 0
        assert rho.ks_distance(lambda v: np.clip((v - 5) / 45, 0, 1)) < 0.01

    def test_infinite_mass(self):
        rho = ratio_distribution(make_uniform(10, 100), with_atom_at_zero(make_uniform(0, 3.5), 0.25), 4, 10**6)
        assert abs(rho.infinite_fraction - 0.25) < 0.005
        assert math.isfinite(rho.mean)

    def test_rejects_zero_numerator(self):
        with pytest.raises(ModelError):
            ratio_distribution(make_uniform(0, 1), make_point(1.0), 0, 10)

    def test_min_count(self):
        with pytest.raises(ModelError):
            ratio_distribution(make_uniform(1, 2), make_point(1.0), 0, 5, min_count=10)

    def test_empirical_moments(self):
        e = EmpiricalDistribution(np.array([1.0, 2.0, 3.0]), 1)
        assert e.count == 4
        assert e.infinite_fraction == 0.25
        assert e.mean == 2.0
        assert e.cdf(2.0) == pytest.approx(0.5)


class TestPopulation:
    def test_demand_must_be_positive(self):
        with pytest.raises(ModelError):
            UserPopulation(1.0, make_uniform(0, 10), make_uniform(0, 1), make_uniform(0, 1))

    def test_arrival_rate(self):
        with pytest.raises(ModelError):
            UserPopulation(0.0, make_uniform(1, 10), make_uniform(0, 1), make_uniform(0, 1))

    def test_zero_dwell(self):
        p = UserPopulation(1.0, make_uniform(1, 10), make_uniform(0, 1), make_point(0.0))
        assert p.zero_dwell
        x, a, xi = p.sample_users(make_rng(0), 10)
        assert np.all(xi == 0) and x.shape == (10,)
