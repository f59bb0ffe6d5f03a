import numpy as np
import pytest
from scipy import stats

from conftest import case_population, metered_menu
from evcap.distributions import UserPopulation, make_point, make_uniform
from evcap.dsl import DslModel
from evcap.errors import ModelError
from evcap.pd import PdModel, QuadraticPricing
from evcap.simulator import (
    default_warmup,
    empirical_exceedance,
    poisson_gof,
    run_ensemble,
    simulate,
    summarize_traces,
    write_trace_csv,
)


class FixedService:
    """Every user stays exactly ``theta`` hours and charges at ``rate``."""

    tag = "fixed"

    def __init__(self, theta=1.0, rate=10.0):
        self.theta, self.rate = theta, rate

    def assign(self, x, alpha, xi):
        n = len(x)
        return np.full(n, self.rate), np.full(n, self.theta), np.full(n, self.theta)

    def max_service_time(self, population):
        return self.theta


@pytest.fixture
def dsl_model():
    return DslModel(metered_menu(1.0))


@pytest.fixture
def pd_model():
    return PdModel(QuadraticPricing(2.0, 0.25, 4.0, 50.0))


def test_no_arrivals():
    pop = UserPopulation(1e-9, make_uniform(10, 100), make_uniform(0, 10), make_uniform(0, 3.5))
    tr = simulate(FixedService(), pop, 100.0, 10.0, np.linspace(11, 100, 20), seed=0)
    assert np.all(tr.eta == 0) and np.all(tr.q_kw == 0)


def test_fixed_service_mean():
    pop = case_population()
    st = run_ensemble(FixedService(1.0), pop, replications=1000, seed=1, warmup=5.0, t_star=10.0)
    se = np.sqrt(20.0 / 1000)
    assert abs(st.eta.mean() - 20.0) < 3 * se


def test_present_not_active(dsl_model, population):
    tr = simulate(dsl_model, population, 60.0, 35.0, np.linspace(36, 60, 25), seed=2)
    assert np.all(tr.eta_act <= tr.eta)
    assert np.any(tr.eta_act < tr.eta)


def test_pd_present_equals_active(pd_model, population):
    tr = simulate(pd_model, population, 60.0, 35.0, np.linspace(36, 60, 25), seed=3)
    assert np.array_equal(tr.eta, tr.eta_act)


def test_trace_invariants(dsl_model, population):
    tr = simulate(dsl_model, population, 80.0, 35.0, np.linspace(36, 80, 30), seed=4)
    u = tr.users
    assert np.all(u.active_until <= u.departure)
    assert np.all(u.rate <= dsl_model.rate_cap)
    assert np.all(tr.q_kw <= tr.eta_act * dsl_model.rate_cap + 1e-9)
    for i, t in enumerate(tr.times):
        assert tr.eta[i] == np.count_nonzero(u.present_at(t))
        assert tr.eta_act[i] == np.count_nonzero(u.active_at(t))
        assert tr.q_kw[i] == pytest.approx(u.rate[u.active_at(t)].sum(), abs=1e-8)


def test_closed_intervals():
    pop = case_population()
    model = FixedService(theta=1.0)
    tr = simulate(model, pop, 10.0, 1.0, [5.0], seed=0)
    a = tr.users.arrival
    # a user who left exactly at t still counts: compare against the inclusive count
    assert tr.eta[0] == np.count_nonzero((a <= 5.0) & (a + 1.0 >= 5.0))


def test_reproducible(dsl_model, population):
    a = simulate(dsl_model, population, 60.0, 35.0, [40.0, 50.0], seed=9, replication=3)
    b = simulate(dsl_model, population, 60.0, 35.0, [40.0, 50.0], seed=9, replication=3)
    assert np.array_equal(a.eta, b.eta) and np.array_equal(a.q_kw, b.q_kw)
    c = simulate(dsl_model, population, 60.0, 35.0, [40.0, 50.0], seed=9, replication=4)
    assert not np.array_equal(a.users.arrival, c.users.arrival)


@pytest.mark.parametrize("warmup,horizon,times", [(10, 5, [6]), (1, 10, [0.5]), (1, 10, [11]), (1, 10, [])])
def test_bad_window(warmup, horizon, times, population):
    with pytest.raises(ModelError):
        simulate(FixedService(), population, horizon, warmup, times, seed=0)


def test_identical_streams_zero_error_bars(population):
    pop = UserPopulation(20.0, make_point(50.0), make_point(5.0), make_point(1.0))
    model = FixedService(1.0)
    times = np.linspace(6, 10, 5)
    traces = [simulate(model, pop, 10.0, 5.0, times, seed=1, replication=0) for _ in range(2)]
    st = summarize_traces(traces, 10.0)
    assert np.all(st.eta_percentiles.half_width == 0)
    assert np.all(st.q_percentiles.half_width == 0)


def test_ensemble_requires_two(dsl_model, population):
    with pytest.raises(ModelError):
        run_ensemble(dsl_model, population, replications=1)


def test_default_warmup(dsl_model, pd_model, population):
    assert default_warmup(dsl_model, population) == pytest.approx(5 * 100 / 15)
    assert default_warmup(pd_model, population) == pytest.approx(5 * 7.5)


def test_stationarity(dsl_model, population):
    _, traces = run_ensemble(dsl_model, population, replications=400, seed=5, series_points=10, return_traces=True)
    early = np.array([tr.eta[0] for tr in traces])
    late = np.array([tr.eta[-1] for tr in traces])
    se = np.sqrt(early.var(ddof=1) / len(early) + late.var(ddof=1) / len(late))
    assert abs(early.mean() - late.mean()) < 3 * se


class TestExceedance:
    def test_hand_fixture(self):
        vals = np.array([3, 5, 5, 7, 8, 8, 8, 10, 12, 15])
        ex = empirical_exceedance(vals, [0, 5, 6, 8, 9, 16])
        assert ex.prob.tolist() == [0.0, 0.1, 0.3, 0.4, 0.7, 1.0]
        assert ex.stderr[2] == pytest.approx(np.sqrt(0.3 * 0.7 / 10))

    def test_above_max(self):
        assert empirical_exceedance(np.array([1, 2, 3]), [100]).prob[0] == 1.0

    def test_threshold_zero(self):
        assert empirical_exceedance(np.array([0, 2, 3]), [0]).prob[0] == 0.0
        assert empirical_exceedance(np.array([0, 0]), [0]).prob[0] == 0.0

    def test_empty(self):
        with pytest.raises(ModelError):
            empirical_exceedance(np.array([]), [1])

    def test_from_stats(self, pd_model, population):
        st = run_ensemble(pd_model, population, replications=20, seed=0)
        ex = empirical_exceedance(st, [0, 1e9], "q")
        assert ex.prob.tolist() == [0.0, 1.0]
        with pytest.raises(ModelError):
            st.values("power")


def test_poisson_gof_accepts_and_rejects():
    rng = np.random.default_rng(0)
    _, p, cells = poisson_gof(rng.poisson(45, 1000), 45)
    assert p > 0.01 and cells > 5
    _, p, _ = poisson_gof(rng.poisson(55, 1000), 45)
    assert p < 1e-6


def test_trace_csv(tmp_path, pd_model, population):
    st, traces = run_ensemble(pd_model, population, replications=2, seed=0, series_points=3, return_traces=True)
    lines = write_trace_csv(traces, tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "replication,time,eta,eta_act,q_kw"
    assert len(lines) == 1 + 2 * 3
