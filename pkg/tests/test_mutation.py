import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqpost import mutation
from seqpost.models import ConjugateNormalModel, EgarchModel, conjugate_oracle
from seqpost.mutation import (JITTER, MPhaseRule, ProposalKind, StepsizeState, adapt_stepsize,
                              m_phase, mean_rne, metropolis_sweep, proposal_covariance)
from seqpost.particles import ParticleSystem, init_particles
from seqpost.rng import Phase, RandomStream, StreamBatch, StreamKey


def _system(model, theta, y, J):
    theta = np.asarray(theta, dtype=float).reshape(J, -1, model.k)
    N = theta.shape[1]
    ll, state = model.loglik(theta.reshape(J * N, model.k), y)
    return ParticleSystem(J, N, theta, state.reshape(J, N, model.state_dim), np.zeros((J, N)),
                          ll.reshape(J, N), current_t=len(y), cycle=1)


def _posterior(model, y):
    o = conjugate_oracle(y, model.m0, model.v0, model.sigma2)
    return o["posterior_mean"], o["posterior_var"]


def test_covariance_of_identical_particles_is_jitter():
    sigma = proposal_covariance(np.full((10, 3), 1.7), 0.5)
    assert np.array_equal(sigma, JITTER * np.eye(3))


def test_covariance_hand_value():
    sigma = proposal_covariance(np.array([[0.0], [2.0]]), 0.5)
    assert sigma[0, 0] == pytest.approx(0.5 + JITTER * 2.0, rel=1e-15)


def test_covariance_scales_quadratically():
    x = RandomStream(StreamKey(3)).normal(300).reshape(100, 3)
    assert np.allclose(proposal_covariance(3.0 * x, 0.7), 9.0 * proposal_covariance(x, 0.7), rtol=1e-12)


def test_covariance_rejects_non_finite():
    with pytest.raises(ValueError):
        proposal_covariance(np.array([[0.0], [np.inf]]), 0.5)


def test_zero_covariance_leaves_system_unchanged(conjugate, conjugate_data):
    ps = init_particles(conjugate, 2, 50, 1)
    ps = _system(conjugate, ps.theta, conjugate_data, 2)
    before = ps.copy()
    streams = StreamBatch.for_population(1, Phase.M, 1, 1, 2, 50)
    acc = metropolis_sweep(ps, conjugate, conjugate_data, np.zeros((1, 1)), streams)
    assert acc == 1.0
    assert np.array_equal(ps.theta, before.theta) and np.array_equal(ps.loglik, before.loglik)


@pytest.mark.parametrize("h,rate,expected", [(0.5, 0.30, 0.6), (1.0, 0.50, 1.0), (0.1, 0.0, 0.1),
                                             (0.5, 0.25, 0.4), (0.3, 0.1, 0.2)])
def test_stepsize_rule(h, rate, expected):
    assert adapt_stepsize(StepsizeState(h), rate).h == pytest.approx(expected, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(rates=st.lists(st.floats(0, 1), min_size=1, max_size=60))
def test_stepsize_stays_in_bounds(rates):
    s = StepsizeState()
    for r in rates:
        s = adapt_stepsize(s, r)
        assert 0.1 - 1e-12 <= s.h <= 1.0 + 1e-12


@pytest.mark.parametrize("rss_in,expected", [(0.45, 7), (0.20, 7), (0.10, 21)])
def test_deterministic_rule_sweep_count(conjugate, conjugate_data, rss_in, expected):
    ps = init_particles(conjugate, 2, 64, 1)
    ps = _system(conjugate, ps.theta, conjugate_data, 2)
    rec, _ = m_phase(ps, conjugate, conjugate_data, MPhaseRule(kind="deterministic"), rss_in, False, 3)
    assert rec.iterations == expected
    assert len(rec.rne) == expected


def test_rne_rule_stops_at_threshold_or_cap(conjugate, conjugate_data):
    ps = init_particles(conjugate, 4, 128, 1)
    ps = _system(conjugate, ps.theta, conjugate_data, 4)
    rule = MPhaseRule(kind="rne", rmax=30)
    rec, _ = m_phase(ps, conjugate, conjugate_data, rule, 0.3, False, 3)
    assert mean_rne(rec.rne[-1]) >= rule.e1 or rec.iterations == rule.rmax
    assert all(mean_rne(r) < rule.e1 for r in rec.rne[:-1])


def test_rne_rule_uses_stricter_threshold_on_forced_dates(conjugate, conjugate_data):
    ps = init_particles(conjugate, 4, 128, 1)
    ps = _system(conjugate, ps.theta, conjugate_data, 4)
    rule = MPhaseRule(kind="rne", e1=0.35, e2=0.9, rmax=40)
    rec, _ = m_phase(ps, conjugate, conjugate_data, rule, 0.3, True, 3)
    assert mean_rne(rec.rne[-1]) >= 0.9 or rec.iterations == 40


def test_stepsizes_reproducible_from_record(conjugate, conjugate_data):
    ps = init_particles(conjugate, 2, 64, 1)
    ps = _system(conjugate, ps.theta, conjugate_data, 2)
    rec, final = m_phase(ps, conjugate, conjugate_data, MPhaseRule(kind="deterministic"), 0.1, False, 3)
    s = StepsizeState(rec.stepsizes[0])
    for h, acc in zip(rec.stepsizes, rec.acceptance):
        assert h == s.h
        s = adapt_stepsize(s, acc)
    assert s.h == final.h


def test_replayed_mutation_is_identical(conjugate, conjugate_data):
    ps = init_particles(conjugate, 2, 64, 1)
    ps = _system(conjugate, ps.theta, conjugate_data, 2)
    a, b = ps.copy(), ps.copy()
    rec, _ = m_phase(a, conjugate, conjugate_data, MPhaseRule(kind="deterministic"), 0.4, False, 3)
    m_phase(b, conjugate, conjugate_data, MPhaseRule(), 0.4, False, 3, replay=rec)
    assert np.array_equal(a.theta, b.theta)


def test_cached_loglik_matches_fresh_scan():
    model = EgarchModel(1, 2)
    y = 0.01 * RandomStream(StreamKey(8)).normal(80)
    ps = init_particles(model, 2, 64, 4)
    ps = _system(model, ps.theta, y, 2)
    rec, _ = m_phase(ps, model, y, MPhaseRule(kind="deterministic", rbar=3), 0.4, False, 9)
    assert max(rec.acceptance) > 0
    ll, state = model.loglik(ps.flat_theta(), y)
    assert np.allclose(ps.loglik.ravel(), ll, rtol=1e-12, atol=0)
    assert np.allclose(ps.flat_state(), state, rtol=1e-12)


def test_mixing_from_wrong_start(conjugate, conjugate_data):
    mean, var = _posterior(conjugate, conjugate_data)
    J, N = 4, 1000
    start = 3.0 + 0.05 * RandomStream(StreamKey(4)).normal(J * N)
    ps = _system(conjugate, start, conjugate_data, J)
    h = StepsizeState()
    for r in range(1, 201):
        sigma = proposal_covariance(ps.flat_theta(), h.h)
        acc = metropolis_sweep(ps, conjugate, conjugate_data, sigma,
                               StreamBatch.for_population(6, Phase.M, 1, r, J, N))
        h = adapt_stepsize(h, acc)
    x = ps.theta.ravel()
    n = x.size
    assert abs(x.mean() - mean) < 4 * math.sqrt(var / n)
    assert abs(x.var(ddof=1) - var) < 4 * var * math.sqrt(2 / (n - 1))


def test_one_sweep_preserves_exact_posterior(conjugate, conjugate_data):
    mean, var = _posterior(conjugate, conjugate_data)
    n = 100_000
    start = mean + math.sqrt(var) * RandomStream(StreamKey(10)).normal(n)
    ps = _system(conjugate, start, conjugate_data, 4)
    sigma = proposal_covariance(ps.flat_theta(), 0.5)
    acc = metropolis_sweep(ps, conjugate, conjugate_data, sigma,
                           StreamBatch.for_population(2, Phase.M, 1, 1, 4, n // 4))
    assert 0.2 < acc < 1.0
    x = ps.theta.ravel()
    assert abs(x.mean() - mean) < 4 * math.sqrt(var / n)
    assert abs(x.var(ddof=1) - var) < 4 * var * math.sqrt(2 / (n - 1))


def test_independence_proposal_preserves_posterior(conjugate, conjugate_data):
    mean, var = _posterior(conjugate, conjugate_data)
    n = 40_000
    start = mean + math.sqrt(var) * RandomStream(StreamKey(12)).normal(n)
    ps = _system(conjugate, start, conjugate_data, 4)
    sigma = proposal_covariance(ps.flat_theta(), 1.5)
    metropolis_sweep(ps, conjugate, conjugate_data, sigma,
                     StreamBatch.for_population(2, Phase.M, 1, 1, 4, n // 4),
                     ProposalKind.INDEPENDENCE, np.array([mean]))
    x = ps.theta.ravel()
    assert abs(x.mean() - mean) < 4 * math.sqrt(var / n)
    assert abs(x.var(ddof=1) - var) < 4 * var * math.sqrt(2 / (n - 1))


def test_test_function_rne_iid_near_one(conjugate):
    ps = init_particles(conjugate, 32, 256, 5)
    (value,) = mutation.test_function_rne(ps, conjugate)
    assert 0.6 < value < 1.6


def test_mean_rne_ignores_undefined():
    assert mean_rne([0.2, float("nan"), 0.6]) == pytest.approx(0.4)
    assert mean_rne([float("nan")]) == float("inf")


def test_rule_validation():
    with pytest.raises(ValueError):
        MPhaseRule(kind="sometimes")
    with pytest.raises(ValueError):
        MPhaseRule(d1=0.1, d2=0.3)
