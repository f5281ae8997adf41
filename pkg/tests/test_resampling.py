import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from seqpost.models import ConjugateNormalModel
from seqpost.particles import WeightCollapseError, c_phase_step, init_particles
from seqpost.resampling import ResampleScheme, resample_group, s_phase
from seqpost.rng import Phase, StreamKey, stream_for

SCHEMES = list(ResampleScheme)
R = 10_000


def _stream(r, seed=1):
    return stream_for(StreamKey(seed, phase=Phase.S, cycle=r))


def _counts(w, scheme, reps=R, seed=1):
    return np.array([np.bincount(resample_group(w, scheme, _stream(r, seed)), minlength=len(w))
                     for r in range(reps)])


@pytest.mark.parametrize("scheme", SCHEMES)
def test_uniform_weights_each_index_once_on_average(scheme):
    counts = _counts(np.ones(5), scheme, reps=200)
    assert np.all(counts.sum(axis=1) == 5)
    if scheme is ResampleScheme.RESIDUAL:
        assert np.all(counts == 1)
    assert np.allclose(counts.mean(axis=0), 1.0, atol=0.3)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_degenerate_weights(scheme):
    anc = resample_group(np.array([1.0, 0, 0, 0]), scheme, _stream(0))
    assert anc.tolist() == [0, 0, 0, 0]


def test_residual_hand_example():
    w = np.array([0.625, 0.375, 0.0, 0.0])
    seen = set()
    for r in range(400):
        c = np.bincount(resample_group(w, "residual", _stream(r)), minlength=4)
        assert c[0] >= 2 and c[1] >= 1 and c[2] == c[3] == 0
        seen.add(tuple(c))
    assert seen == {(3, 1, 0, 0), (2, 2, 0, 0)}


def test_multinomial_frequencies():
    w = np.array([0.5, 0.3, 0.2])
    counts = _counts(w, "multinomial")
    se = np.sqrt(3 * w * (1 - w) / R)
    assert np.all(np.abs(counts.mean(axis=0) - 3 * w) < 3 * se)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        resample_group(np.array([0.5, -0.1, 0.6]), "multinomial", _stream(0))


def test_zero_total_weight():
    with pytest.raises(WeightCollapseError):
        resample_group(np.zeros(3), "residual", _stream(0))


# skewed weights shared by the unbiasedness and variance-ordering checks
SKEWED = np.exp(np.linspace(0.0, 3.0, 10))
SKEWED /= SKEWED.sum()


@pytest.fixture(scope="module")
def skewed_counts():
    return {s: _counts(SKEWED, s, seed=17) for s in SCHEMES}


def test_unbiased_all_schemes(skewed_counts):
    n = SKEWED.size
    z_crit = stats.norm.ppf(1 - 0.01 / (2 * n * len(SCHEMES)))  # Bonferroni, 1% family-wise
    bound = n * SKEWED * (1 - SKEWED)  # multinomial variance bounds every scheme
    for s, c in skewed_counts.items():
        z = (c.mean(axis=0) - n * SKEWED) / np.sqrt(bound / R)
        assert np.all(np.abs(z) < z_crit), (s, z)


def _one_sided_less(a, b):
    """p-value of H0: E[a] >= E[b] against E[a] < E[b] (Welch z)."""
    z = (a.mean() - b.mean()) / np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    return stats.norm.cdf(z)


def test_variance_ordering(skewed_counts):
    n = SKEWED.size
    dev = {s: ((c - n * SKEWED) ** 2).sum(axis=1) for s, c in skewed_counts.items()}
    M, Rs, St, Sy = (dev[s] for s in SCHEMES)
    assert _one_sided_less(Rs, M) < 0.01
    assert _one_sided_less(St, Rs) < 0.01
    assert _one_sided_less(Sy, Rs) < 0.01


def test_s_phase_groups_stay_isolated():
    model = ConjugateNormalModel()
    ps = init_particles(model, 3, 50, 2)
    ps.theta[:, :, 0] += 100.0 * np.arange(3)[:, None]  # tag each group
    c_phase_step(ps, model, 0.3)
    ps.cycle = 1
    s_phase(ps, "residual", 5)
    assert ps.theta.shape == (3, 50, 1)
    for j in range(3):
        assert np.all(np.abs(ps.theta[j, :, 0] - 100.0 * j) < 10)
    assert np.all(ps.log_weight == 0)


def test_groups_use_distinct_streams():
    model = ConjugateNormalModel()
    ps = init_particles(model, 2, 64, 2)
    ps.theta[1] = ps.theta[0]
    ps.log_weight[:] = np.linspace(-3, 0, 64)
    ps.cycle = 1
    s_phase(ps, "multinomial", 5)
    assert not np.array_equal(ps.theta[0], ps.theta[1])


def test_s_phase_keeps_loglik_aligned():
    model = ConjugateNormalModel()
    ps = init_particles(model, 2, 40, 3)
    for y in (0.4, -0.2, 1.1):
        c_phase_step(ps, model, y)
    ps.cycle = 1
    s_phase(ps, "residual", 1)
    ll, _ = model.loglik(ps.flat_theta(), np.array([0.4, -0.2, 1.1]))
    assert np.allclose(ps.loglik.ravel(), ll, rtol=1e-12)


def test_scheme_codes_round_trip():
    for s in SCHEMES:
        assert ResampleScheme.from_code(s.code) is s


@settings(max_examples=50, deadline=None)
@given(w=st.lists(st.floats(0, 10), min_size=1, max_size=30).filter(lambda v: sum(v) > 1e-6),
       scheme=st.sampled_from(SCHEMES), r=st.integers(0, 1000))
def test_ancestors_valid(w, scheme, r):
    w = np.array(w)
    anc = resample_group(w, scheme, _stream(r))
    assert anc.size == w.size
    assert np.all((anc >= 0) & (anc < w.size))
    assert np.all(w[anc] > 0)
