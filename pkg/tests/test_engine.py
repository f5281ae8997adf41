import math

import numpy as np
import pytest
from scipy import stats

from seqpost import _accel
from seqpost.design import CycleDesign, DesignRecord
from seqpost.diagnostics import evidence_accumulate
from seqpost.engine import (DesignMismatchError, EngineConfig, config_hash, run_adaptive,
                            run_hybrid, run_nonadaptive, stopping_summary)
from seqpost.models import BimodalMixtureModel, ConjugateNormalModel, EgarchModel, conjugate_oracle
from seqpost.mutation import MPhaseRule, MutationRecord
from seqpost.particles import WeightCollapseError, init_particles, weighted_group_means
from seqpost.rng import Phase, RandomStream, StreamKey

import oracle_runs


def _moment(trace, name, t=None):
    t = trace.T if t is None else t
    return next(m for m in trace.moments if m.name == name and m.t == t)


def test_short_series_single_cycle():
    model = ConjugateNormalModel(v0=0.01)
    system, design, trace = run_adaptive(model, [0.1, -0.2], EngineConfig(J=4, N=64, master_seed=1))
    assert trace.L == 1 and design.boundaries == [2]


def test_adaptive_posterior_mean(conjugate, conjugate_data):
    exact = conjugate_oracle(conjugate_data)["posterior_mean"]
    _, _, trace = run_adaptive(conjugate, conjugate_data, EngineConfig(J=16, N=512, master_seed=2))
    m = _moment(trace, "theta")
    assert abs(m.mean - exact) < 4 * m.nse


def test_trace_postconditions(conjugate, conjugate_data):
    system, design, trace = run_adaptive(conjugate, conjugate_data,
                                         EngineConfig(J=8, N=128, master_seed=3, forced_dates=(30,)))
    rss = trace.rss
    assert np.all((rss > 0) & (rss <= 1 + 1e-12))
    covered = []
    for c in trace.cycles:
        covered.extend(range(c.t_start + 1, c.t_end + 1))
        if not c.forced:
            assert c.rss_at_end < 0.5
        assert c.resampled
        # the C phase stops at the first crossing
        assert np.all(rss[c.t_start:c.t_end - 1] >= 0.5)
    assert covered == list(range(1, trace.T + 1))
    assert 30 in design.boundaries
    assert system.equally_weighted() and system.current_t == trace.T


def test_replay_same_seed_bit_identical(conjugate, conjugate_data):
    _, design, _ = run_adaptive(conjugate, conjugate_data, EngineConfig(J=4, N=64, master_seed=4))
    a_sys, a = run_nonadaptive(conjugate, conjugate_data, design, 99)
    b_sys, b = run_nonadaptive(conjugate, conjugate_data, design, 99)
    assert np.array_equal(a_sys.theta, b_sys.theta)
    assert [m.to_dict() for m in a.moments] == [m.to_dict() for m in b.moments]


def test_replay_executes_the_design(conjugate, conjugate_data):
    _, design, trace1 = run_adaptive(conjugate, conjugate_data, EngineConfig(J=8, N=128, master_seed=5))
    _, trace2 = run_nonadaptive(conjugate, conjugate_data, design, 6)
    assert [(c.t_end, c.iterations) for c in trace1.cycles] == [(c.t_end, c.iterations) for c in trace2.cycles]
    assert [(c.t_end, c.iterations) for c in design.cycles] == [(c.t_end, c.iterations) for c in trace2.cycles]


def test_replay_evidence_consistent(conjugate, conjugate_data):
    h = run_hybrid(conjugate, conjugate_data, EngineConfig(J=16, N=512, master_seed=7))
    e1, e2 = h.step1.evidence, h.step2.evidence
    assert abs(e1.log_ml - e2.log_ml) < 4 * math.hypot(e1.nse_log_ml, e2.nse_log_ml)
    assert _moment(h.step2.trace, "theta").nse > 0


def test_pure_importance_sampling_design(conjugate, conjugate_data):
    J, N, T = 4, 256, conjugate_data.size
    design = DesignRecord(
        model_id=conjugate.name, J=J, N=N, k=1, T=T,
        config_hash=config_hash(conjugate, conjugate_data, J, N, "residual"),
        master_seed=0, step2_seed=11, moment_dates=[T],
        cycles=[CycleDesign(T, False, False, MutationRecord(cycle=1))])
    system, trace = run_nonadaptive(conjugate, conjugate_data, design)
    m = _moment(trace, "theta")
    assert m.weighted
    prior = init_particles(conjugate, J, N, 11)
    ll, _ = conjugate.loglik(prior.flat_theta(), conjugate_data)
    _, grand = weighted_group_means(ll.reshape(J, N), prior.theta[:, :, 0])
    assert m.mean == pytest.approx(grand, rel=1e-12)


def test_design_mismatches_fail_fast(conjugate, conjugate_data):
    _, design, _ = run_adaptive(conjugate, conjugate_data, EngineConfig(J=4, N=64, master_seed=8))
    with pytest.raises(DesignMismatchError, match="config hash"):
        run_nonadaptive(conjugate, conjugate_data + 1e-9, design)
    with pytest.raises(DesignMismatchError, match="T="):
        run_nonadaptive(conjugate, conjugate_data[:-1], design)
    with pytest.raises(DesignMismatchError, match="model"):
        run_nonadaptive(BimodalMixtureModel(), conjugate_data, design)
    with pytest.raises(DesignMismatchError, match="config hash"):
        run_nonadaptive(ConjugateNormalModel(v0=2.0), conjugate_data, design)


def test_config_validation():
    with pytest.raises(ValueError, match="J must be"):
        EngineConfig(J=1)
    with pytest.raises(ValueError):
        EngineConfig(rss_threshold=1.5)
    with pytest.raises(ValueError, match="outside"):
        run_adaptive(ConjugateNormalModel(), [0.1, 0.2], EngineConfig(J=2, N=4, forced_dates=(5,)))


def test_weight_collapse_propagates():
    class Picky(ConjugateNormalModel):
        def log_cond_density(self, theta, state, y_t):
            if y_t > 10:
                return np.full(theta.shape[0], -np.inf), state
            return super().log_cond_density(theta, state, y_t)

    with pytest.raises(WeightCollapseError, match="s=3"):
        run_adaptive(Picky(), [0.1, 0.2, 50.0], EngineConfig(J=2, N=8))


def test_moment_dates_force_cycles(conjugate, conjugate_data):
    cfg = EngineConfig(J=4, N=64, master_seed=9, moment_dates=(10, 60))
    _, design, trace = run_adaptive(conjugate, conjugate_data, cfg)
    assert {10, 60} <= set(design.boundaries)
    dates = sorted({m.t for m in trace.moments})
    assert dates == [10, 60, 100]
    final = _moment(trace, "theta", 100)
    assert final.weighted  # T was not requested, so the run ends mid C phase
    exact = conjugate_oracle(conjugate_data[:60])["posterior_mean"]
    m60 = _moment(trace, "theta", 60)
    assert not m60.weighted and abs(m60.mean - exact) < 5 * m60.nse


def test_stopping_summary_deterministic_rule(conjugate, conjugate_data):
    rule = MPhaseRule(kind="deterministic")
    _, _, trace = run_adaptive(conjugate, conjugate_data, EngineConfig(J=4, N=64, master_seed=10, rule=rule))
    for row in stopping_summary(trace, rule):
        assert row["sweeps"] == row["deterministic_target"]


def test_numba_switch_does_not_change_results(conjugate, conjugate_data, monkeypatch):
    cfg = EngineConfig(J=4, N=64, master_seed=12)
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    a, _, _ = run_adaptive(conjugate, conjugate_data, cfg)
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    b, _, _ = run_adaptive(conjugate, conjugate_data, cfg)
    assert np.array_equal(a.theta, b.theta)


def test_egarch_hybrid_small():
    model = EgarchModel(1, 1)
    mean, _ = model.prior_mean, None
    y = model.simulate(mean, 150, RandomStream(StreamKey(3, phase=Phase.AUX)))
    h = run_hybrid(model, y, EngineConfig(J=4, N=128, master_seed=3, rule=MPhaseRule(kind="deterministic", rbar=2)))
    for step in (h.step1, h.step2):
        assert np.isfinite(step.evidence.log_ml)
        names = {m.name for m in step.trace.moments}
        assert names == {"log_volatility", "skewness", "loss_probability"}


# -- properties over many seeded runs of the oracle model --------------------

def test_student_t_pivot_coverage():
    runs = oracle_runs.runs(200)
    exact = oracle_runs.EXACT["posterior_mean"]
    crit = stats.t.ppf(0.975, oracle_runs.J - 1)
    pivots = np.array([(r.mean2 - exact) / r.nse2 for r in runs])
    coverage = np.mean(np.abs(pivots) < crit)
    assert abs(coverage - 0.95) <= 0.04, coverage


def test_group_means_uncorrelated_across_groups():
    runs = oracle_runs.runs(200)
    G = np.array([r.group_means2 for r in runs])  # (runs, J)
    C = np.corrcoef(G, rowvar=False)
    off = C[~np.eye(C.shape[0], dtype=bool)]
    assert np.max(np.abs(off)) < 0.2, np.max(np.abs(off))
    assert abs(off.mean()) < 0.05
