"""Cycle orchestration: adaptive runs, design replay, and the two-pass hybrid.

Each cycle adds observations to the particle weights (C phase) until the
relative sample size drops below the threshold, a forced date is reached,
or the data run out; then resamples within groups (S phase) and applies
Metropolis sweeps (M phase). The adaptive run records every decision it
makes in a ``DesignRecord``; replaying that record with a fresh seed gives
a nonadaptive run with the same cycle structure.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .design import CycleDesign, DesignRecord
from .diagnostics import EvidenceReport, MomentReport, evidence_accumulate, moment_report, pit
from .mutation import MPhaseRule, MutationRecord, ProposalKind, StepsizeState, m_phase, mean_rne
from .particles import (ModelSpec, ParticleSystem, c_phase_step, init_particles,
                        log_group_mean_weights, rss)
from .resampling import ResampleScheme, s_phase
from .rng import Phase, StreamBatch, derive_seed

__all__ = [
    "EngineConfig",
    "CycleTrace",
    "RunTrace",
    "RunOutcome",
    "HybridReport",
    "DesignMismatchError",
    "config_hash",
    "run_adaptive",
    "run_nonadaptive",
    "run_hybrid",
]


class DesignMismatchError(ValueError):
    pass


@dataclass
class EngineConfig:
    J: int = 16
    N: int = 512
    master_seed: int = 0
    rss_threshold: float = 0.5
    rule: MPhaseRule = field(default_factory=MPhaseRule)
    resampler: ResampleScheme = ResampleScheme.RESIDUAL
    proposal: ProposalKind = ProposalKind.RANDOM_WALK
    forced_dates: tuple[int, ...] = ()
    moment_dates: tuple[int, ...] | None = None  # None means (T,)
    t_burn: int | None = None
    pit: bool = False
    step2_seed: int | None = None

    def __post_init__(self):
        self.resampler = ResampleScheme(self.resampler)
        self.proposal = ProposalKind(self.proposal)
        if self.J < 2:
            raise ValueError(f"J must be at least 2 (NSE needs two groups), got {self.J}")
        if self.N < 2:
            raise ValueError(f"N must be at least 2, got {self.N}")
        if not 0.0 < self.rss_threshold < 1.0:
            raise ValueError(f"RSS threshold must lie in (0, 1), got {self.rss_threshold}")

    def dates_for(self, T: int) -> tuple[list[int], list[int]]:
        moments = [T] if self.moment_dates is None else sorted(set(self.moment_dates))
        forced = sorted(set(self.forced_dates) | set(moments))
        for t in forced:
            if not 1 <= t <= T:
                raise ValueError(f"date {t} outside 1..{T}")
        if self.t_burn is not None and not 0 <= self.t_burn < T:
            raise ValueError(f"burn-in {self.t_burn} outside 0..{T - 1}")
        return forced, moments

    def seed2(self) -> int:
        return derive_seed(self.master_seed) if self.step2_seed is None else int(self.step2_seed)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["rule"] = dict(self.rule.__dict__)
        d["resampler"] = self.resampler.value
        d["proposal"] = self.proposal.name.lower()
        d["forced_dates"] = list(self.forced_dates)
        d["moment_dates"] = None if self.moment_dates is None else list(self.moment_dates)
        return d


@dataclass
class CycleTrace:
    cycle: int
    t_start: int
    t_end: int
    rss_at_end: float
    reason: str  # "threshold", "forced" or "end"
    forced: bool
    resampled: bool
    acceptance: list[float] = field(default_factory=list)
    stepsizes: list[float] = field(default_factory=list)
    rne: list[list[float]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.acceptance)


@dataclass
class RunTrace:
    T: int
    J: int
    N: int
    test_function_names: tuple[str, ...] = ()
    rss: np.ndarray = None
    log_group_mean_weight: np.ndarray = None  # (T, J)
    pit: np.ndarray = None
    cycles: list[CycleTrace] = field(default_factory=list)
    moments: list[MomentReport] = field(default_factory=list)
    timings: dict = field(default_factory=lambda: {"C": 0.0, "S": 0.0, "M": 0.0})

    def __post_init__(self):
        if self.rss is None:
            self.rss = np.full(self.T, np.nan)
        if self.log_group_mean_weight is None:
            self.log_group_mean_weight = np.full((self.T, self.J), np.nan)
        if self.pit is None:
            self.pit = np.full(self.T, np.nan)

    def cycle_bounds(self) -> list[tuple[int, int]]:
        return [(c.t_start, c.t_end) for c in self.cycles]

    @property
    def L(self) -> int:
        return len(self.cycles)

    @property
    def total_sweeps(self) -> int:
        return sum(c.iterations for c in self.cycles)

    def rne_rows(self):
        """(global iteration, cycle, t, RNE per test function) for every sweep."""
        it = 0
        for c in self.cycles:
            for r in c.rne:
                it += 1
                yield it, c.cycle, c.t_end, r


@dataclass
class RunOutcome:
    trace: RunTrace
    evidence: EvidenceReport
    system: ParticleSystem | None = None
    seed: int = 0


@dataclass
class HybridReport:
    design: DesignRecord
    step1: RunOutcome
    step2: RunOutcome


def config_hash(model: ModelSpec, y, J: int, N: int, resampler, proposal=ProposalKind.RANDOM_WALK) -> bytes:
    """Fingerprint of everything a replay must share with the run that made the design."""
    payload = {
        "model": model.name,
        "hyper": model.hyperparameters(),
        "k": model.k,
        "J": int(J),
        "N": int(N),
        "resampler": ResampleScheme(resampler).value,
        "proposal": int(proposal),
        "data": hashlib.sha256(np.ascontiguousarray(y, dtype="<f8").tobytes()).hexdigest(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).digest()


def _check_data(y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 1:
        raise ValueError("need at least one observation")
    if not np.all(np.isfinite(y)):
        raise ValueError("data contain non-finite values")
    return y


def _run(model, y, J, N, seed, *, rss_threshold, rule, resampler, proposal,
         forced_dates, moment_dates, pit_on, replay: DesignRecord | None):
    T = y.size
    clock = time.perf_counter
    trace = RunTrace(T, J, N, tuple(model.test_function_names))
    forced_set, moment_set = set(forced_dates), set(moment_dates)
    system = init_particles(model, J, N, seed)
    stepsize = StepsizeState()
    designs: list[CycleDesign] = []
    cycle = 0
    while system.current_t < T:
        cycle += 1
        system.cycle = cycle
        start = system.current_t
        target = replay.cycles[cycle - 1] if replay is not None else None

        tic = clock()
        while True:
            s = system.current_t + 1
            if pit_on:
                streams = StreamBatch.for_population(seed, Phase.AUX, cycle, s, J, N)
                trace.pit[s - 1] = pit(system, model, y[s - 1], streams)
            c_phase_step(system, model, y[s - 1])
            r = rss(system.log_weight)
            trace.rss[s - 1] = r
            trace.log_group_mean_weight[s - 1] = log_group_mean_weights(system.log_weight)
            forced = s in forced_set
            if target is not None:
                if s == target.t_end:
                    break
            elif r < rss_threshold or forced or s == T:
                break
        trace.timings["C"] += clock() - tic

        if target is not None:
            resample, forced = target.resampled, target.forced
        else:
            resample = r < rss_threshold or forced
        reason = "threshold" if r < rss_threshold else ("forced" if forced else "end")
        ct = CycleTrace(cycle, start, s, r, reason, forced, resample)

        record = None
        if resample:
            tic = clock()
            s_phase(system, resampler, seed)
            trace.timings["S"] += clock() - tic
            tic = clock()
            record, stepsize = m_phase(system, model, y[:s], rule, r, forced, seed, stepsize,
                                       replay=None if target is None else target.mutation, kind=proposal)
            trace.timings["M"] += clock() - tic
            ct.acceptance, ct.stepsizes, ct.rne = record.acceptance, record.stepsizes, record.rne
        if target is None:
            designs.append(CycleDesign(s, resample, forced, record or MutationRecord(cycle=cycle, kind=proposal)))
        trace.cycles.append(ct)

        if s in moment_set:
            trace.moments.extend(_moments(system, model, s))
    if T not in moment_set:
        trace.moments.extend(_moments(system, model, T))
    return system, trace, designs


def _moments(system: ParticleSystem, model: ModelSpec, t: int) -> list[MomentReport]:
    funcs = model.functions_of_interest(system.flat_theta(), system.flat_state())
    lw = None if system.equally_weighted() else system.log_weight
    return [moment_report(name, t, np.asarray(v).reshape(system.J, system.N), lw) for name, v in funcs.items()]


def run_adaptive(model: ModelSpec, data, config: EngineConfig):
    """Adaptive run. Returns ``(particles, design, trace)``."""
    y = _check_data(data)
    forced, moments = config.dates_for(y.size)
    system, trace, cycles = _run(
        model, y, config.J, config.N, config.master_seed,
        rss_threshold=config.rss_threshold, rule=config.rule, resampler=config.resampler,
        proposal=config.proposal, forced_dates=forced, moment_dates=moments,
        pit_on=config.pit, replay=None)
    design = DesignRecord(
        model_id=model.name, J=config.J, N=config.N, k=model.k, T=y.size,
        config_hash=config_hash(model, y, config.J, config.N, config.resampler, config.proposal),
        master_seed=config.master_seed, step2_seed=config.seed2(), resampler=config.resampler,
        proposal=config.proposal, forced_dates=[int(t) for t in config.forced_dates],
        moment_dates=moments, cycles=cycles)
    design.validate()
    return system, design, trace


def check_design(model: ModelSpec, y, design: DesignRecord) -> None:
    if design.model_id != model.name:
        raise DesignMismatchError(f"design is for model {design.model_id!r}, not {model.name!r}")
    if design.k != model.k:
        raise DesignMismatchError(f"design has k={design.k}, model has k={model.k}")
    if design.T != y.size:
        raise DesignMismatchError(f"design covers T={design.T} observations, data have {y.size}")
    if design.config_hash != config_hash(model, y, design.J, design.N, design.resampler, design.proposal):
        raise DesignMismatchError("config hash mismatch between design and this invocation")
    design.validate()


def run_nonadaptive(model: ModelSpec, data, design: DesignRecord, seed: int | None = None, *,
                    pit_on: bool = False):
    """Replay a frozen design with new randomness. Returns ``(particles, trace)``."""
    y = _check_data(data)
    check_design(model, y, design)
    seed = design.step2_seed if seed is None else int(seed)
    system, trace, _ = _run(
        model, y, design.J, design.N, seed,
        rss_threshold=0.5, rule=MPhaseRule(), resampler=design.resampler, proposal=design.proposal,
        forced_dates=sorted(set(design.forced_dates) | set(design.moment_dates)),
        moment_dates=design.moment_dates, pit_on=pit_on, replay=design)
    return system, trace


def run_hybrid(model: ModelSpec, data, config: EngineConfig) -> HybridReport:
    """Adaptive pass to learn the design, then a nonadaptive pass with a new seed."""
    y = _check_data(data)
    _, design, trace1 = run_adaptive(model, y, config)
    step1 = RunOutcome(trace1, evidence_accumulate(trace1, config.t_burn), None, config.master_seed)
    system2, trace2 = run_nonadaptive(model, y, design, design.step2_seed, pit_on=config.pit)
    step2 = RunOutcome(trace2, evidence_accumulate(trace2, config.t_burn), system2, design.step2_seed)
    return HybridReport(design, step1, step2)


def stopping_summary(trace: RunTrace, rule: MPhaseRule) -> list[dict]:
    """Per resampled cycle: sweeps run, what the rule called for, and final mean RNE."""
    out = []
    for c in trace.cycles:
        if not c.resampled:
            continue
        final = mean_rne(c.rne[-1]) if c.rne else float("nan")
        out.append({"cycle": c.cycle, "t": c.t_end, "rss": c.rss_at_end, "forced": c.forced,
                    "sweeps": c.iterations, "final_mean_rne": final,
                    "deterministic_target": rule.deterministic_iterations(c.rss_at_end)})
    return out
