"""M phase: Gaussian Metropolis sweeps over the whole parameter vector.

Proposal variance at iteration r of cycle l is h^2 times the sample
covariance of the current population. The stepsize h moves by 0.1 after
every sweep towards a 0.25 acceptance rate and stays in [0.1, 1.0].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import nse_from_group_means
from .particles import ModelSpec, ParticleSystem
from .rng import Phase, StreamBatch

__all__ = [
    "StepsizeState",
    "MPhaseRule",
    "MutationRecord",
    "ProposalKind",
    "proposal_covariance",
    "factor",
    "metropolis_sweep",
    "adapt_stepsize",
    "test_function_rne",
    "m_phase",
]

H_MIN, H_MAX, H_INIT, H_STEP = 0.1, 1.0, 0.5, 0.1
TARGET_ACCEPTANCE = 0.25
JITTER = 1e-10


class ProposalKind(enum.IntEnum):
    RANDOM_WALK = 0
    INDEPENDENCE = 1  # experimental; fragile on irregular posteriors


@dataclass
class StepsizeState:
    h: float = H_INIT

    def __post_init__(self):
        if not H_MIN - 1e-12 <= self.h <= H_MAX + 1e-12:
            raise ValueError(f"stepsize {self.h} outside [{H_MIN}, {H_MAX}]")


@dataclass(frozen=True)
class MPhaseRule:
    kind: str = "rne"  # "deterministic" or "rne"
    rbar: int = 7
    kappa: int = 3
    d1: float = 0.50
    d2: float = 0.20
    e1: float = 0.35
    e2: float = 0.90
    rmax: int = 100

    def __post_init__(self):
        if self.kind not in ("deterministic", "rne"):
            raise ValueError(f"unknown M-phase rule {self.kind!r}")
        if not 0 < self.d2 <= self.d1 < 1:
            raise ValueError("need 0 < D2 <= D1 < 1")
        if not 0 < self.e1 <= self.e2 <= 1:
            raise ValueError("need 0 < E1 <= E2 <= 1")
        if self.rmax < 1 or self.rbar < 0 or self.kappa < 1:
            raise ValueError("need Rmax >= 1, Rbar >= 0, kappa >= 1")

    def deterministic_iterations(self, rss_at_entry: float) -> int:
        return self.kappa * self.rbar if rss_at_entry < self.d2 else self.rbar


@dataclass
class MutationRecord:
    cycle: int
    covariances: list[np.ndarray] = field(default_factory=list)
    stepsizes: list[float] = field(default_factory=list)
    acceptance: list[float] = field(default_factory=list)
    means: list[np.ndarray] = field(default_factory=list)
    rne: list[list[float]] = field(default_factory=list)
    kind: ProposalKind = ProposalKind.RANDOM_WALK

    @property
    def iterations(self) -> int:
        return len(self.covariances)


def proposal_covariance(theta: np.ndarray, h: float) -> np.ndarray:
    """h^2 times the population sample covariance, plus a tiny ridge.

    ``theta`` is ``(P, k)`` or ``(J, N, k)``. The ridge is 1e-10 times the
    mean marginal variance (1e-10 absolute for a degenerate population); it
    keeps the factorisation valid after severe weight collapse.
    """
    x = np.asarray(theta, dtype=float)
    x = x.reshape(-1, x.shape[-1])
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite particle values")
    k = x.shape[1]
    # shifting by one particle is exact for a degenerate population
    V = np.atleast_2d(np.cov(x - x[0], rowvar=False, ddof=1))
    scale = np.trace(V) / k
    ridge = JITTER * (scale if scale > 0 else 1.0)
    S = h * h * V + ridge * np.eye(k)
    return 0.5 * (S + S.T)


def factor(sigma: np.ndarray) -> np.ndarray:
    """A matrix L with L L^T = sigma (Cholesky, eigen fallback for PSD input)."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _log_target(model, theta, y):
    lp = np.asarray(model.log_prior(theta), dtype=float)
    ok = np.isfinite(lp)
    ll = np.full(theta.shape[0], -np.inf)
    state = model.init_state(theta.shape[0])
    if ok.any():
        sub_ll, sub_state = model.loglik(theta[ok], y)
        ll[ok] = sub_ll
        state[ok] = sub_state
    ll = np.where(np.isnan(ll), -np.inf, ll)
    return lp, ll, state


def metropolis_sweep(system: ParticleSystem, model: ModelSpec, y, sigma, streams: StreamBatch,
                     kind: ProposalKind = ProposalKind.RANDOM_WALK, mean=None) -> float:
    """One Metropolis update of every particle (in place); returns acceptance rate.

    The proposal log-likelihood is a full scan of ``y`` (= y_{1:t}); accepted
    particles take the fresh log-likelihood and model state.
    """
    theta = system.flat_theta()
    P, k = theta.shape
    L = factor(sigma)
    z = streams.normal(k)
    log_u = np.log(streams.uniform(1)[:, 0])
    if kind == ProposalKind.RANDOM_WALK:
        prop = theta + z @ L.T
        log_q_ratio = 0.0
    else:
        mean = np.zeros(k) if mean is None else np.asarray(mean, dtype=float)
        prop = mean + z @ L.T
        log_q_ratio = _gauss_kernel(theta, mean, L) - _gauss_kernel(prop, mean, L)

    lp_cur = np.asarray(model.log_prior(theta), dtype=float)
    ll_cur = system.loglik.ravel()
    lp_new, ll_new, state_new = _log_target(model, prop, y)
    with np.errstate(invalid="ignore"):
        log_alpha = (lp_new + ll_new) - (lp_cur + ll_cur) + log_q_ratio
    log_alpha = np.where(np.isnan(log_alpha), -np.inf, log_alpha)
    accept = log_u < log_alpha
    # identical proposals are always accepted (degenerate zero-variance case)
    accept |= np.all(prop == theta, axis=1)

    flat_state = system.flat_state()
    theta[accept] = prop[accept]
    flat_state[accept] = state_new[accept]
    ll_flat = system.loglik.reshape(-1)
    ll_flat[accept] = ll_new[accept]
    system.theta = theta.reshape(system.theta.shape)
    system.state = flat_state.reshape(system.state.shape)
    return float(accept.mean())


def _gauss_kernel(x, mean, L):
    sol = np.linalg.solve(L, (x - mean).T) if np.all(np.diag(L) > 0) else np.linalg.lstsq(L, (x - mean).T, rcond=None)[0]
    return -0.5 * np.sum(sol * sol, axis=0)


def adapt_stepsize(state: StepsizeState, acceptance_rate: float) -> StepsizeState:
    if not 0.0 <= acceptance_rate <= 1.0:
        raise ValueError("acceptance rate must lie in [0, 1]")
    step = H_STEP if acceptance_rate > TARGET_ACCEPTANCE else -H_STEP
    return StepsizeState(round(min(H_MAX, max(H_MIN, state.h + step)), 10))


def test_function_rne(system: ParticleSystem, model: ModelSpec) -> list[float]:
    """RNE of each model test function on the current equally weighted population."""
    out = []
    funcs = model.test_functions(system.flat_theta(), system.flat_state())
    for name in model.test_function_names:
        g = np.asarray(funcs[name], dtype=float).reshape(system.J, system.N)
        if not np.all(np.isfinite(g)):
            out.append(float("nan"))
            continue
        vhat, _ = nse_from_group_means(g.mean(axis=1), system.N)
        out.append(float(np.var(g, ddof=1) / vhat) if vhat > 0 else float("nan"))
    return out


def mean_rne(values) -> float:
    """Arithmetic mean over defined RNEs; +inf when none is defined."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return float(v.mean()) if v.size else float("inf")


def m_phase(system: ParticleSystem, model: ModelSpec, y, rule: MPhaseRule, rss_at_entry: float,
            forced: bool, master_seed: int, stepsize: StepsizeState | None = None,
            replay: MutationRecord | None = None,
            kind: ProposalKind = ProposalKind.RANDOM_WALK) -> tuple[MutationRecord, StepsizeState]:
    """Run the M phase of the current cycle (in place).

    Adaptive use computes each proposal covariance from the population and
    stops by ``rule``. With ``replay`` the covariances and iteration count are
    read from a frozen record instead and nothing adapts.
    """
    stepsize = stepsize or StepsizeState()
    cycle = system.cycle
    if replay is not None:
        record = MutationRecord(cycle=cycle, kind=replay.kind)
        for r, sigma in enumerate(replay.covariances, start=1):
            streams = StreamBatch.for_population(master_seed, Phase.M, cycle, r, system.J, system.N)
            mean = replay.means[r - 1] if replay.means else None
            acc = metropolis_sweep(system, model, y, sigma, streams, replay.kind, mean)
            record.covariances.append(np.asarray(sigma, dtype=float))
            record.stepsizes.append(replay.stepsizes[r - 1] if replay.stepsizes else float("nan"))
            record.means.append(np.zeros(system.k) if mean is None else np.asarray(mean, dtype=float))
            record.acceptance.append(acc)
            record.rne.append(test_function_rne(system, model))
        return record, stepsize

    record = MutationRecord(cycle=cycle, kind=kind)
    if rule.kind == "deterministic":
        max_iter = rule.deterministic_iterations(rss_at_entry)
        threshold = None
    else:
        max_iter = rule.rmax
        threshold = rule.e2 if forced else rule.e1
    for r in range(1, max_iter + 1):
        theta = system.flat_theta()
        if kind == ProposalKind.RANDOM_WALK:
            sigma = proposal_covariance(theta, stepsize.h)
            mean = np.zeros(system.k)
        else:
            sigma = proposal_covariance(theta, 1.0)
            mean = theta.mean(axis=0)
        streams = StreamBatch.for_population(master_seed, Phase.M, cycle, r, system.J, system.N)
        acc = metropolis_sweep(system, model, y, sigma, streams, kind, mean)
        record.covariances.append(sigma)
        record.stepsizes.append(stepsize.h)
        record.means.append(mean)
        record.acceptance.append(acc)
        rnes = test_function_rne(system, model)
        record.rne.append(rnes)
        stepsize = adapt_stepsize(stepsize, acc)
        if threshold is not None and mean_rne(rnes) >= threshold:
            break
    return record, stepsize
