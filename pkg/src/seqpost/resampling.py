"""S phase: resampling each group in proportion to its weights.

Residual resampling is the default. Stratified and systematic resampling
are provided for experimentation only; there is no central limit theory
backing the NSE estimates when they are used.
"""

from __future__ import annotations

import enum

import numpy as np

from .particles import ParticleSystem, WeightCollapseError
from .rng import Phase, StreamKey, stream_for

__all__ = ["ResampleScheme", "resample_group", "counts_to_ancestors", "s_phase"]


class ResampleScheme(str, enum.Enum):
    MULTINOMIAL = "multinomial"
    RESIDUAL = "residual"
    STRATIFIED = "stratified"
    SYSTEMATIC = "systematic"

    @property
    def code(self) -> int:
        return list(ResampleScheme).index(self)

    @classmethod
    def from_code(cls, code: int) -> "ResampleScheme":
        return list(cls)[code]


def counts_to_ancestors(counts: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(counts.size), counts)


def _inverse_cdf(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, weights.size - 1)


def resample_group(weights, scheme=ResampleScheme.RESIDUAL, stream=None, size=None) -> np.ndarray:
    """Ancestor indices for one group.

    ``weights`` need not be normalised. ``stream`` is a ``RandomStream``;
    draws are consumed sequentially from it.
    """
    w = np.asarray(weights, dtype=float)
    scheme = ResampleScheme(scheme)
    if np.any(w < 0) or np.any(np.isnan(w)):
        raise ValueError("resampling weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise WeightCollapseError("resampling weights sum to zero")
    n = w.size if size is None else int(size)

    if scheme is ResampleScheme.MULTINOMIAL:
        return np.sort(_inverse_cdf(w, stream.uniform(n)))
    if scheme is ResampleScheme.RESIDUAL:
        expected = n * (w / total)
        counts = np.floor(expected).astype(np.int64)
        rest = n - counts.sum()
        if rest > 0:
            resid = expected - counts
            drawn = _inverse_cdf(resid, stream.uniform(rest))
            counts += np.bincount(drawn, minlength=w.size)
        return counts_to_ancestors(counts)
    if scheme is ResampleScheme.STRATIFIED:
        u = (np.arange(n) + stream.uniform(n)) / n
    else:
        u = (np.arange(n) + stream.uniform(1)[0]) / n
    return _inverse_cdf(w, u)


def s_phase(system: ParticleSystem, scheme, master_seed: int) -> ParticleSystem:
    """Resample every group independently (in place); weights reset to one."""
    J, N = system.J, system.N
    lw = system.log_weight
    for j in range(J):
        top = lw[j].max()
        if not np.isfinite(top):
            raise WeightCollapseError(f"group {j} has zero total weight at t={system.current_t}")
        stream = stream_for(StreamKey(master_seed, group=j, phase=Phase.S, cycle=system.cycle))
        anc = resample_group(np.exp(lw[j] - top), scheme, stream)
        system.theta[j] = system.theta[j, anc]
        system.state[j] = system.state[j, anc]
        system.loglik[j] = system.loglik[j, anc]
    system.log_weight[:] = 0.0
    return system
