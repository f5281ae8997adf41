"""Particle population, the model contract, and C-phase weight accounting.

Reductions over the population use numpy's pairwise summation on
C-contiguous arrays in a fixed layout, so they do not depend on how many
workers evaluated the per-particle work.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .rng import Phase, StreamBatch

__all__ = [
    "ModelSpec",
    "ModelError",
    "WeightCollapseError",
    "ParticleSystem",
    "init_particles",
    "c_phase_step",
    "rss",
    "log_group_mean_weights",
    "normalized_weights",
    "weighted_group_means",
    "save_snapshot",
    "load_snapshot",
]


class ModelError(RuntimeError):
    pass


class WeightCollapseError(RuntimeError):
    """Every particle (or every particle of one group) has zero weight."""


class ModelSpec:
    """Contract a model has to satisfy to be simulated.

    All methods are vectorised over a leading particle axis of length P:
    ``theta`` is ``(P, k)`` on the unconstrained scale, ``state`` is
    ``(P, state_dim)``. Subclasses must set ``name``, ``k`` and
    ``state_dim`` and implement ``sample_prior``, ``log_prior`` and
    ``log_cond_density``.
    """

    name: str = "model"
    k: int = 1
    state_dim: int = 0
    test_function_names: tuple[str, ...] = ()

    def hyperparameters(self) -> dict:
        return {}

    def sample_prior(self, streams: StreamBatch) -> np.ndarray:
        raise NotImplementedError

    def log_prior(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def init_state(self, n: int) -> np.ndarray:
        return np.zeros((n, self.state_dim))

    def log_cond_density(self, theta, state, y_t) -> tuple[np.ndarray, np.ndarray]:
        """log p(y_t | y_{1:t-1}, theta) and the advanced state."""
        raise NotImplementedError

    def loglik(self, theta, y) -> tuple[np.ndarray, np.ndarray]:
        """Full scan of ``y``: cumulative log-likelihood and the final state."""
        state = self.init_state(theta.shape[0])
        total = np.zeros(theta.shape[0])
        for y_t in y:
            ld, state = self.log_cond_density(theta, state, y_t)
            total += ld
        return total, state

    def test_functions(self, theta, state) -> dict[str, np.ndarray]:
        return {}

    def functions_of_interest(self, theta, state) -> dict[str, np.ndarray]:
        return self.test_functions(theta, state)

    def simulate_next(self, theta, state, streams: StreamBatch, m: int = 1) -> np.ndarray:
        """``(P, m)`` draws of the next observation given each particle."""
        raise NotImplementedError(f"model {self.name!r} has no one-step simulator")


@dataclass
class ParticleSystem:
    J: int
    N: int
    theta: np.ndarray  # (J, N, k)
    state: np.ndarray  # (J, N, state_dim)
    log_weight: np.ndarray  # (J, N)
    loglik: np.ndarray  # (J, N) cumulative log p(y_{1:t} | theta)
    current_t: int = 0
    cycle: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.theta.shape[2]

    @property
    def size(self) -> int:
        return self.J * self.N

    def flat_theta(self) -> np.ndarray:
        return self.theta.reshape(self.size, self.k)

    def flat_state(self) -> np.ndarray:
        return self.state.reshape(self.size, self.state.shape[2])

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(self.J, self.N, self.theta.copy(), self.state.copy(),
                              self.log_weight.copy(), self.loglik.copy(),
                              self.current_t, self.cycle, dict(self.meta))

    def equally_weighted(self) -> bool:
        return bool(np.all(self.log_weight == 0.0))


def _clean(ld: np.ndarray) -> np.ndarray:
    ld = np.asarray(ld, dtype=float)
    return np.where(np.isnan(ld) | (ld == np.inf), -np.inf, ld)


def init_particles(model: ModelSpec, J: int, N: int, master_seed: int) -> ParticleSystem:
    """i.i.d. prior draws, unit weights, fresh model state."""
    if J < 2 or N < 2:
        raise ValueError(f"need J >= 2 and N >= 2, got J={J}, N={N}")
    streams = StreamBatch.for_population(master_seed, Phase.INIT, 0, 0, J, N)
    try:
        theta = np.asarray(model.sample_prior(streams), dtype=float)
    except Exception as exc:
        raise ModelError(f"prior sampler of model {model.name!r} failed: {exc}") from exc
    if theta.shape != (J * N, model.k):
        raise ModelError(f"prior sampler returned shape {theta.shape}, expected {(J * N, model.k)}")
    state = model.init_state(J * N)
    return ParticleSystem(
        J=J, N=N,
        theta=theta.reshape(J, N, model.k),
        state=state.reshape(J, N, model.state_dim),
        log_weight=np.zeros((J, N)),
        loglik=np.zeros((J, N)),
    )


def c_phase_step(system: ParticleSystem, model: ModelSpec, y_s: float) -> ParticleSystem:
    """Add observation ``current_t + 1`` to every particle's weight (in place)."""
    ld, new_state = model.log_cond_density(system.flat_theta(), system.flat_state(), y_s)
    ld = _clean(ld).reshape(system.J, system.N)
    system.log_weight += ld
    system.loglik += ld
    system.state = np.asarray(new_state, dtype=float).reshape(system.state.shape)
    system.current_t += 1
    if not np.isfinite(system.log_weight).any():
        raise WeightCollapseError(f"total weight collapse at observation s={system.current_t}")
    return system


def rss(log_weight: np.ndarray) -> float:
    """Relative sample size ESS/(JN) from (unnormalised) log weights."""
    lw = np.asarray(log_weight, dtype=float).ravel()
    top = lw.max()
    if not np.isfinite(top):
        raise WeightCollapseError("all weights are zero")
    w = np.exp(lw - top)
    return float(w.sum() ** 2 / (lw.size * np.dot(w, w)))


def log_group_mean_weights(log_weight: np.ndarray) -> np.ndarray:
    """log of N^-1 sum_n w_jn for each group."""
    return logsumexp(log_weight, axis=1) - np.log(log_weight.shape[1])


def normalized_weights(log_weight: np.ndarray) -> np.ndarray:
    """Weights normalised over the full population (same shape as input)."""
    lw = np.asarray(log_weight, dtype=float)
    w = np.exp(lw - lw.max())
    return w / w.sum()


def weighted_group_means(log_weight: np.ndarray, values: np.ndarray):
    """Self-normalised group means of ``values`` (J, N) and their grand mean."""
    lw = np.asarray(log_weight, dtype=float)
    top = lw.max(axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    if dead.any():
        raise WeightCollapseError(f"group {int(np.flatnonzero(dead)[0])} has zero total weight")
    return _centered_weighted_means(np.exp(lw - top), values)


def _centered_weighted_means(w, values):
    # centring on each group's first value makes a constant function exact
    g = np.asarray(values, dtype=float)
    ref = g[:, :1]
    means = ref[:, 0] + (w * (g - ref)).sum(axis=1) / w.sum(axis=1)
    return means, float(means.mean())


# -- binary snapshot ---------------------------------------------------------
# Layout (little endian): int64 J, N, k, current_t, cycle; then float64 arrays
# theta (J,N,k), log_weight (J,N), loglik (J,N), state (J,N,d), row-major.
# The state width d is implied by the remaining byte count.

_SNAP_HEADER = struct.Struct("<5q")


def save_snapshot(system: ParticleSystem, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(system.J, system.N, system.k, system.current_t, system.cycle))
        for arr in (system.theta, system.log_weight, system.loglik, system.state):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_snapshot(path) -> ParticleSystem:
    raw = Path(path).read_bytes()
    if len(raw) < _SNAP_HEADER.size:
        raise ValueError("snapshot truncated in header")
    J, N, k, t, cycle = _SNAP_HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f8", offset=_SNAP_HEADER.size)
    fixed = J * N * (k + 2)
    rest = body.size - fixed
    if rest < 0 or rest % (J * N):
        raise ValueError("snapshot size inconsistent with header")
    d = rest // (J * N)
    theta, lw, ll, st = np.split(body, np.cumsum([J * N * k, J * N, J * N]))
    return ParticleSystem(J, N, theta.reshape(J, N, k).astype(float), st.reshape(J, N, d).astype(float),
                          lw.reshape(J, N).astype(float), ll.reshape(J, N).astype(float), t, cycle)
