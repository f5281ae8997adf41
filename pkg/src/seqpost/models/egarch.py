"""EGARCH(K, I): K additive log-volatility factors, I-component normal mixture shocks.

    v_kt = alpha_k v_k,t-1 + beta_k (|e_t-1| - sqrt(2/pi)) + gamma_k e_t-1
    y_t  = mu_Y + sigma_Y exp(sum_k v_kt / 2) e_t,   e_t ~ sum_i p_i N(mu_i, sigma_i^2)

with the mixture normalised to mean 0 and variance 1. The simulator works on
an unconstrained vector

    [t1, t2, t3_1..K, t4_1..K, t5_1..K, t6_1..I, t7_1..I, t8_1..I]

with independent Gaussian priors; t8 is truncated below at -3, which bounds
the likelihood. Particle state is ``[v_1 .. v_K, e_t]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from .. import _accel
from .._accel import prange
from ..particles import ModelSpec

_LOG_2PI = float(np.log(2.0 * np.pi))
SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
T8_LOWER = -3.0
LOSS_THRESHOLD = -0.03


@dataclass
class EgarchParams:
    """Natural parameters; every field has a leading particle axis."""

    mu_y: np.ndarray  # (P,)
    sigma_y: np.ndarray  # (P,)
    alpha: np.ndarray  # (P, K)
    beta: np.ndarray  # (P, K)
    gamma: np.ndarray  # (P, K)
    p: np.ndarray  # (P, I)
    mu: np.ndarray  # (P, I)
    sigma: np.ndarray  # (P, I)

    @classmethod
    def single(cls, mu_y, sigma_y, alpha, beta, gamma, p, mu, sigma) -> "EgarchParams":
        row = lambda v: np.atleast_1d(np.asarray(v, dtype=float))[None, :]
        return cls(np.array([float(mu_y)]), np.array([float(sigma_y)]), row(alpha), row(beta),
                   row(gamma), row(p), row(mu), row(sigma))

    def __getitem__(self, idx) -> "EgarchParams":
        return EgarchParams(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    @property
    def K(self) -> int:
        return self.alpha.shape[1]

    @property
    def I(self) -> int:
        return self.p.shape[1]


def theta_layout(K: int, I: int) -> dict[str, slice]:
    s = {}
    s["t1"] = slice(0, 1)
    s["t2"] = slice(1, 2)
    s["t3"] = slice(2, 2 + K)
    s["t4"] = slice(2 + K, 2 + 2 * K)
    s["t5"] = slice(2 + 2 * K, 2 + 3 * K)
    o = 2 + 3 * K
    s["t6"] = slice(o, o + I)
    s["t7"] = slice(o + I, o + 2 * I)
    s["t8"] = slice(o + 2 * I, o + 3 * I)
    return s


def prior_moments(K: int, I: int) -> tuple[np.ndarray, np.ndarray]:
    mean = np.concatenate([[0.0, np.log(0.01)], np.full(K, np.arctanh(0.95)), np.full(K, np.log(0.10)),
                           np.zeros(K), np.zeros(3 * I)])
    sd = np.concatenate([[1.0, 1.0], np.ones(K), np.ones(K), np.full(K, 0.2), np.ones(3 * I)])
    return mean, sd


def _canonical_order(theta, *blocks):
    """Sort factor (or mixture) triplets lexicographically within each row.

    Relabelling components does not change the model; a fixed order makes
    every floating point sum, and so the likelihood, exactly label invariant.
    """
    keys = [theta[:, b] for b in blocks]
    order = np.lexsort(keys[::-1], axis=-1)
    return [np.take_along_axis(k, order, axis=1) for k in keys]


def egarch_transform(theta: np.ndarray, K: int, I: int) -> EgarchParams:
    """Map unconstrained ``(P, k)`` vectors to normalised model parameters."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    s = theta_layout(K, I)
    t3, t4, t5 = _canonical_order(theta, s["t3"], s["t4"], s["t5"])
    t6, t7, t8 = _canonical_order(theta, s["t6"], s["t7"], s["t8"])
    p_star = np.tanh(t6) + 1.0
    mu_star = t7
    sigma_star = np.exp(t8)
    p = p_star / p_star.sum(axis=1, keepdims=True)
    mu_ss = mu_star - np.sum(p * mu_star, axis=1, keepdims=True)
    c = 1.0 / np.sqrt(np.sum(p * (mu_ss ** 2 + sigma_star ** 2), axis=1, keepdims=True))
    return EgarchParams(
        mu_y=theta[:, 0] / 1000.0,
        sigma_y=np.exp(theta[:, 1]),
        alpha=np.tanh(t3),
        beta=np.exp(t4),
        gamma=t5,
        p=p, mu=c * mu_ss, sigma=c * sigma_star,
    )


def egarch_step(params: EgarchParams, state: np.ndarray, y_t: float):
    """Vectorised one-observation update: (log density, new state)."""
    K = params.K
    v_prev, e_prev = state[:, :K], state[:, K:K + 1]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        v = params.alpha * v_prev + params.beta * (np.abs(e_prev) - SQRT_2_OVER_PI) + params.gamma * e_prev
        log_h = np.log(params.sigma_y) + 0.5 * v.sum(axis=1)
        h = np.exp(log_h)
        e = (y_t - params.mu_y) / h
        z = (e[:, None] - params.mu) / params.sigma
        comp = np.log(params.p) - np.log(params.sigma) - 0.5 * z * z
        ld = -0.5 * _LOG_2PI - log_h + logsumexp(comp, axis=1)
    new_state = np.concatenate([v, e[:, None]], axis=1)
    bad = ~np.isfinite(ld) | ~np.all(np.isfinite(new_state), axis=1)
    ld = np.where(bad, -np.inf, ld)
    return ld, new_state


def _scan_numpy(params: EgarchParams, y: np.ndarray):
    P = params.mu_y.shape[0]
    state = np.zeros((P, params.K + 1))
    total = np.zeros(P)
    for y_t in y:
        ld, state = egarch_step(params, state, y_t)
        total += ld
    return total, state


@_accel.njit(parallel=True)
def _scan_numba(mu_y, sigma_y, alpha, beta, gamma, p, mu, sigma, y):
    P, K = alpha.shape
    I = p.shape[1]
    T = y.shape[0]
    total = np.zeros(P)
    state = np.zeros((P, K + 1))
    half_log_2pi = 0.5 * np.log(2.0 * np.pi)
    c = np.sqrt(2.0 / np.pi)
    for n in prange(P):
        v = np.zeros(K)
        logp = np.empty(I)
        for i in range(I):
            logp[i] = np.log(p[n, i]) - np.log(sigma[n, i])
        log_sy = np.log(sigma_y[n])
        e = 0.0
        acc = 0.0
        for t in range(T):
            vsum = 0.0
            for k in range(K):
                v[k] = alpha[n, k] * v[k] + beta[n, k] * (abs(e) - c) + gamma[n, k] * e
                vsum += v[k]
            log_h = log_sy + 0.5 * vsum
            e = (y[t] - mu_y[n]) / np.exp(log_h)
            top = -np.inf
            for i in range(I):
                z = (e - mu[n, i]) / sigma[n, i]
                term = logp[i] - 0.5 * z * z
                if term > top:
                    top = term
            s = 0.0
            for i in range(I):
                z = (e - mu[n, i]) / sigma[n, i]
                s += np.exp(logp[i] - 0.5 * z * z - top)
            ld = -half_log_2pi - log_h + top + np.log(s)
            if not np.isfinite(ld):
                acc = -np.inf
                break
            acc += ld
        total[n] = acc
        for k in range(K):
            state[n, k] = v[k]
        state[n, K] = e
    return total, state


def egarch_loglik(params: EgarchParams, y, use_numba: bool | None = None):
    """Full-sample log-likelihood per particle and the final state."""
    y = np.ascontiguousarray(y, dtype=float)
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    if not use_numba:
        return _scan_numpy(params, y)
    f = lambda a: np.ascontiguousarray(a, dtype=float)
    total, state = _scan_numba(f(params.mu_y), f(params.sigma_y), f(params.alpha), f(params.beta),
                               f(params.gamma), f(params.p), f(params.mu), f(params.sigma), y)
    # a particle that went non-finite keeps a partial state; the -inf density rejects it anyway
    return total, state


def next_log_scale(params: EgarchParams, state: np.ndarray) -> np.ndarray:
    """log h_{t+1} from the state at t."""
    K = params.K
    v, e = state[:, :K], state[:, K:K + 1]
    v_next = params.alpha * v + params.beta * (np.abs(e) - SQRT_2_OVER_PI) + params.gamma * e
    return np.log(params.sigma_y) + 0.5 * v_next.sum(axis=1)


def egarch_test_functions(params: EgarchParams, state: np.ndarray) -> dict[str, np.ndarray]:
    K = params.K
    g1 = np.log(params.sigma_y) + 0.5 * state[:, :K].sum(axis=1)
    g2 = np.sum(params.p * (params.mu ** 3 + 3.0 * params.mu * params.sigma ** 2), axis=1)
    h_next = np.exp(next_log_scale(params, state))
    z = ((LOSS_THRESHOLD - params.mu_y) / h_next)[:, None]
    g3 = np.sum(params.p * ndtr((z - params.mu) / params.sigma), axis=1)
    return {"log_volatility": g1, "skewness": g2, "loss_probability": g3}


def _draw_mixture(params: EgarchParams, u: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Mixture shocks from uniforms (component choice) and normals, both (P, m)."""
    cdf = np.cumsum(params.p, axis=1)
    comp = (u[:, :, None] > cdf[:, None, :]).sum(axis=2)
    comp = np.minimum(comp, params.I - 1)
    rows = np.arange(params.mu.shape[0])[:, None]
    return params.mu[rows, comp] + params.sigma[rows, comp] * z


def egarch_simulate(params: EgarchParams, T: int, stream) -> np.ndarray:
    """Simulate y_1..y_T for a single parameter set, starting from v=0, e=0."""
    params = params[0:1] if params.mu_y.shape[0] != 1 else params
    u = stream.uniform(T)[None, :]
    z = stream.normal(T)[None, :]
    shocks = _draw_mixture(params, u, z)[0]
    K = params.K
    v = np.zeros(K)
    e = 0.0
    y = np.empty(T)
    a, b, g = params.alpha[0], params.beta[0], params.gamma[0]
    for t in range(T):
        v = a * v + b * (abs(e) - SQRT_2_OVER_PI) + g * e
        e = shocks[t]
        y[t] = params.mu_y[0] + params.sigma_y[0] * np.exp(0.5 * v.sum()) * e
    return y


class EgarchModel(ModelSpec):
    test_function_names = ("log_volatility", "skewness", "loss_probability")

    def __init__(self, K: int = 1, I: int = 1):
        if K < 1 or I < 1:
            raise ValueError("EGARCH needs K >= 1 and I >= 1")
        self.K, self.I = int(K), int(I)
        self.k = 2 + 3 * self.K + 3 * self.I
        self.state_dim = self.K + 1
        self.name = f"egarch({self.K},{self.I})"
        self.prior_mean, self.prior_sd = prior_moments(self.K, self.I)
        self._t8 = theta_layout(self.K, self.I)["t8"]
        # log P(Z > -3) per truncated coordinate
        self._log_trunc_mass = float(np.log(ndtr(-T8_LOWER)))

    def hyperparameters(self):
        return {"K": self.K, "I": self.I}

    def transform(self, theta) -> EgarchParams:
        return egarch_transform(theta, self.K, self.I)

    def sample_prior(self, streams):
        theta = self.prior_mean + self.prior_sd * streams.normal(self.k)
        bad = theta[:, self._t8] < T8_LOWER
        while bad.any():
            fresh = streams.normal(self.I)
            block = theta[:, self._t8]
            block[bad] = fresh[bad]
            theta[:, self._t8] = block
            bad = block < T8_LOWER
        return theta

    def log_prior(self, theta):
        theta = np.atleast_2d(theta)
        z = (theta - self.prior_mean) / self.prior_sd
        lp = np.sum(-0.5 * z * z - np.log(self.prior_sd) - 0.5 * _LOG_2PI, axis=1)
        lp -= self.I * self._log_trunc_mass
        return np.where(np.all(theta[:, self._t8] >= T8_LOWER, axis=1), lp, -np.inf)

    def init_state(self, n):
        return np.zeros((n, self.state_dim))

    def log_cond_density(self, theta, state, y_t):
        return egarch_step(self.transform(theta), state, y_t)

    def loglik(self, theta, y):
        return egarch_loglik(self.transform(theta), y)

    def test_functions(self, theta, state):
        return egarch_test_functions(self.transform(theta), state)

    def simulate_next(self, theta, state, streams, m=1):
        params = self.transform(theta)
        h = np.exp(next_log_scale(params, state))
        shocks = _draw_mixture(params, streams.uniform(m), streams.normal(m))
        return params.mu_y[:, None] + h[:, None] * shocks

    def simulate(self, theta, T: int, stream) -> np.ndarray:
        """Series from one unconstrained parameter vector."""
        theta = np.asarray(theta, dtype=float).reshape(1, self.k)
        return egarch_simulate(self.transform(theta), T, stream)
