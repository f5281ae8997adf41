"""Normal mean with known variance and a normal prior.

Everything about the posterior is available in closed form, which makes
this model the reference for checking the simulator's moments, evidence
and numerical standard errors.
"""

from __future__ import annotations

import numpy as np

from ..particles import ModelSpec

_LOG_2PI = np.log(2.0 * np.pi)


def conjugate_oracle(data, m0: float = 0.0, v0: float = 1.0, sigma2: float = 1.0) -> dict:
    """Exact posterior, log marginal likelihood and one-step predictive log densities."""
    if not (sigma2 > 0 and v0 > 0):
        raise ValueError("sigma2 and v0 must be positive")
    y = np.asarray(data, dtype=float)
    mean, var = float(m0), float(v0)
    pred = np.empty(y.size)
    means = np.empty(y.size)
    variances = np.empty(y.size)
    for s, ys in enumerate(y):
        pv = var + sigma2
        pred[s] = -0.5 * (_LOG_2PI + np.log(pv) + (ys - mean) ** 2 / pv)
        gain = var / pv
        mean = mean + gain * (ys - mean)
        var = var * sigma2 / pv
        means[s], variances[s] = mean, var
    return {
        "posterior_mean": mean,
        "posterior_var": var,
        "log_ml": float(pred.sum()),
        "log_predictive": pred,
        "posterior_means": means,
        "posterior_vars": variances,
    }


class ConjugateNormalModel(ModelSpec):
    name = "conjugate"
    k = 1
    state_dim = 0
    test_function_names = ("theta",)

    def __init__(self, sigma2: float = 1.0, m0: float = 0.0, v0: float = 1.0):
        if not (sigma2 > 0 and v0 > 0):
            raise ValueError("sigma2 and v0 must be positive")
        self.sigma2, self.m0, self.v0 = float(sigma2), float(m0), float(v0)

    def hyperparameters(self):
        return {"sigma2": self.sigma2, "m0": self.m0, "v0": self.v0}

    def sample_prior(self, streams):
        return self.m0 + np.sqrt(self.v0) * streams.normal(1)

    def log_prior(self, theta):
        x = theta[:, 0]
        return -0.5 * (_LOG_2PI + np.log(self.v0) + (x - self.m0) ** 2 / self.v0)

    def log_cond_density(self, theta, state, y_t):
        r = y_t - theta[:, 0]
        with np.errstate(over="ignore"):
            return -0.5 * (_LOG_2PI + np.log(self.sigma2) + r * r / self.sigma2), state

    def loglik(self, theta, y):
        y = np.asarray(y, dtype=float)
        r = y[None, :] - theta[:, :1]
        ll = -0.5 * (y.size * (_LOG_2PI + np.log(self.sigma2)) + np.sum(r * r, axis=1) / self.sigma2)
        return ll, self.init_state(theta.shape[0])

    def test_functions(self, theta, state):
        return {"theta": theta[:, 0].copy()}

    def simulate_next(self, theta, state, streams, m=1):
        return theta[:, :1] + np.sqrt(self.sigma2) * streams.normal(m)

    def simulate(self, theta: float, T: int, stream) -> np.ndarray:
        return theta + np.sqrt(self.sigma2) * stream.normal(T)
