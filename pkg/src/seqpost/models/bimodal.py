"""Symmetric two-component location mixture: y ~ 0.5 N(theta, s2) + 0.5 N(-theta, s2).

The likelihood is invariant to theta -> -theta, so with a symmetric prior
the posterior has two mirror-image modes. Used to check that the particle
population keeps both modes populated.
"""

from __future__ import annotations

import numpy as np

from ..particles import ModelSpec

_LOG_2PI = np.log(2.0 * np.pi)


class BimodalMixtureModel(ModelSpec):
    name = "bimodal"
    k = 1
    state_dim = 0
    test_function_names = ("abs_theta",)

    def __init__(self, sigma2: float = 1.0, v0: float = 4.0):
        self.sigma2, self.v0 = float(sigma2), float(v0)

    def hyperparameters(self):
        return {"sigma2": self.sigma2, "v0": self.v0}

    def sample_prior(self, streams):
        return np.sqrt(self.v0) * streams.normal(1)

    def log_prior(self, theta):
        return -0.5 * (_LOG_2PI + np.log(self.v0) + theta[:, 0] ** 2 / self.v0)

    def _log_density(self, theta, y):
        a = -0.5 * (y - theta) ** 2 / self.sigma2
        b = -0.5 * (y + theta) ** 2 / self.sigma2
        return np.logaddexp(a, b) - np.log(2.0) - 0.5 * (_LOG_2PI + np.log(self.sigma2))

    def log_cond_density(self, theta, state, y_t):
        return self._log_density(theta[:, 0], y_t), state

    def loglik(self, theta, y):
        y = np.asarray(y, dtype=float)
        ll = self._log_density(theta[:, :1], y[None, :]).sum(axis=1)
        return ll, self.init_state(theta.shape[0])

    def test_functions(self, theta, state):
        return {"abs_theta": np.abs(theta[:, 0])}

    def functions_of_interest(self, theta, state):
        return {"theta": theta[:, 0].copy(), "abs_theta": np.abs(theta[:, 0])}

    def simulate(self, theta: float, T: int, stream) -> np.ndarray:
        sign = np.where(stream.uniform(T) < 0.5, 1.0, -1.0)
        return sign * theta + np.sqrt(self.sigma2) * stream.normal(T)
