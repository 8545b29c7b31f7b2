"""Analytic verification model: theta ~ U(0, 1), x = theta, rho = |x - y|.

With y = 0 the tolerance region has probability P(rho <= eps) = eps for
eps in [0, 1], and the conditional law given the region is U(0, eps).
"""

from __future__ import annotations

import numpy as np

from ..core import ModelClass


class ToyUniformModel(ModelClass):
    name = "toy"
    dim = 1
    n_obs = 1
    n_noise = 0

    def __init__(self, theta_true=None):
        self.lower = np.zeros(1)
        self.upper = np.ones(1)
        self.theta_true = None if theta_true is None else np.asarray(theta_true, dtype=float)

    def sample_prior(self, gen, n):
        return gen.random((n, 1))

    def component_density(self, i, values):
        values = np.asarray(values, dtype=float)
        return np.where((values >= 0.0) & (values <= 1.0), 1.0, 0.0)

    def in_support(self, thetas):
        thetas = np.atleast_2d(thetas)
        return (thetas[:, 0] >= 0.0) & (thetas[:, 0] <= 1.0)

    def draw_noise(self, gen, n):
        return np.zeros((n, 0))

    def simulate_batch(self, thetas, noise):
        return np.atleast_2d(thetas).astype(float, copy=True)

    def summary(self, xs):
        return np.atleast_2d(np.asarray(xs, dtype=float))

    def metric(self, sx, sy):
        return np.abs(np.atleast_2d(sx)[:, 0] - np.asarray(sy, dtype=float)[0])

    @staticmethod
    def observation() -> np.ndarray:
        return np.zeros(1)
