"""Second-order moving-average process with autocovariance summaries."""

from __future__ import annotations

import numpy as np

from ..core import ContractViolation, ModelClass, ordered_sum

# noise[:, 0] is e_{-1}, noise[:, 1] is e_0 and noise[:, NOISE_OFFSET + l - 1] is e_l
NOISE_OFFSET = 2


def ma2_in_support(theta) -> bool:
    """Identifiability inequalities: -2 < t1 < 2, t1 + t2 > -1, t1 - t2 < 1.

    These bound t2 only from below; the model prior additionally closes the
    triangle with t2 < 1 (see ``Ma2Model.in_support``).
    """
    t1, t2 = np.asarray(theta, dtype=float)
    return bool(-2.0 < t1 < 2.0 and t1 + t2 > -1.0 and t1 - t2 < 1.0)


def ma2_output(theta, noise) -> np.ndarray:
    """x_l = e_l + t1 e_{l-1} + t2 e_{l-2} for l = 1..len(noise) - 2."""
    t1, t2 = np.asarray(theta, dtype=float)
    e = np.asarray(noise, dtype=float)
    return e[..., 2:] + t1 * e[..., 1:-1] + t2 * e[..., :-2]


def ma2_autocovariance(x, q: int) -> np.ndarray:
    """Raw lag-q autocovariance sum over the last axis."""
    x = np.asarray(x, dtype=float)
    if q < 1:
        raise ContractViolation(f"lag must be >= 1, got {q}")
    return ordered_sum(x[..., q:] * x[..., :-q])


def ma2_metric(summary_x, summary_y) -> np.ndarray:
    """Squared distance between lag-1 and lag-2 autocovariances."""
    diff = np.asarray(summary_y, dtype=float) - np.asarray(summary_x, dtype=float)
    return ordered_sum(diff * diff)


class Ma2Model(ModelClass):
    """MA(2) with a uniform prior on the identifiability triangle.

    The triangle is written as a uniform box (-2, 2) x (-1, 1) restricted by
    ``in_support``, so the component-wise kernel sees constant marginals.
    """

    name = "ma2"
    dim = 2

    def __init__(self, n_obs: int = 100, theta_true=None):
        if n_obs < 3:
            raise ContractViolation("MA(2) needs at least 3 observations")
        self.n_obs = int(n_obs)
        self.n_noise = self.n_obs + NOISE_OFFSET
        self.lower = np.array([-2.0, -1.0])
        self.upper = np.array([2.0, 1.0])
        self.theta_true = None if theta_true is None else np.asarray(theta_true, dtype=float)

    def sample_prior(self, gen, n):
        # uniform on the triangle with vertices (-2, 1), (2, 1), (0, -1)
        u = gen.random((n, 2))
        flip = u.sum(axis=1) > 1.0
        u[flip] = 1.0 - u[flip]
        a, b, c = np.array([0.0, -1.0]), np.array([-2.0, 1.0]), np.array([2.0, 1.0])
        return a + u[:, :1] * (b - a) + u[:, 1:] * (c - a)

    def component_density(self, i, values):
        values = np.asarray(values, dtype=float)
        inside = (values > self.lower[i]) & (values < self.upper[i])
        return np.where(inside, 1.0 / (self.upper[i] - self.lower[i]), 0.0)

    def in_support(self, thetas):
        """The identifiability inequalities plus the closing side t2 < 1."""
        thetas = np.atleast_2d(thetas)
        t1, t2 = thetas[:, 0], thetas[:, 1]
        return (t1 > -2.0) & (t1 < 2.0) & (t1 + t2 > -1.0) & (t1 - t2 < 1.0) & (t2 < 1.0)

    def draw_noise(self, gen, n):
        return gen.standard_normal((n, self.n_noise))

    def simulate_batch(self, thetas, noise):
        thetas = np.atleast_2d(thetas)
        e = np.atleast_2d(noise)
        return e[:, 2:] + thetas[:, :1] * e[:, 1:-1] + thetas[:, 1:] * e[:, :-2]

    def summary(self, xs):
        xs = np.atleast_2d(xs)
        return np.stack([ma2_autocovariance(xs, 1), ma2_autocovariance(xs, 2)], axis=1)

    def metric(self, sx, sy):
        return ma2_metric(np.atleast_2d(sx), sy)
