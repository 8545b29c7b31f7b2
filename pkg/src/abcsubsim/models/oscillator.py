"""Single-degree-of-freedom linear oscillator observed through a discrete
state-space model with zero-order-hold input."""

from __future__ import annotations

import math

import numpy as np

from ..core import ContractViolation, ModelClass, RngLike, as_generator, ordered_sum

K_SCALE = 4.0 * math.pi  # k = K_SCALE * theta_1  [N/m]
C_SCALE = 0.4 * math.pi  # c = C_SCALE * theta_2  [N s/m]

# relative discriminant below which the repeated-eigenvalue series is used
_REPEATED_EIG_TOL = 1e-12


def _exp_2x2(m: float, k: float, c: float, dt: float) -> tuple[float, float, float, float]:
    """Entries of expm(Ac dt) for Ac = [[0, 1], [-k/m, -c/m]].

    With s the eigenvalue mean and M = Ac - s I, M @ M = disc * I, so
    expm(Ac t) = e^{s t} (C I + S M) where C, S are the even and odd parts of
    the scalar exponential in sqrt(disc) t.
    """
    s = -c / (2.0 * m)
    det = k / m
    disc = s * s - det
    scale = max(s * s, abs(det))
    if abs(disc) <= _REPEATED_EIG_TOL * scale:
        # power series in disc * dt^2, converged well below double precision
        z = disc * dt * dt
        C = 1.0 + z / 2.0 + z * z / 24.0 + z ** 3 / 720.0
        S = dt * (1.0 + z / 6.0 + z * z / 120.0 + z ** 3 / 5040.0)
    elif disc < 0.0:
        q = math.sqrt(-disc)
        C = math.cos(q * dt)
        S = math.sin(q * dt) / q
    else:
        q = math.sqrt(disc)
        C = math.cosh(q * dt)
        S = math.sinh(q * dt) / q
    g = math.exp(s * dt)
    # M = [[-s, 1], [-k/m, -c/m - s]]
    return (
        g * (C - s * S),
        g * S,
        g * (-det * S),
        g * (C + (-c / m - s) * S),
    )


def oscillator_discretize(m: float, k: float, c: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization of m x'' + c x' + k x = f.

    Returns
    -------
    A : (2, 2) ndarray
        State transition ``expm(Ac dt)``.
    B : (2,) ndarray
        Input column ``Ac^{-1} (A - I) Bc``.
    """
    if m <= 0 or dt <= 0:
        raise ContractViolation("mass and time step must be positive")
    if k < 0 or c < 0:
        raise ContractViolation("stiffness and damping must be nonnegative")
    if k == 0:
        raise ContractViolation("k = 0 makes the continuous state matrix singular")
    a00, a01, a10, a11 = _exp_2x2(m, k, c, dt)
    b0, b1 = _input_column(m, k, c, a01, a11)
    return np.array([[a00, a01], [a10, a11]]), np.array([b0, b1])


def _input_column(m, k, c, a01, a11):
    # (A - I) Bc = (a01, a11 - 1) / m, then apply Ac^{-1} = (m/k) [[-c/m, -1], [k/m, 0]]
    v0 = a01 / m
    v1 = (a11 - 1.0) / m
    return (m / k) * (-(c / m) * v0 - v1), v0


def make_white_noise_force(S_f: float, dt: float, n: int, rng: RngLike) -> np.ndarray:
    """Discrete Gaussian white noise with variance ``2 pi S_f / dt``."""
    if S_f < 0 or dt <= 0:
        raise ContractViolation("spectral intensity must be >= 0 and dt > 0")
    draws = as_generator(rng).standard_normal(n)
    return math.sqrt(2.0 * math.pi * S_f / dt) * draws


def euclidean_metric(x, y):
    """Euclidean distance of ``y`` from each row of ``x``; a float for a single vector."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise ContractViolation(f"length mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    diff = y - x
    dist = np.sqrt(ordered_sum(diff * diff))
    return float(dist) if x.ndim == 1 else dist


def oscillator_simulate(A, B, force, s0, state_noise=None, meas_noise=None) -> np.ndarray:
    """Single-record reference simulation (used to cross-check the batched path).

    ``state_noise`` has shape (l, 2) and ``meas_noise`` shape (l,); None means zero.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    force = np.asarray(force, dtype=float)
    n = len(force)
    e = np.zeros((n, 2)) if state_noise is None else np.asarray(state_noise, dtype=float)
    em = np.zeros(n) if meas_noise is None else np.asarray(meas_noise, dtype=float)
    s = np.asarray(s0, dtype=float).copy()
    out = np.empty(n)
    for l in range(n):
        s = A @ s + B * force[l] + e[l]
        out[l] = s[0] + em[l]
    return out


class OscillatorModel(ModelClass):
    """Oscillator with normalized parameters theta = (k / 4pi, c / 0.4pi).

    The noise vector of one simulation is 3 l standard normals: columns 2l and
    2l+1 drive the state noise of step l + 1, the last l columns the
    measurement noise.
    """

    name = "oscillator"
    dim = 2

    def __init__(
        self,
        force,
        mass: float = 3.0,
        dt: float = 0.01,
        sigma_e2: float = 1e-2,
        sigma_m2: float = 1e-6,
        s0=(0.01, 0.03),
        theta_max: float = 3.0,
        theta_true=None,
    ):
        self.force = np.asarray(force, dtype=float).copy()
        self.force.setflags(write=False)
        if mass <= 0 or dt <= 0:
            raise ContractViolation("mass and time step must be positive")
        if sigma_e2 < 0 or sigma_m2 < 0:
            raise ContractViolation("noise variances must be nonnegative")
        self.mass = float(mass)
        self.dt = float(dt)
        self.sigma_e2 = float(sigma_e2)
        self.sigma_m2 = float(sigma_m2)
        self.s0 = np.asarray(s0, dtype=float)
        self.n_obs = len(self.force)
        self.n_noise = 3 * self.n_obs
        self.lower = np.zeros(2)
        self.upper = np.full(2, float(theta_max))
        self.theta_true = None if theta_true is None else np.asarray(theta_true, dtype=float)

    def stiffness_damping(self, theta) -> tuple[float, float]:
        return K_SCALE * float(theta[0]), C_SCALE * float(theta[1])

    def discretize(self, theta) -> tuple[np.ndarray, np.ndarray]:
        k, c = self.stiffness_damping(theta)
        return oscillator_discretize(self.mass, k, c, self.dt)

    def sample_prior(self, gen, n):
        # 1 - U[0, 1) lies in (0, 1], matching the half-open support
        return self.lower + (self.upper - self.lower) * (1.0 - gen.random((n, 2)))

    def component_density(self, i, values):
        values = np.asarray(values, dtype=float)
        inside = (values > self.lower[i]) & (values <= self.upper[i])
        return np.where(inside, 1.0 / (self.upper[i] - self.lower[i]), 0.0)

    def draw_noise(self, gen, n):
        return gen.standard_normal((n, self.n_noise))

    def simulate_batch(self, thetas, noise):
        thetas = np.atleast_2d(thetas)
        noise = np.atleast_2d(noise)
        n, L = len(thetas), self.n_obs
        coef = np.empty((n, 6))
        for r, theta in enumerate(thetas):
            k, c = self.stiffness_damping(theta)
            a00, a01, a10, a11 = _exp_2x2(self.mass, k, c, self.dt)
            coef[r] = (a00, a01, a10, a11, *_input_column(self.mass, k, c, a01, a11))
        a00, a01, a10, a11, b0, b1 = coef.T
        se = math.sqrt(self.sigma_e2)
        state_noise = se * noise[:, : 2 * L]
        meas_noise = math.sqrt(self.sigma_m2) * noise[:, 2 * L :]
        s_0 = np.full(n, self.s0[0])
        s_1 = np.full(n, self.s0[1])
        out = np.empty((n, L))
        for l in range(L):
            f = self.force[l]
            n0 = a00 * s_0 + a01 * s_1 + b0 * f + state_noise[:, 2 * l]
            n1 = a10 * s_0 + a11 * s_1 + b1 * f + state_noise[:, 2 * l + 1]
            s_0, s_1 = n0, n1
            out[:, l] = s_0 + meas_noise[:, l]
        return out

    def summary(self, xs):
        return np.atleast_2d(np.asarray(xs, dtype=float))

    def metric(self, sx, sy):
        return euclidean_metric(np.atleast_2d(sx), sy)
