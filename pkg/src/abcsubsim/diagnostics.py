"""Chain-quality and posterior-quality estimators for level samples."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .core import ContractViolation, ParticleSet
from .samplers import ChainMatrix

QoiFunction = Callable[[np.ndarray], float]

__all__ = [
    "SingularCovarianceError",
    "UndefinedDiagnosticError",
    "autocovariance_at_lag",
    "correlation_factor",
    "differential_entropy_bound",
    "estimator_variance",
    "level_cost_index",
    "model_posterior_probabilities",
    "posterior_mean_qoi",
    "quadratic_error",
    "qoi_squared_norm",
]


class UndefinedDiagnosticError(ValueError):
    """The requested statistic is undefined for the given samples."""


class SingularCovarianceError(UndefinedDiagnosticError):
    pass


def qoi_squared_norm(theta) -> float:
    theta = np.asarray(theta, dtype=float)
    return float(np.dot(theta, theta))


def _h_values(samples, h: QoiFunction) -> np.ndarray:
    """Evaluate h over the parameter rows of any sample container."""
    if isinstance(samples, ChainMatrix):
        theta = samples.theta
    elif isinstance(samples, ParticleSet):
        theta = samples.theta
    elif isinstance(samples, (list, tuple)) and samples and hasattr(samples[0], "theta"):
        theta = np.array([p.theta for p in samples])
    else:
        theta = np.asarray(samples, dtype=float)
    flat = theta.reshape(-1, theta.shape[-1])
    return np.array([h(t) for t in flat], dtype=float).reshape(theta.shape[:-1])


def posterior_mean_qoi(particles, h: QoiFunction = qoi_squared_norm) -> float:
    values = _h_values(particles, h).ravel()
    if values.size == 0:
        raise ContractViolation("posterior mean needs at least one sample")
    return float(values.mean())


def _chain_h(chains, h: QoiFunction | None) -> np.ndarray:
    """(Nc, Ns) matrix of h values; a 2-D array is taken as already evaluated."""
    if h is None:
        hv = np.asarray(chains, dtype=float)
    else:
        hv = _h_values(chains, h)
    if hv.ndim != 2:
        raise ContractViolation(f"expected an Nc x Ns layout, got shape {hv.shape}")
    return hv


def _autocov(hv: np.ndarray, tau: int) -> float:
    nc, ns = hv.shape
    if not 0 <= tau <= ns - 1:
        raise ContractViolation(f"lag {tau} outside [0, {ns - 1}]")
    n = nc * ns
    mean = hv.mean()
    lagged = np.sum(hv[:, : ns - tau] * hv[:, tau:])
    return float(lagged / (n - tau * nc) - mean * mean)


def autocovariance_at_lag(chains, h: QoiFunction | None, tau: int) -> float:
    """Pooled lag-tau autocovariance of h over equal-length chains.

    Chains are treated as probabilistically equivalent and mutually
    uncorrelated; the correlation between chains through their seeds is
    ignored.

    Parameters
    ----------
    chains : ChainMatrix or array
        Either a ChainMatrix, an (Nc, Ns, d) parameter array, or an (Nc, Ns)
        array of precomputed h values (then ``h`` must be None).
    h : callable or None
    tau : int
        Lag, 0 <= tau <= Ns - 1.
    """
    return _autocov(_chain_h(chains, h), tau)


def _gamma(hv: np.ndarray) -> tuple[float, float]:
    ns = hv.shape[1]
    r0 = _autocov(hv, 0)
    if not r0 > 0.0:
        raise UndefinedDiagnosticError("correlation factor undefined: zero variance of h")
    gamma = 0.0
    for tau in range(1, ns):
        gamma += (ns - tau) / ns * _autocov(hv, tau) / r0
    return 2.0 * gamma, r0


def correlation_factor(chains, h: QoiFunction | None = qoi_squared_norm) -> float:
    """gamma = 2 sum_{tau=1}^{Ns-1} (1 - tau/Ns) R(tau) / R(0)."""
    return _gamma(_chain_h(chains, h))[0]


def estimator_variance(chains, h: QoiFunction | None = qoi_squared_norm) -> float:
    """Variance of the level mean of h: R(0) (1 + gamma) / N.

    Constant h has zero variance, so the estimator variance is returned as 0
    rather than propagating the undefined correlation factor.
    """
    hv = _chain_h(chains, h)
    if _autocov(hv, 0) <= 0.0:
        return 0.0
    gamma, r0 = _gamma(hv)
    return r0 / hv.size * (1.0 + gamma)


def level_cost_index(m: int, gamma_m: float) -> float:
    if m < 1:
        raise ContractViolation("level count must be >= 1")
    return m * (1.0 + gamma_m)


def quadratic_error(theta_bar, theta_true) -> float:
    a = np.asarray(theta_bar, dtype=float)
    b = np.asarray(theta_true, dtype=float)
    if a.shape != b.shape:
        raise ContractViolation(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.dot(diff, diff))


def differential_entropy_bound(particles) -> float:
    """Gaussian upper bound 0.5 ln((2 pi e)^d det cov) with the unbiased covariance."""
    if isinstance(particles, (ChainMatrix, ParticleSet)):
        theta = particles.theta.reshape(-1, particles.theta.shape[-1])
    elif isinstance(particles, (list, tuple)) and particles and hasattr(particles[0], "theta"):
        theta = np.array([p.theta for p in particles], dtype=float)
    else:
        theta = np.atleast_2d(np.asarray(particles, dtype=float))
    n, d = theta.shape
    if len(np.unique(theta, axis=0)) < d + 1:
        raise SingularCovarianceError(f"need at least {d + 1} distinct samples for a {d}-dim covariance")
    cov = np.atleast_2d(np.cov(theta, rowvar=False, ddof=1))
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularCovarianceError("sample covariance is singular")
    return 0.5 * (d * math.log(2.0 * math.pi * math.e) + logdet)


def model_posterior_probabilities(evidences: Sequence[float], priors: Sequence[float]) -> list[float]:
    """Normalize evidence x prior over candidate model classes."""
    ev = np.asarray(evidences, dtype=float)
    pr = np.asarray(priors, dtype=float)
    if ev.shape != pr.shape or ev.ndim != 1:
        raise ContractViolation("evidences and priors must be equal-length lists")
    if np.any(ev < 0) or np.any(pr < 0):
        raise ContractViolation("evidences and priors must be nonnegative")
    if abs(pr.sum() - 1.0) > 1e-9:
        raise ContractViolation(f"priors must sum to 1, got {pr.sum()}")
    weights = ev * pr
    total = weights.sum()
    if not total > 0.0:
        raise UndefinedDiagnosticError("all evidence-prior products are zero")
    return (weights / total).tolist()
