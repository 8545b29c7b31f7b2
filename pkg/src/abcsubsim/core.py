"""Domain types shared by every sampler: random streams, particles and the
model-class interface.

Models are written in batch form (one row per parameter vector) so that the
samplers can advance many chains at once.  Every per-row computation is
elementwise or a sequential left-to-right reduction, which makes a row's
result independent of the batch it was computed in.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "ContractViolation",
    "DomainError",
    "ModelClass",
    "Particle",
    "ParticleSet",
    "RandomStream",
    "as_generator",
    "discrepancy",
    "ordered_sum",
    "prior_sample",
    "simulate_forward",
]

_U64 = (1 << 64) - 1


class ContractViolation(ValueError):
    """An operation was called with arguments outside its preconditions."""


class DomainError(ValueError):
    """A parameter vector lies outside the prior support of the model."""


@dataclass(frozen=True)
class RandomStream:
    """Reproducible source of random draws identified by ``(seed, stream_id)``.

    Identical pairs give identical sequences; distinct stream ids are mapped
    to distinct ``SeedSequence`` spawn keys and are statistically independent.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= value <= _U64:
                raise ContractViolation(f"{name} must be an unsigned 64-bit integer, got {value!r}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(seq))

    def derive(self, *keys) -> "RandomStream":
        """Child stream keyed by ``keys``; a pure function of (stream_id, keys)."""
        label = "/".join([str(self.stream_id), *map(str, keys)]).encode()
        digest = hashlib.blake2b(label, digest_size=8).digest()
        return RandomStream(self.seed, int.from_bytes(digest, "little"))


RngLike = Union[RandomStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RandomStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(rng).__name__}")


def ordered_sum(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum from low index to high along ``axis``.

    ``np.sum`` uses pairwise summation whose grouping depends on the array
    layout; a cumulative sum is strictly sequential.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[axis] == 0:
        return np.zeros(np.delete(values.shape, axis % values.ndim))
    return np.take(np.cumsum(values, axis=axis), -1, axis=axis)


@dataclass(frozen=True)
class Particle:
    """One joint sample ``(theta, x)`` with its distance to the observation."""

    theta: np.ndarray
    x: np.ndarray
    rho: float


@dataclass
class ParticleSet:
    """Rows of particles stored as arrays: theta (n, d), x (n, l), rho (n,)."""

    theta: np.ndarray
    x: np.ndarray
    rho: np.ndarray

    def __len__(self) -> int:
        return len(self.rho)

    def __getitem__(self, n: int) -> Particle:
        return Particle(self.theta[n].copy(), self.x[n].copy(), float(self.rho[n]))

    def particles(self) -> list[Particle]:
        return [self[n] for n in range(len(self))]

    @classmethod
    def from_particles(cls, particles: Sequence[Particle]) -> "ParticleSet":
        return cls(
            np.array([p.theta for p in particles], dtype=float),
            np.array([p.x for p in particles], dtype=float),
            np.array([p.rho for p in particles], dtype=float),
        )


class ModelClass(ABC):
    """Prior, stochastic forward model, summary statistic and metric.

    The prior is a product of per-component densities restricted to a joint
    support set: ``p(theta) ∝ prod_i component_density(i, theta_i) *
    in_support(theta)``.  Product priors leave ``in_support`` as the box
    test; the MA(2) triangle uses it for the identifiability constraint.

    Subclasses hold no mutable state after construction.  ``theta_true`` is
    bookkeeping for synthetic-data experiments and is never read by samplers.
    """

    name: str = "model"
    dim: int
    n_obs: int
    n_noise: int
    lower: np.ndarray
    upper: np.ndarray
    theta_true: np.ndarray | None = None

    @abstractmethod
    def sample_prior(self, gen: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` i.i.d. prior samples, shape (n, dim)."""

    @abstractmethod
    def component_density(self, i: int, values: np.ndarray) -> np.ndarray:
        """Density of the i-th product factor evaluated at ``values``."""

    def in_support(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        return np.all((thetas > self.lower) & (thetas <= self.upper), axis=1)

    def prior_density(self, thetas: np.ndarray) -> np.ndarray:
        """Unnormalized joint prior density, one value per row."""
        thetas = np.atleast_2d(thetas)
        dens = np.ones(len(thetas))
        for i in range(self.dim):
            dens = dens * self.component_density(i, thetas[:, i])
        return np.where(self.in_support(thetas), dens, 0.0)

    @abstractmethod
    def draw_noise(self, gen: np.random.Generator, n: int) -> np.ndarray:
        """Noise consumed by ``simulate_batch``, shape (n, n_noise)."""

    @abstractmethod
    def simulate_batch(self, thetas: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Forward model, shape (n, n_obs).  Rows are computed independently."""

    @abstractmethod
    def summary(self, xs: np.ndarray) -> np.ndarray:
        """Summary statistics, shape (n, k)."""

    @abstractmethod
    def metric(self, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
        """Distance of each summary row of ``sx`` from ``sy``."""

    def distances(self, xs: np.ndarray, sy: np.ndarray) -> np.ndarray:
        return self.metric(self.summary(np.atleast_2d(xs)), sy)

    def proposal_base_scales(self) -> np.ndarray:
        """Per-component proposal scales proportional to the prior ranges,
        normalized so the widest component has scale one."""
        width = np.asarray(self.upper, dtype=float) - np.asarray(self.lower, dtype=float)
        return width / width.max()

    def normalized(self, thetas: np.ndarray) -> np.ndarray:
        """Parameter coordinates used for reporting; identity by default."""
        return np.asarray(thetas, dtype=float)


def _check_vector(values, length: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (length,):
        raise ContractViolation(f"{what} must have length {length}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{what} must be finite")
    return arr


def prior_sample(model: ModelClass, rng: RngLike) -> np.ndarray:
    return model.sample_prior(as_generator(rng), 1)[0]


def simulate_forward(model: ModelClass, theta, rng: RngLike, noise=None) -> np.ndarray:
    """Simulate one data vector; ``noise`` overrides the stream draw."""
    theta = _check_vector(theta, model.dim, "theta")
    if not model.in_support(theta[None, :])[0]:
        raise DomainError(f"theta={theta.tolist()} is outside the prior support of {model.name}")
    if noise is None:
        noise = model.draw_noise(as_generator(rng), 1)
    else:
        noise = _check_vector(noise, model.n_noise, "noise")[None, :]
    return model.simulate_batch(theta[None, :], noise)[0]


def discrepancy(model: ModelClass, x, y) -> float:
    x = _check_vector(x, model.n_obs, "x")
    y = _check_vector(y, model.n_obs, "y")
    return float(model.distances(x[None, :], model.summary(y[None, :])[0])[0])
