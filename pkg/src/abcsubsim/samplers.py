"""Baseline ABC samplers and the Modified Metropolis kernel used inside
tolerance regions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    ContractViolation,
    ModelClass,
    Particle,
    ParticleSet,
    RngLike,
    as_generator,
)

__all__ = [
    "AbcBudgetExceeded",
    "ChainMatrix",
    "MmaStats",
    "ProposalSpec",
    "abc_mcmc",
    "mma_extend_chain",
    "run_mma_chains",
    "standard_abc",
]

DEFAULT_MAX_DRAWS = 10_000_000
_CHUNK = 4096


class AbcBudgetExceeded(RuntimeError):
    """Draw budget ran out before enough particles were accepted."""

    def __init__(self, particles: list[Particle], total_draws: int):
        super().__init__(
            f"draw budget exhausted after {total_draws} draws with {len(particles)} accepted particles"
        )
        self.particles = particles
        self.total_draws = total_draws


@dataclass(frozen=True)
class ProposalSpec:
    """Per-component standard deviations of the Gaussian random-walk proposal."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim != 1 or not np.all(sigma > 0) or not np.all(np.isfinite(sigma)):
            raise ContractViolation(f"proposal standard deviations must be positive, got {sigma}")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def scaled(cls, scale: float, base: np.ndarray) -> "ProposalSpec":
        return cls(float(scale) * np.asarray(base, dtype=float))


@dataclass
class ChainMatrix:
    """Level samples kept in chain layout: first axis chain k, second axis step i."""

    theta: np.ndarray  # (Nc, Ns, d)
    x: np.ndarray  # (Nc, Ns, l)
    rho: np.ndarray  # (Nc, Ns)
    level: int = 0

    @property
    def n_chains(self) -> int:
        return self.rho.shape[0]

    @property
    def chain_length(self) -> int:
        return self.rho.shape[1]

    def __len__(self) -> int:
        return self.rho.size

    def flatten(self) -> ParticleSet:
        """Chain-major renumbering: particle n = k * Ns + i."""
        nc, ns = self.rho.shape
        return ParticleSet(
            self.theta.reshape(nc * ns, -1),
            self.x.reshape(nc * ns, -1),
            self.rho.reshape(-1),
        )

    def particles(self) -> list[Particle]:
        return self.flatten().particles()


@dataclass
class MmaStats:
    """Acceptance bookkeeping of a batch of Modified Metropolis chains."""

    component_accepts: np.ndarray
    pair_accepts: int = 0  # accepted pairs whose parameter moved
    state_updates: int = 0  # all accepted pairs, including re-simulation at a stalled parameter
    proposals: int = 0
    evaluations: int = 0
    per_chain_accepts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def acceptance_rate(self) -> float:
        return self.pair_accepts / self.proposals if self.proposals else float("nan")


def _simulate_rows(model: ModelClass, thetas, noise, sy, mask):
    """Simulate only rows where ``mask`` holds; others get x = nan, rho = inf."""
    x = np.full((len(thetas), model.n_obs), np.nan)
    rho = np.full(len(thetas), np.inf)
    if np.any(mask):
        x[mask] = model.simulate_batch(thetas[mask], noise[mask])
        rho[mask] = model.distances(x[mask], sy)
    return x, rho


def run_mma_chains(
    model: ModelClass,
    sy: np.ndarray,
    epsilon: float,
    seeds: ParticleSet,
    chain_length: int,
    proposal: ProposalSpec,
    streams: Sequence[RngLike],
    level: int = 0,
) -> tuple[ChainMatrix, MmaStats]:
    """Grow one Modified Metropolis chain from every seed.

    Each chain draws from its own stream in a fixed order per step (proposal
    normals, component uniforms, simulation noise), so a chain's states do
    not depend on how many other chains share the batch.

    One step, per chain: a candidate for every component from
    N(current_i, sigma_i), accepted with probability
    min(1, p_i(candidate_i) / p_i(current_i)); a fresh x' is simulated from
    the assembled parameter; the pair replaces the state iff the parameter
    is in the joint support and rho(x') <= epsilon, otherwise the whole
    previous particle repeats.

    The acceptance rate counts accepted pairs whose parameter moved; a fresh
    x' at an unchanged parameter updates the state but is not a move.
    """
    if chain_length < 1:
        raise ContractViolation("chain_length must be positive")
    if np.any(seeds.rho > epsilon):
        raise ContractViolation("every seed must lie inside the tolerance region")
    sigma = proposal.sigma
    d = model.dim
    if sigma.shape != (d,):
        raise ContractViolation(f"proposal needs {d} standard deviations, got {sigma.shape}")
    gens = [as_generator(s) for s in streams]
    K = len(seeds)
    if len(gens) != K:
        raise ContractViolation("one random stream per seed is required")

    theta = np.empty((K, chain_length, d))
    x = np.empty((K, chain_length, model.n_obs))
    rho = np.empty((K, chain_length))
    theta[:, 0], x[:, 0], rho[:, 0] = seeds.theta, seeds.x, seeds.rho
    stats = MmaStats(component_accepts=np.zeros(d, dtype=int), per_chain_accepts=np.zeros(K, dtype=int))

    for i in range(1, chain_length):
        cur = theta[:, i - 1]
        z = np.empty((K, d))
        u = np.empty((K, d))
        noise = np.empty((K, model.n_noise))
        for k, g in enumerate(gens):
            z[k] = g.standard_normal(d)
            u[k] = g.random(d)
            noise[k] = model.draw_noise(g, 1)[0]

        cand = cur.copy()
        for j in range(d):
            xi = cur[:, j] + sigma[j] * z[:, j]
            p_new = model.component_density(j, xi)
            p_old = model.component_density(j, cur[:, j])
            take = u[:, j] * p_old < p_new  # u < p_new / p_old with p_old > 0
            cand[:, j] = np.where(take, xi, cur[:, j])
            stats.component_accepts[j] += int(take.sum())

        inside = model.in_support(cand)
        x_new, rho_new = _simulate_rows(model, cand, noise, sy, inside)
        accept = inside & (rho_new <= epsilon)
        theta[:, i] = np.where(accept[:, None], cand, cur)
        x[:, i] = np.where(accept[:, None], x_new, x[:, i - 1])
        rho[:, i] = np.where(accept, rho_new, rho[:, i - 1])

        moved = accept & np.any(cand != cur, axis=1)
        stats.pair_accepts += int(moved.sum())
        stats.state_updates += int(accept.sum())
        stats.per_chain_accepts += moved
        stats.proposals += K
        stats.evaluations += int(inside.sum())

    return ChainMatrix(theta, x, rho, level), stats


def mma_extend_chain(
    model: ModelClass,
    y,
    epsilon_j: float,
    seed_particle: Particle,
    chain_length: int,
    proposal: ProposalSpec,
    rng: RngLike,
) -> tuple[list[Particle], MmaStats]:
    """Extend one chain inside ``{rho <= epsilon_j}``; the seed is state one."""
    if seed_particle.rho > epsilon_j:
        raise ContractViolation(f"seed rho {seed_particle.rho} exceeds epsilon {epsilon_j}")
    sy = model.summary(np.atleast_2d(y))[0]
    seeds = ParticleSet.from_particles([seed_particle])
    chains, stats = run_mma_chains(model, sy, epsilon_j, seeds, chain_length, proposal, [rng])
    return chains.particles(), stats


def standard_abc(
    model: ModelClass,
    y,
    epsilon: float,
    n_accept: int,
    rng: RngLike,
    max_draws: int = DEFAULT_MAX_DRAWS,
) -> tuple[list[Particle], int]:
    """Rejection ABC: prior draws kept when rho <= epsilon.

    Returns the accepted particles and the number of (theta, x) draws
    needed to reach ``n_accept``.  Draws are generated in fixed-size chunks;
    draws past the last needed acceptance are not counted.

    Raises
    ------
    AbcBudgetExceeded
        If ``max_draws`` draws produce fewer than ``n_accept`` particles.
    """
    if not epsilon >= 0:
        raise ContractViolation("epsilon must be nonnegative")
    if n_accept < 1:
        raise ContractViolation("n_accept must be positive")
    gen = as_generator(rng)
    sy = model.summary(np.atleast_2d(y))[0]
    found: list[Particle] = []
    drawn = 0
    while drawn < max_draws:
        size = min(_CHUNK, max_draws - drawn)
        theta = model.sample_prior(gen, size)
        x = model.simulate_batch(theta, model.draw_noise(gen, size))
        rho = model.distances(x, sy)
        hits = np.flatnonzero(rho <= epsilon)
        need = n_accept - len(found)
        if len(hits) >= need:
            hits = hits[:need]
            found.extend(Particle(theta[n].copy(), x[n].copy(), float(rho[n])) for n in hits)
            return found, drawn + int(hits[-1]) + 1
        found.extend(Particle(theta[n].copy(), x[n].copy(), float(rho[n])) for n in hits)
        drawn += size
    raise AbcBudgetExceeded(found, drawn)


def abc_mcmc(
    model: ModelClass,
    y,
    epsilon: float,
    chain_length: int,
    init: Particle,
    proposal: ProposalSpec,
    rng: RngLike,
) -> list[Particle]:
    """ABC-MCMC with a symmetric Gaussian random-walk proposal.

    A candidate is accepted iff rho(x') <= epsilon and u < p(theta')/p(theta);
    otherwise the previous particle repeats.  The returned chain holds the
    ``chain_length`` states after the initial one.
    """
    if init.rho > epsilon:
        raise ContractViolation(f"initial particle rho {init.rho} exceeds epsilon {epsilon}")
    if chain_length < 1:
        raise ContractViolation("chain_length must be positive")
    gen = as_generator(rng)
    sy = model.summary(np.atleast_2d(y))[0]
    sigma = proposal.sigma
    cur = init
    p_cur = float(model.prior_density(cur.theta)[0])
    chain = []
    for _ in range(chain_length):
        cand = cur.theta + sigma * gen.standard_normal(model.dim)
        u = gen.random()
        noise = model.draw_noise(gen, 1)
        p_new = float(model.prior_density(cand)[0])
        if p_new > 0.0:
            x_new = model.simulate_batch(cand[None, :], noise)[0]
            rho_new = float(model.distances(x_new[None, :], sy)[0])
            if rho_new <= epsilon and u * p_cur < p_new:
                cur = Particle(cand, x_new, rho_new)
                p_cur = p_new
        chain.append(cur)
    return chain
