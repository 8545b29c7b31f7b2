"""ABC by Subset Simulation: adaptive tolerance levels, seed selection,
proposal scaling, and evidence estimates."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import ContractViolation, ModelClass, ParticleSet, RandomStream, as_generator
from .diagnostics import UndefinedDiagnosticError, _autocov, _gamma, _h_values, qoi_squared_norm
from .samplers import ChainMatrix, ProposalSpec, run_mma_chains

log = logging.getLogger(__name__)

__all__ = [
    "AdaptResult",
    "AdaptSettings",
    "LevelRecord",
    "RejectionEvidence",
    "SubSimConfig",
    "SubSimRun",
    "TERMINATION_BUDGET",
    "TERMINATION_TOLERANCE",
    "adapt_proposal_scale",
    "estimate_evidence_rejection",
    "estimate_evidence_subsim",
    "rejection_evidence_curve",
    "run_abc_subsim",
    "select_seed_indices",
    "select_seeds",
    "select_tolerance",
    "sensitivity_sweep",
    "verify_run",
]

TERMINATION_TOLERANCE = "tolerance-reached"
TERMINATION_BUDGET = "level-budget-exhausted"
_REJECTION_CHUNK = 5000
LOW_COUNT = 10


def _integral(value: float, what: str) -> int:
    r = round(value)
    if r < 1 or abs(value - r) > 1e-9 * max(1.0, abs(value)):
        raise ContractViolation(f"{what} must be a positive integer, got {value}")
    return int(r)


@dataclass(frozen=True)
class AdaptSettings:
    """Pilot-chain tuning of the proposal scale toward an acceptance band."""

    enabled: bool = True
    pilot_length: int = 10
    n_pilot_chains: int = 50
    band: tuple[float, float] = (0.2, 0.4)
    factor: float = 2.0
    max_rounds: int = 8

    def __post_init__(self):
        lo, hi = self.band
        if not 0.0 < lo < hi < 1.0:
            raise ContractViolation(f"acceptance band must satisfy 0 < low < high < 1, got {self.band}")
        if self.factor <= 1.0:
            raise ContractViolation("scale factor must exceed 1")
        if self.pilot_length < 2 or self.n_pilot_chains < 1 or self.max_rounds < 1:
            raise ContractViolation("pilot length >= 2, pilot chains >= 1 and max rounds >= 1 required")


@dataclass(frozen=True)
class SubSimConfig:
    N: int = 1000
    P0: float = 0.2
    m_max: int = 10
    epsilon_target: float | None = None
    sigma0: float = 0.4
    adapt: AdaptSettings = field(default_factory=AdaptSettings)
    sigma_schedule: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0.0 < self.P0 < 1.0:
            raise ContractViolation(f"P0 must lie in (0, 1), got {self.P0}")
        _integral(self.N * self.P0, "N*P0")
        _integral(1.0 / self.P0, "1/P0")
        if self.N < 2 or self.m_max < 1:
            raise ContractViolation("N >= 2 and m_max >= 1 required")
        if self.epsilon_target is not None and not self.epsilon_target >= 0:
            raise ContractViolation("epsilon_target must be nonnegative")
        if not self.sigma0 > 0:
            raise ContractViolation("sigma0 must be positive")
        if self.sigma_schedule is not None:
            if not self.sigma_schedule or any(not s > 0 for s in self.sigma_schedule):
                raise ContractViolation("sigma_schedule entries must be positive")
            object.__setattr__(self, "sigma_schedule", tuple(float(s) for s in self.sigma_schedule))

    @property
    def n_seeds(self) -> int:
        return _integral(self.N * self.P0, "N*P0")

    @property
    def chain_length(self) -> int:
        return _integral(1.0 / self.P0, "1/P0")


@dataclass
class LevelRecord:
    level: int
    epsilon: float
    particles: ParticleSet | ChainMatrix
    scale: float | None = None
    proposal: ProposalSpec | None = None
    acceptance_rate: float | None = None
    seed_indices: np.ndarray | None = None
    adapt_converged: bool | None = None
    adapt_rounds: int = 0
    pilot_acceptance: float | None = None
    pilot_evaluations: int = 0
    model_evaluations: int = 0
    component_acceptance: np.ndarray | None = None
    gamma: float | None = None
    r0: float | None = None

    @property
    def flat(self) -> ParticleSet:
        if isinstance(self.particles, ChainMatrix):
            return self.particles.flatten()
        return self.particles


@dataclass
class SubSimRun:
    config: SubSimConfig
    levels: list[LevelRecord]
    evidence_estimate: float
    termination: str

    @property
    def conditional_levels(self) -> list[LevelRecord]:
        return self.levels[1:]

    @property
    def n_levels(self) -> int:
        return len(self.levels) - 1

    @property
    def epsilons(self) -> list[float]:
        return [rec.epsilon for rec in self.conditional_levels]

    @property
    def final(self) -> ParticleSet:
        return self.levels[-1].flat


def select_tolerance(distances: Sequence[float], P0: float) -> float:
    """Midpoint of the (N P0)-th and (N P0 + 1)-th smallest distances."""
    d = np.sort(np.asarray(distances, dtype=float))
    k = _integral(len(d) * P0, "N*P0")
    if k >= len(d):
        raise ContractViolation("N*P0 must be smaller than N")
    return 0.5 * (d[k - 1] + d[k])


def select_seed_indices(rho: Sequence[float], P0: float) -> np.ndarray:
    """Indices of the N P0 smallest distances, ascending; ties keep input order."""
    rho = np.asarray(rho, dtype=float)
    k = _integral(len(rho) * P0, "N*P0")
    if k >= len(rho):
        raise ContractViolation("N*P0 must be smaller than N")
    return np.argsort(rho, kind="stable")[:k]


def select_seeds(level_particles, P0: float) -> list:
    if isinstance(level_particles, ParticleSet):
        idx = select_seed_indices(level_particles.rho, P0)
        return [level_particles[int(n)] for n in idx]
    idx = select_seed_indices([p.rho for p in level_particles], P0)
    return [level_particles[int(n)] for n in idx]


def estimate_evidence_subsim(m: int, P0: float) -> float:
    if m < 0:
        raise ContractViolation("completed level count must be >= 0")
    return P0 ** m


@dataclass
class AdaptResult:
    proposal: ProposalSpec
    multiplier: float
    acceptance: float
    converged: bool
    rounds: int
    evaluations: int
    history: list[tuple[float, float]] = field(default_factory=list)


def _pilot_subset(n_seeds: int, n_pilot: int) -> np.ndarray:
    if n_pilot >= n_seeds:
        return np.arange(n_seeds)
    return np.unique(np.round(np.linspace(0, n_seeds - 1, n_pilot)).astype(int))


def adapt_proposal_scale(
    model: ModelClass,
    y,
    epsilon_j: float,
    seeds: ParticleSet,
    sigma_current: ProposalSpec,
    settings: AdaptSettings,
    rng: RandomStream,
) -> AdaptResult:
    """Scale the proposal until pilot-chain acceptance falls inside the band.

    Pilot chains of ``settings.pilot_length`` states start from an evenly
    spaced fixed subset of the seeds.  Above the band every sigma_i is
    multiplied by ``settings.factor``, below it divided.  After
    ``max_rounds`` measurements without success the tried scale whose rate
    was closest to the band is returned, flagged as unconverged; when the
    rate is limited by simulation noise this avoids shrinking the scale
    toward zero.  Pilot states are discarded.
    """
    if len(seeds) == 0:
        raise ContractViolation("adaptation needs at least one seed")
    sy = model.summary(np.atleast_2d(y))[0]
    subset = _pilot_subset(len(seeds), settings.n_pilot_chains)
    pilot = ParticleSet(seeds.theta[subset], seeds.x[subset], seeds.rho[subset])
    lo, hi = settings.band
    multiplier = 1.0
    history = []
    evaluations = 0
    rate = float("nan")
    for r in range(settings.max_rounds):
        proposal = ProposalSpec(sigma_current.sigma * multiplier)
        streams = [rng.derive("round", r, "chain", int(c)) for c in subset]
        _, stats = run_mma_chains(model, sy, epsilon_j, pilot, settings.pilot_length, proposal, streams)
        rate = stats.acceptance_rate
        evaluations += stats.evaluations
        history.append((multiplier, rate))
        if lo <= rate <= hi:
            return AdaptResult(proposal, multiplier, rate, True, r + 1, evaluations, history)
        if r < settings.max_rounds - 1:
            multiplier = multiplier * settings.factor if rate > hi else multiplier / settings.factor
    # first of the equally close entries wins
    gaps = [max(lo - a, a - hi, 0.0) if a == a else math.inf for _, a in history]
    best = int(np.argmin(gaps))
    multiplier, rate = history[best]
    return AdaptResult(
        ProposalSpec(sigma_current.sigma * multiplier), multiplier, rate, False,
        settings.max_rounds, evaluations, history,
    )


def _level_gamma(chains: ChainMatrix, h) -> tuple[float | None, float | None]:
    hv = _h_values(chains, h)
    r0 = _autocov(hv, 0)
    try:
        return _gamma(hv)[0], r0
    except UndefinedDiagnosticError:
        return None, r0


def run_abc_subsim(model: ModelClass, y, config: SubSimConfig, rng: RandomStream, h=qoi_squared_norm) -> SubSimRun:
    """Run ABC-SubSim until epsilon_j <= epsilon_target or m_max levels.

    Level 0 draws N prior-predictive particles.  Conditional level j fixes
    epsilon_j from the previous level's distances, seeds N P0 chains with the
    closest particles and grows each to 1/P0 states with the Modified
    Metropolis kernel; the seed is kept as the first state.  Random streams
    are derived from ``rng`` by (level, chain) so that chain results do not
    depend on execution order.
    """
    if not isinstance(rng, RandomStream):
        raise TypeError("run_abc_subsim needs a RandomStream to derive per-chain streams")
    y = np.asarray(y, dtype=float)
    if y.shape != (model.n_obs,):
        raise ContractViolation(f"observation must have length {model.n_obs}")
    sy = model.summary(y[None, :])[0]
    N, P0, Nc, Ns = config.N, config.P0, config.n_seeds, config.chain_length
    base = model.proposal_base_scales()

    gen = rng.derive("level", 0).generator()
    theta = model.sample_prior(gen, N)
    x = model.simulate_batch(theta, model.draw_noise(gen, N))
    prev = ParticleSet(theta, x, model.distances(x, sy))
    levels = [LevelRecord(level=0, epsilon=math.inf, particles=prev, model_evaluations=N)]

    scale = config.sigma0
    termination = TERMINATION_BUDGET
    for j in range(1, config.m_max + 1):
        eps = select_tolerance(prev.rho, P0)
        if eps >= levels[-1].epsilon:
            raise RuntimeError(f"tolerance stalled at level {j}: {eps} >= {levels[-1].epsilon}")
        idx = select_seed_indices(prev.rho, P0)
        seeds = ParticleSet(prev.theta[idx], prev.x[idx], prev.rho[idx])

        adapt = None
        if config.adapt.enabled:
            adapt = adapt_proposal_scale(
                model, y, eps, seeds, ProposalSpec.scaled(scale, base), config.adapt,
                rng.derive("level", j, "pilot"),
            )
            scale *= adapt.multiplier
        elif config.sigma_schedule is not None:
            scale = config.sigma_schedule[min(j, len(config.sigma_schedule)) - 1]
        proposal = ProposalSpec.scaled(scale, base)

        streams = [rng.derive("level", j, "chain", k) for k in range(Nc)]
        chains, stats = run_mma_chains(model, sy, eps, seeds, Ns, proposal, streams, level=j)
        gamma, r0 = _level_gamma(chains, h)
        rec = LevelRecord(
            level=j,
            epsilon=float(eps),
            particles=chains,
            scale=float(scale),
            proposal=proposal,
            acceptance_rate=stats.acceptance_rate,
            seed_indices=idx,
            adapt_converged=None if adapt is None else adapt.converged,
            adapt_rounds=0 if adapt is None else adapt.rounds,
            pilot_acceptance=None if adapt is None else adapt.acceptance,
            pilot_evaluations=0 if adapt is None else adapt.evaluations,
            model_evaluations=stats.evaluations,
            component_acceptance=stats.component_accepts / max(stats.proposals, 1),
            gamma=gamma,
            r0=r0,
        )
        levels.append(rec)
        log.info("level %d: eps=%.6g sigma=%.4g acc=%.3f", j, eps, scale, rec.acceptance_rate)
        prev = chains.flatten()
        if config.epsilon_target is not None and eps <= config.epsilon_target:
            termination = TERMINATION_TOLERANCE
            break

    m = len(levels) - 1
    return SubSimRun(config, levels, estimate_evidence_subsim(m, P0), termination)


class RejectionEvidence(NamedTuple):
    estimate: float
    hits: int
    draws: int
    low_count: bool


def estimate_evidence_rejection(model: ModelClass, y, epsilon: float, N: int, rng) -> RejectionEvidence:
    """Fraction of N prior-predictive draws with rho <= epsilon.

    Fewer than ten hits sets ``low_count`` and emits a warning.
    """
    if N < 1:
        raise ContractViolation("N must be positive")
    gen = as_generator(rng)
    sy = model.summary(np.atleast_2d(y))[0]
    hits = 0
    done = 0
    while done < N:
        size = min(_REJECTION_CHUNK, N - done)
        theta = model.sample_prior(gen, size)
        x = model.simulate_batch(theta, model.draw_noise(gen, size))
        hits += int(np.count_nonzero(model.distances(x, sy) <= epsilon))
        done += size
    low = hits < LOW_COUNT
    if low:
        warnings.warn(f"only {hits} of {N} draws inside tolerance {epsilon}; estimate is unreliable")
    return RejectionEvidence(hits / N, hits, N, low)


def rejection_evidence_curve(model, y, epsilons: Sequence[float], N: int, rng: RandomStream) -> list[RejectionEvidence]:
    """Independent rejection estimates, one fresh stream per tolerance."""
    return [
        estimate_evidence_rejection(model, y, eps, N, rng.derive("evidence", j))
        for j, eps in enumerate(epsilons)
    ]


def sensitivity_sweep(model, y, run: SubSimRun, sigma_grid: Sequence[float], rng: RandomStream, h=qoi_squared_norm):
    """Acceptance rate and gamma of each conditional level at fixed proposal scales.

    The level's own seeds and tolerance are reused; only the scale changes.
    """
    sy = model.summary(np.atleast_2d(y))[0]
    base = model.proposal_base_scales()
    rows = []
    for rec in run.conditional_levels:
        prev = run.levels[rec.level - 1].flat
        idx = rec.seed_indices
        seeds = ParticleSet(prev.theta[idx], prev.x[idx], prev.rho[idx])
        for g, sigma in enumerate(sigma_grid):
            streams = [rng.derive("sweep", rec.level, g, k) for k in range(len(idx))]
            chains, stats = run_mma_chains(
                model, sy, rec.epsilon, seeds, run.config.chain_length,
                ProposalSpec.scaled(sigma, base), streams, level=rec.level,
            )
            gamma, _ = _level_gamma(chains, h)
            rows.append({
                "level": rec.level,
                "epsilon": rec.epsilon,
                "sigma": float(sigma),
                "acceptance": stats.acceptance_rate,
                "gamma": gamma,
            })
    return rows


def verify_run(run: SubSimRun, model: ModelClass, y) -> list[str]:
    """Recount-based checks of the level structure; returns violation messages."""
    problems = []
    cfg = run.config
    sy = model.summary(np.atleast_2d(y))[0]
    prev_eps = math.inf
    for rec in run.levels:
        flat = rec.flat
        if len(flat) != cfg.N:
            problems.append(f"level {rec.level}: {len(flat)} particles, expected {cfg.N}")
        recomputed = model.distances(flat.x, sy)
        if not np.array_equal(recomputed, flat.rho):
            problems.append(f"level {rec.level}: stored rho differs from recomputed rho")
        if rec.level == 0:
            continue
        if not rec.epsilon < prev_eps:
            problems.append(f"level {rec.level}: epsilon {rec.epsilon} not below {prev_eps}")
        prev_eps = rec.epsilon
        if np.any(flat.rho > rec.epsilon):
            problems.append(f"level {rec.level}: {int(np.sum(flat.rho > rec.epsilon))} particles outside D_j")
        prev = run.levels[rec.level - 1].flat
        idx = np.asarray(rec.seed_indices)
        if len(idx) != cfg.n_seeds:
            problems.append(f"level {rec.level}: {len(idx)} seeds, expected {cfg.n_seeds}")
        inside = int(np.count_nonzero(prev.rho <= rec.epsilon))
        ties = np.sort(prev.rho)[cfg.n_seeds - 1] == np.sort(prev.rho)[cfg.n_seeds]
        if inside < cfg.n_seeds or (inside != cfg.n_seeds and not ties):
            problems.append(f"level {rec.level}: {inside} previous particles inside D_j, expected {cfg.n_seeds}")
        if not np.array_equal(idx, select_seed_indices(prev.rho, cfg.P0)):
            problems.append(f"level {rec.level}: seeds are not the {cfg.n_seeds} closest particles")
        if abs(rec.epsilon - select_tolerance(prev.rho, cfg.P0)) != 0.0:
            problems.append(f"level {rec.level}: epsilon differs from the percentile rule")
        chains = rec.particles
        if not (np.array_equal(chains.theta[:, 0], prev.theta[idx]) and np.array_equal(chains.rho[:, 0], prev.rho[idx])):
            problems.append(f"level {rec.level}: chain first states are not the unmodified seeds")
    m = run.n_levels
    if run.evidence_estimate != cfg.P0 ** m:
        problems.append(f"evidence {run.evidence_estimate} != P0^{m}")
    reached = cfg.epsilon_target is not None and m > 0 and run.levels[-1].epsilon <= cfg.epsilon_target
    if reached != (run.termination == TERMINATION_TOLERANCE):
        problems.append(f"termination {run.termination!r} inconsistent with final epsilon")
    return problems
