import math

import numpy as np
import pytest
from scipy import integrate, stats

from abcsubsim.core import ContractViolation, Particle, ParticleSet, RandomStream
from abcsubsim.models import Ma2Model, OscillatorModel, ToyUniformModel
from abcsubsim.samplers import (
    AbcBudgetExceeded,
    ChainMatrix,
    ProposalSpec,
    abc_mcmc,
    mma_extend_chain,
    run_mma_chains,
    standard_abc,
)

TOY = ToyUniformModel()
Y0 = TOY.observation()


def toy_particle(theta):
    return Particle(np.array([theta]), np.array([theta]), abs(theta))


class TestProposalSpec:
    def test_positive(self):
        with pytest.raises(ContractViolation):
            ProposalSpec([0.1, 0.0])
        with pytest.raises(ContractViolation):
            ProposalSpec([np.inf])

    def test_scaled(self):
        assert ProposalSpec.scaled(0.4, [1.0, 0.5]).sigma.tolist() == [0.4, 0.2]


class TestStandardAbc:
    def test_infinite_tolerance(self):
        ps, draws = standard_abc(Ma2Model(n_obs=20), np.zeros(20), math.inf, 37, RandomStream(1))
        assert len(ps) == 37 and draws == 37

    def test_toy_acceptance_probability(self):
        accepted = draws = 0
        for r in range(20):
            ps, n = standard_abc(TOY, Y0, 0.1, 200, RandomStream(r))
            assert all(p.rho <= 0.1 for p in ps)
            accepted += len(ps)
            draws += n
        p = accepted / draws
        assert abs(p - 0.1) < 3 * math.sqrt(0.1 * 0.9 / draws)
        assert abs(draws / 20 - 10 * 200) < 3 * math.sqrt(200 * 0.9) / 0.1

    def test_zero_tolerance_budget(self):
        m = Ma2Model(n_obs=10)
        with pytest.raises(AbcBudgetExceeded) as info:
            standard_abc(m, np.ones(10), 0.0, 5, RandomStream(2), max_draws=5000)
        assert info.value.total_draws == 5000 and info.value.particles == []

    def test_partial_results_carried(self):
        with pytest.raises(AbcBudgetExceeded) as info:
            standard_abc(TOY, Y0, 0.01, 10_000, RandomStream(3), max_draws=10_000)
        assert 0 < len(info.value.particles) < 10_000
        assert all(p.rho <= 0.01 for p in info.value.particles)

    def test_negative_tolerance(self):
        with pytest.raises(ContractViolation):
            standard_abc(TOY, Y0, -1.0, 1, RandomStream(0))

    def test_reproducible(self):
        a, na = standard_abc(TOY, Y0, 0.3, 50, RandomStream(8, 1))
        b, nb = standard_abc(TOY, Y0, 0.3, 50, RandomStream(8, 1))
        assert na == nb and all(p.theta[0] == q.theta[0] for p, q in zip(a, b))


class TestAbcMcmc:
    def test_init_must_satisfy_tolerance(self):
        with pytest.raises(ContractViolation):
            abc_mcmc(TOY, Y0, 0.1, 10, toy_particle(0.5), ProposalSpec([0.1]), RandomStream(0))

    def test_states_inside_tolerance_and_repeat_on_rejection(self):
        chain = abc_mcmc(TOY, Y0, 0.2, 2000, toy_particle(0.1), ProposalSpec([0.3]), RandomStream(1))
        assert len(chain) == 2000
        rho = np.array([p.rho for p in chain])
        assert np.all(rho <= 0.2)
        theta = np.array([p.theta[0] for p in chain])
        repeats = np.mean(np.diff(theta) == 0)
        assert 0.3 < repeats < 0.95

    def test_rejects_when_outside_tolerance(self):
        # any move away from 0 leaves a zero tolerance region
        chain = abc_mcmc(TOY, Y0, 0.0, 200, toy_particle(0.0), ProposalSpec([0.1]), RandomStream(2))
        assert all(p.theta[0] == 0.0 for p in chain)

    def test_infinite_tolerance_acceptance_is_in_support_fraction(self):
        sigma = 0.5
        # stationary U(0,1) start: P(leave) = 2 * int_0^1 Phi(-u / sigma) du
        leave = 2 * integrate.quad(lambda u: stats.norm.cdf(-u / sigma), 0, 1)[0]
        expected = 1 - leave
        moves = total = 0
        for c in range(200):
            start = RandomStream(5, c).generator().random()
            chain = abc_mcmc(TOY, Y0, math.inf, 100, toy_particle(start), ProposalSpec([sigma]),
                             RandomStream(6, c))
            theta = np.array([start] + [p.theta[0] for p in chain])
            moves += int(np.count_nonzero(np.diff(theta)))
            total += 100
        rate = moves / total
        assert abs(rate - expected) < 3 * math.sqrt(expected * (1 - expected) / total)

    def test_long_run_truncated_uniform(self):
        chain = abc_mcmc(TOY, Y0, 0.2, 60_000, toy_particle(0.1), ProposalSpec([0.1]), RandomStream(7))
        theta = np.array([p.theta[0] for p in chain])[::20]
        assert stats.kstest(theta, stats.uniform(0, 0.2).cdf).pvalue > 0.01


class TestMma:
    def test_first_state_is_seed_and_tolerance_holds(self):
        m = Ma2Model(n_obs=50)
        y = m.simulate_batch(np.array([[0.6, 0.2]]), m.draw_noise(RandomStream(0).generator(), 1))[0]
        sy = m.summary(y[None])[0]
        g = RandomStream(1).generator()
        th = m.sample_prior(g, 500)
        x = m.simulate_batch(th, m.draw_noise(g, 500))
        rho = m.distances(x, sy)
        eps = float(np.sort(rho)[100])
        n = int(np.argmin(rho))
        chain, stats_ = mma_extend_chain(m, y, eps, Particle(th[n], x[n], float(rho[n])), 5,
                                         ProposalSpec([0.4, 0.2]), RandomStream(2))
        assert len(chain) == 5
        assert np.array_equal(chain[0].theta, th[n]) and chain[0].rho == rho[n]
        assert all(p.rho <= eps for p in chain)
        assert stats_.proposals == 4

    def test_seed_outside_region(self):
        with pytest.raises(ContractViolation):
            mma_extend_chain(TOY, Y0, 0.1, toy_particle(0.5), 5, ProposalSpec([0.1]), RandomStream(0))

    def test_tiny_sigma_moves_only_through_resimulation(self):
        m = Ma2Model(n_obs=30)
        g = RandomStream(3).generator()
        th = np.array([[0.6, 0.2]])
        x = m.simulate_batch(th, m.draw_noise(g, 1))
        y = m.simulate_batch(th, m.draw_noise(g, 1))[0]
        sy = m.summary(y[None])[0]
        rho = m.distances(x, sy)
        seed = Particle(th[0], x[0], float(rho[0]))
        chain, st = mma_extend_chain(m, y, float(rho[0]) * 4, seed, 50, ProposalSpec([1e-300, 1e-300]),
                                     RandomStream(4))
        assert all(np.array_equal(p.theta, th[0]) for p in chain)
        assert st.pair_accepts == 0 and st.state_updates > 0
        assert len({p.rho for p in chain}) > 1

    def test_uniform_prior_component_acceptance_is_support_indicator(self):
        # box (0, 3]^2 with infinite tolerance: only steps leaving the box are refused
        m = OscillatorModel(np.zeros(4), sigma_e2=0.0, sigma_m2=0.0)
        seeds = ParticleSet(np.full((1, 2), 1.5), np.zeros((1, 4)), np.zeros(1))
        chains, st = run_mma_chains(m, np.zeros(4), math.inf, seeds, 200, ProposalSpec([1e-3, 1e-3]),
                                    [RandomStream(5)])
        assert st.component_accepts.tolist() == [199, 199]

    def test_infinite_tolerance_box_occupancy_uniform(self):
        K = 2000
        g = RandomStream(9).generator()
        start = g.random((K, 1))
        seeds = ParticleSet(start, start.copy(), start[:, 0].copy())
        chains, _ = run_mma_chains(TOY, Y0, math.inf, seeds, 6, ProposalSpec([0.3]),
                                   [RandomStream(10, k) for k in range(K)])
        assert stats.kstest(chains.theta[:, -1, 0], "uniform").pvalue > 0.01

    def test_chain_independent_of_batch(self):
        K = 6
        start = np.linspace(0.01, 0.19, K)[:, None]
        seeds = ParticleSet(start, start.copy(), start[:, 0].copy())
        streams = [RandomStream(11, k) for k in range(K)]
        together, _ = run_mma_chains(TOY, Y0, 0.2, seeds, 5, ProposalSpec([0.05]), streams)
        for k in range(K):
            alone, _ = run_mma_chains(TOY, Y0, 0.2, ParticleSet(start[k:k + 1], start[k:k + 1], start[k]), 5,
                                      ProposalSpec([0.05]), [streams[k]])
            assert np.array_equal(alone.theta[0], together.theta[k])

    def test_chain_matrix_flatten_order(self):
        theta = np.arange(12.0).reshape(2, 3, 2)
        cm = ChainMatrix(theta, np.zeros((2, 3, 1)), np.arange(6.0).reshape(2, 3), level=1)
        flat = cm.flatten()
        assert flat.rho.tolist() == [0, 1, 2, 3, 4, 5]
        assert np.array_equal(flat.theta[4], theta[1, 1])
        assert (cm.n_chains, cm.chain_length, len(cm)) == (2, 3, 6)

    def test_argument_checks(self):
        seeds = ParticleSet(np.array([[0.05]]), np.array([[0.05]]), np.array([0.05]))
        with pytest.raises(ContractViolation):
            run_mma_chains(TOY, Y0, 0.1, seeds, 0, ProposalSpec([0.1]), [RandomStream(0)])
        with pytest.raises(ContractViolation):
            run_mma_chains(TOY, Y0, 0.1, seeds, 3, ProposalSpec([0.1, 0.1]), [RandomStream(0)])
        with pytest.raises(ContractViolation):
            run_mma_chains(TOY, Y0, 0.1, seeds, 3, ProposalSpec([0.1]), [])
