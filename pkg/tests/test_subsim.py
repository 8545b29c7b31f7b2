import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from abcsubsim.config import build_model, generate_dataset, load_preset
from abcsubsim.core import ContractViolation, Particle, ParticleSet, RandomStream
from abcsubsim.models import Ma2Model, ToyUniformModel
from abcsubsim.samplers import ProposalSpec
from abcsubsim.subsim import (
    TERMINATION_BUDGET,
    TERMINATION_TOLERANCE,
    AdaptSettings,
    SubSimConfig,
    adapt_proposal_scale,
    estimate_evidence_rejection,
    estimate_evidence_subsim,
    rejection_evidence_curve,
    run_abc_subsim,
    select_seed_indices,
    select_seeds,
    select_tolerance,
    sensitivity_sweep,
    verify_run,
)

TOY = ToyUniformModel()
Y0 = TOY.observation()


def toy_seeds(eps, n, gen):
    th = gen.random((n, 1)) * eps
    return ParticleSet(th, th.copy(), th[:, 0].copy())


def toy_run(seed, **kw):
    kw.setdefault("m_max", 4)
    return run_abc_subsim(TOY, Y0, SubSimConfig(**kw), RandomStream(seed))


class TestSelectTolerance:
    def test_tenths(self):
        d = np.arange(1, 11) / 10
        assert select_tolerance(d, 0.2) == pytest.approx(0.25, abs=1e-15)

    def test_constant(self):
        assert select_tolerance([0.7] * 20, 0.2) == 0.7

    def test_shuffled_integers(self, gen):
        d = gen.permutation(np.arange(1, 101)).astype(float)
        assert select_tolerance(d, 0.2) == 20.5

    @given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=10, max_size=10))
    def test_sort_oracle(self, d):
        s = sorted(d)
        assert select_tolerance(d, 0.2) == 0.5 * (s[1] + s[2])

    def test_non_integral_rejected(self):
        with pytest.raises(ContractViolation):
            select_tolerance(np.arange(11.0), 0.2)


class TestSelectSeeds:
    def test_two_smallest(self):
        rho = [0.9, 0.1, 0.5, 0.3, 0.05, 0.8, 0.7, 0.6, 0.4, 0.2]
        ps = ParticleSet(np.arange(10.0)[:, None], np.zeros((10, 1)), np.array(rho))
        seeds = select_seeds(ps, 0.2)
        assert [s.rho for s in seeds] == [0.05, 0.1]
        assert [float(s.theta[0]) for s in seeds] == [4.0, 1.0]

    def test_ties_lowest_index_first(self):
        rho = [0.5, 0.2, 0.2, 0.9, 0.2, 0.7, 0.8, 0.6, 0.4, 0.3]
        assert select_seed_indices(rho, 0.2).tolist() == [1, 2]

    def test_particle_list_input(self):
        ps = [Particle(np.array([float(i)]), np.zeros(1), r) for i, r in enumerate([3, 1, 2, 0, 5] * 2)]
        assert [float(p.theta[0]) for p in select_seeds(ps, 0.2)] == [3.0, 8.0]

    @given(st.permutations(list(range(20))), st.lists(st.integers(0, 5), min_size=20, max_size=20))
    def test_permutation_invariance(self, perm, values):
        rho = np.array(values, dtype=float)
        base = sorted(rho[select_seed_indices(rho, 0.25)].tolist())
        permuted = rho[list(perm)]
        assert sorted(permuted[select_seed_indices(permuted, 0.25)].tolist()) == base
        # the selected values are the 5 smallest, so the multiset is permutation invariant
        assert base == sorted(rho.tolist())[:5]


class TestEvidence:
    @pytest.mark.parametrize("m,p0,expected", [(1, 0.2, 0.2), (3, 0.2, 0.008), (0, 0.2, 1.0), (0, 0.5, 1.0)])
    def test_values(self, m, p0, expected):
        assert estimate_evidence_subsim(m, p0) == pytest.approx(expected, rel=1e-15)

    def test_negative(self):
        with pytest.raises(ContractViolation):
            estimate_evidence_subsim(-1, 0.2)

    def test_rejection_infinite(self):
        res = estimate_evidence_rejection(Ma2Model(n_obs=50), np.zeros(50), math.inf, 1000, RandomStream(3))
        assert res.estimate == 1.0 and res.hits == 1000 and not res.low_count

    def test_rejection_toy(self):
        n = 20000
        res = estimate_evidence_rejection(TOY, Y0, 0.25, n, RandomStream(4))
        se = math.sqrt(0.25 * 0.75 / n)
        assert abs(res.estimate - 0.25) <= 3 * se

    def test_rejection_low_count(self):
        with pytest.warns(UserWarning):
            res = estimate_evidence_rejection(TOY, Y0, 0.0, 100, RandomStream(5))
        assert res.estimate == 0.0 and res.low_count

    def test_curve_one_estimate_per_tolerance(self):
        a = rejection_evidence_curve(TOY, Y0, [0.5, 0.1], 2000, RandomStream(6))
        b = rejection_evidence_curve(TOY, Y0, [0.1], 2000, RandomStream(6).derive("x"))
        assert a[0].draws == 2000 and 0.4 < a[0].estimate < 0.6
        assert 0.07 < a[1].estimate < 0.13
        assert len(b) == 1


class TestConfig:
    @pytest.mark.parametrize("kw", [{"P0": 0.3}, {"P0": 0.0}, {"N": 1001}, {"sigma0": 0.0}, {"m_max": 0}])
    def test_rejected(self, kw):
        with pytest.raises(ContractViolation):
            SubSimConfig(**kw)

    def test_adapt_band(self):
        with pytest.raises(ContractViolation):
            AdaptSettings(band=(0.4, 0.2))


class TestAdapt:
    def test_in_band_unchanged(self, gen):
        seeds = toy_seeds(1.0, 100, gen)
        res = adapt_proposal_scale(TOY, Y0, 1.0, seeds, ProposalSpec([1.0]), AdaptSettings(), RandomStream(7))
        assert res.converged and res.rounds == 1
        assert 0.2 <= res.acceptance <= 0.4
        assert res.proposal.sigma.tolist() == [1.0]

    def test_oracle_rate_for_unit_scale(self):
        # P(U + Z in [0, 1]) for U ~ U(0, 1), Z ~ N(0, 1)
        exact, _ = integrate.quad(lambda u: stats.norm.cdf(1 - u) - stats.norm.cdf(-u), 0, 1)
        assert 0.2 < exact < 0.4

    def test_high_acceptance_grows(self, gen):
        seeds = toy_seeds(1.0, 100, gen)
        res = adapt_proposal_scale(TOY, Y0, math.inf, seeds, ProposalSpec([1e-3]), AdaptSettings(), RandomStream(8))
        assert res.history[0][1] > 0.9
        assert res.proposal.sigma[0] > 1e-3

    def test_low_acceptance_shrinks(self, gen):
        seeds = toy_seeds(0.01, 100, gen)
        res = adapt_proposal_scale(TOY, Y0, 0.01, seeds, ProposalSpec([1.0]), AdaptSettings(), RandomStream(9))
        assert res.proposal.sigma[0] < 1.0
        assert res.converged

    def test_unconverged_returns_closest(self, gen):
        seeds = toy_seeds(1.0, 100, gen)
        res = adapt_proposal_scale(
            TOY, Y0, math.inf, seeds, ProposalSpec([1e-6]), AdaptSettings(max_rounds=2), RandomStream(10)
        )
        assert not res.converged and res.rounds == 2
        gaps = [max(0.2 - a, a - 0.4, 0) for _, a in res.history]
        assert res.multiplier == res.history[int(np.argmin(gaps))][0]

    def test_deterministic(self, gen):
        seeds = toy_seeds(0.3, 100, gen)
        a = adapt_proposal_scale(TOY, Y0, 0.3, seeds, ProposalSpec([0.05]), AdaptSettings(), RandomStream(11))
        b = adapt_proposal_scale(TOY, Y0, 0.3, seeds, ProposalSpec([0.05]), AdaptSettings(), RandomStream(11))
        assert a.history == b.history

    def test_empty_seeds(self):
        empty = ParticleSet(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))
        with pytest.raises(ContractViolation):
            adapt_proposal_scale(TOY, Y0, 1.0, empty, ProposalSpec([1.0]), AdaptSettings(), RandomStream(1))


class TestRunToy:
    def test_infinite_target_one_level(self):
        run = toy_run(1, epsilon_target=math.inf)
        assert run.n_levels == 1
        assert run.evidence_estimate == pytest.approx(0.2)
        assert run.termination == TERMINATION_TOLERANCE

    def test_budget_termination(self):
        run = toy_run(2, m_max=3)
        assert run.n_levels == 3 and run.termination == TERMINATION_BUDGET

    def test_target_reached(self):
        run = toy_run(3, m_max=10, epsilon_target=0.01)
        assert run.termination == TERMINATION_TOLERANCE
        assert run.epsilons[-1] <= 0.01 < run.epsilons[-2]

    def test_epsilon_tracks_quantile(self):
        ratios = []
        for s in range(10):
            run = toy_run(s)
            ratios.append([0.2 ** (j + 1) / e for j, e in enumerate(run.epsilons)])
        mean = np.mean(ratios, axis=0)
        assert np.all(np.abs(mean - 1) <= 0.2), mean

    def test_level_structure(self):
        run = toy_run(4)
        assert verify_run(run, TOY, Y0) == []
        assert len(run.levels[0].flat) == 1000
        for rec in run.conditional_levels:
            assert rec.particles.theta.shape == (200, 5, 1)
            assert np.all(rec.flat.rho <= rec.epsilon)
        assert all(a > b for a, b in zip(run.epsilons, run.epsilons[1:]))

    def test_deterministic(self):
        a, b = toy_run(5), toy_run(5)
        for ra, rb in zip(a.levels, b.levels):
            assert np.array_equal(ra.flat.theta, rb.flat.theta)
            assert np.array_equal(ra.flat.rho, rb.flat.rho)
            assert ra.scale == rb.scale

    def test_needs_stream(self):
        with pytest.raises(TypeError):
            run_abc_subsim(TOY, Y0, SubSimConfig(), np.random.default_rng(0))

    def test_observation_length(self):
        with pytest.raises(ContractViolation):
            run_abc_subsim(TOY, np.zeros(3), SubSimConfig(), RandomStream(1))

    def test_schedule_without_adaptation(self):
        cfg = SubSimConfig(m_max=3, adapt=AdaptSettings(enabled=False), sigma_schedule=(0.3, 0.1))
        run = run_abc_subsim(TOY, Y0, cfg, RandomStream(6))
        assert [r.scale for r in run.conditional_levels] == [0.3, 0.1, 0.1]
        assert all(r.adapt_converged is None for r in run.conditional_levels)

    def test_conditional_law(self):
        run = toy_run(7, m_max=2, N=5000)
        eps = run.epsilons[-1]
        # states within a chain are dependent; chain end points are independent across chains
        last = run.levels[-1].particles.theta[:, -1, 0]
        p = stats.kstest(last, stats.uniform(0, eps).cdf).pvalue
        assert p >= 0.01


class TestVerifyRun:
    def test_detects_corruption(self):
        run = toy_run(8, m_max=2)
        run.levels[2].particles.rho[0, 1] = 0.0
        msgs = verify_run(run, TOY, Y0)
        assert any("recomputed" in m for m in msgs)

    def test_detects_modified_seed(self):
        run = toy_run(9, m_max=2)
        rec = run.levels[1]
        rec.particles.theta[0, 0] += 1e-3
        assert any("first states" in m for m in verify_run(run, TOY, Y0))

    def test_detects_wrong_evidence(self):
        run = toy_run(10, m_max=2)
        run.evidence_estimate = 0.05
        assert any("evidence" in m for m in verify_run(run, TOY, Y0))

    def test_detects_outside(self):
        run = toy_run(11, m_max=2)
        rec = run.levels[2]
        rec.particles.theta[3, 2] = rec.particles.x[3, 2] = 0.9
        rec.particles.rho[3, 2] = 0.9
        assert any("outside" in m for m in verify_run(run, TOY, Y0))


class TestSensitivity:
    def test_rows(self):
        run = toy_run(12, m_max=2)
        rows = sensitivity_sweep(TOY, Y0, run, [1e-4, 0.01, 1.0], RandomStream(13))
        assert [(r["level"], r["sigma"]) for r in rows] == [(j, s) for j in (1, 2) for s in (1e-4, 0.01, 1.0)]
        for lvl in (1, 2):
            acc = [r["acceptance"] for r in rows if r["level"] == lvl]
            assert acc[0] > acc[2]
        again = sensitivity_sweep(TOY, Y0, run, [1e-4, 0.01, 1.0], RandomStream(13))
        assert rows == again


class TestMa2:
    def test_l100_three_levels(self):
        cfg = load_preset("ma2-l100")
        data = generate_dataset("ma2", cfg.model_params, cfg.theta_true, cfg.data_seed)
        model = build_model("ma2", cfg.model_params, data.theta_true)
        run = run_abc_subsim(model, data.y, cfg.subsim, RandomStream(cfg.seed, 0))
        assert run.n_levels == 3
        assert verify_run(run, model, data.y) == []

    def test_l1000_sigma_schedule(self):
        # adapted scale per level against the reference schedule, factor 2 inclusive
        cfg = load_preset("ma2-l1000")
        data = generate_dataset("ma2", cfg.model_params, cfg.theta_true, cfg.data_seed)
        model = build_model("ma2", cfg.model_params, data.theta_true)
        run = run_abc_subsim(model, data.y, cfg.subsim, RandomStream(cfg.seed, 0))
        ref = (0.4, 0.2, 0.1, 0.04)
        scales = [r.scale for r in run.conditional_levels]
        assert len(scales) == 4
        for s, r in zip(scales, ref):
            assert r / 2 <= s <= 2 * r, (scales, ref)
