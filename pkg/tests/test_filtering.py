import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdmp_detect.filtering import (
    BarChainSampler,
    Belief,
    belief_l1,
    grid_link_values,
    oracle_filter,
    psi_bar,
    psi_bar_batch,
    simulate_bar_chain,
    start_belief,
)
from pdmp_detect.model import NoiseSpec, PdmpModel, ZeroIntensity, observe, simulate_trajectory
from pdmp_detect.quantize import CLVQSchedule, QuantGrid, TransitionMatrix, clvq_train, estimate_transitions

from conftest import model_1a


SMALL = CLVQSchedule(n_samples=30_000)


@pytest.fixture(scope="module")
def pipeline_1a():
    m = model_1a()
    grids = clvq_train(m, [15] * 37, SMALL, np.random.default_rng(41))
    mats = estimate_transitions(m, grids, 100_000, np.random.default_rng(42))
    return m, grids, mats


def toy_setup():
    """Two hand-built grids and a hand-built transition matrix."""
    g0 = QuantGrid(0, np.array([0]), np.array([[1.0]]))
    g1 = QuantGrid(1, np.array([0, 1, 2]), np.array([[1.0], [2.0], [4.0]]))
    p = TransitionMatrix(0, np.array([[0.6, 0.3, 0.1]]))
    m = model_1a(sigma2=0.01, trunc=0.3)
    return m, [g0, g1], [p]


class TestPsiBar:
    def test_concentrates_with_tight_noise(self):
        m, grids, mats = toy_setup()
        belief, deg = psi_bar(0, grids, mats, start_belief(grids), 2.0, m)
        assert not deg
        assert belief.w[1] >= 0.999

    def test_uniform_likelihood_is_pure_prediction(self):
        # equal grid values make the likelihood cancel in the normalization
        g0 = QuantGrid(0, np.array([0]), np.array([[1.0]]))
        g1 = QuantGrid(1, np.array([0, 1]), np.array([[1.0], [1.0]]))
        p = TransitionMatrix(0, np.array([[0.7, 0.3]]))
        m = model_1a(sigma2=0.5)
        belief, deg = psi_bar(0, [g0, g1], [p], start_belief([g0, g1]), 1.2, m)
        assert not deg
        assert np.allclose(belief.w, [0.7, 0.3], atol=1e-12)

    def test_degenerate_falls_back_to_prediction(self):
        m, grids, mats = toy_setup()
        belief, deg = psi_bar(0, grids, mats, start_belief(grids), 40.0, m)
        assert deg
        assert np.allclose(belief.w, mats[0].probs[0])

    def test_simplex_on_random_inputs(self, pipeline_1a, rng):
        m, grids, mats = pipeline_1a
        n = 7
        for _ in range(200):
            w = rng.dirichlet(np.ones(grids[n].ell))
            y = rng.uniform(0.0, 3.0)
            belief, _ = psi_bar(n, grids, mats, Belief(n, w), y, m)
            assert (belief.w >= 0).all()
            assert abs(belief.w.sum() - 1.0) <= 1e-10

    def test_batch_matches_scalar(self, pipeline_1a, rng):
        m, grids, mats = pipeline_1a
        n = 11
        B = 64
        thetas = rng.dirichlet(np.ones(grids[n].ell), size=B)
        ys = rng.uniform(0.0, 3.0, B)
        lik = m.noise.density(ys[:, None] - grid_link_values(m, grids[n + 1])[None, :])
        out, deg = psi_bar_batch(thetas, mats[n].probs, lik)
        for r in range(0, B, 7):
            single, d1 = psi_bar(n, grids, mats, Belief(n, thetas[r]), float(ys[r]), m)
            assert np.allclose(out[r], single.w, atol=1e-12)
            assert deg[r] == d1


class TestBarChain:
    def test_single_point_chain_stays_degenerate(self, rng):
        m = PdmpModel(
            example="1a",
            d=3,
            speeds=(0.1, 0.5, 1.0),
            noise=NoiseSpec(0.5, 2.1),
            delta=1 / 6,
            horizon_steps=8,
            intensity=ZeroIntensity(),
        )
        grids = clvq_train(m, [1] * 9, SMALL, rng)
        mats = estimate_transitions(m, grids, 10_000, rng)
        chain = simulate_bar_chain(8, grids, mats, m, rng)
        for belief, _ in chain:
            assert belief.w[0] == 1.0

    def test_beliefs_stay_on_simplex(self, pipeline_1a, rng):
        m, grids, mats = pipeline_1a
        chain = simulate_bar_chain(m.horizon_steps, grids, mats, m, rng)
        assert len(chain) == m.horizon_steps + 1
        for belief, y in chain:
            assert (belief.w >= 0).all()
            assert abs(belief.w.sum() - 1.0) <= 1e-10

    def test_mode0_mass_tracks_prior(self, pipeline_1a):
        m, grids, mats = pipeline_1a
        sampler = BarChainSampler(m, grids, mats)
        rng = np.random.default_rng(43)
        sums = {}
        n_chains = 4000
        for n, thetas, ys in sampler.stream(n_chains, rng):
            lo, hi = grids[n].mode_slice(0)
            sums[n] = thetas[:, lo:hi].sum(axis=1).mean()
        for n in (6, 12, 24):
            prior = math.exp(-((n / 6) ** 2) / 2.0)
            # surrogate-chain mode-0 weight is unbiased for the prior mass
            assert sums[n] == pytest.approx(prior, abs=4.0 * math.sqrt(prior * (1 - prior) / n_chains) + 0.01)


class TestBeliefL1:
    def test_identical(self):
        a = Belief(3, np.array([0.25, 0.75]))
        assert belief_l1(a, a) == 0.0

    def test_disjoint_point_masses(self):
        a = Belief(0, np.array([1.0, 0.0]))
        b = Belief(0, np.array([0.0, 1.0]))
        assert belief_l1(a, b) == 2.0

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError):
            belief_l1(Belief(0, np.array([1.0])), Belief(1, np.array([1.0])))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2**31 - 1))
    def test_symmetry(self, k, seed):
        r = np.random.default_rng(seed)
        a, b = Belief(0, r.dirichlet(np.ones(k))), Belief(0, r.dirichlet(np.ones(k)))
        assert belief_l1(a, b) == pytest.approx(belief_l1(b, a), abs=1e-15)


class TestOracleFilter:
    def test_prior_with_no_observations(self):
        m = model_1a()
        ob = oracle_filter(m, [], jump_time_grid_size=800)
        # total jumped mass matches 1 - survival within the quadrature error
        assert ob.weights.sum() + ob.no_jump_weight == pytest.approx(1.0, abs=1e-12)
        jumped_by_2 = ob.weights[ob.jump_times <= 2.0].sum()
        assert jumped_by_2 == pytest.approx(1.0 - math.exp(-2.0), abs=2.0 / 800)

    def test_identifies_mode_with_tight_noise(self, rng):
        m = model_1a(sigma2=0.01)
        hits = 0
        runs = 60
        for _ in range(runs):
            tr = simulate_trajectory(m, rng)
            obs = observe(tr, m, rng)
            ob = oracle_filter(m, obs.y, 300)
            marg = ob.mode_marginal(m.d, m.horizon_steps * m.delta)
            hits += int(np.argmax(marg)) == tr.post_mode
        assert hits / runs >= 0.9

    def test_quadrature_refinement(self, rng):
        m = model_1a(sigma2=0.5)
        tr = simulate_trajectory(m, rng)
        obs = observe(tr, m, rng)
        t_end = m.horizon_steps * m.delta
        coarse = oracle_filter(m, obs.y, 200).mode_marginal(m.d, t_end)
        fine = oracle_filter(m, obs.y, 400).mode_marginal(m.d, t_end)
        finest = oracle_filter(m, obs.y, 800).mode_marginal(m.d, t_end)
        # Richardson-style: the 400->800 change bounds the truncation error scale
        assert np.abs(fine - finest).max() <= 2.0 * np.abs(coarse - fine).max() + 1e-4
