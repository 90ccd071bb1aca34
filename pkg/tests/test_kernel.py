import math

import numpy as np
import pytest
from scipy import integrate

from pdmp_detect.kernel import (
    make_cost_params,
    no_jump_prob,
    stage_cost,
    step_sample,
    strategy_cost,
    strategy_cost_batch,
    terminal_cost,
)
from pdmp_detect.model import DiscreteState, NoiseSpec, PdmpModel, ZeroIntensity, initial_state

from conftest import model_1a


def costs_default(d=3, alpha=4.0, beta=1.0, gamma=1.5, delta=1 / 6, N=36):
    return make_cost_params(alpha, beta, gamma, delta, N, d)


class TestNoJumpProb:
    def test_first_interval(self):
        m = model_1a()
        val, _ = integrate.quad(lambda s: s, 0.0, 1 / 6)
        assert no_jump_prob(m, 0) == pytest.approx(math.exp(-val), rel=1e-12)
        assert no_jump_prob(m, 0) == pytest.approx(math.exp(-1 / 72), rel=1e-12)

    def test_late_interval_closed_form(self):
        m = model_1a()
        # integral of t over one step starting at n*delta is delta^2 (2n+1)/2
        assert no_jump_prob(m, 35) == pytest.approx(math.exp(-71 / 72), rel=1e-12)

    def test_zero_step(self):
        m = model_1a(delta=0.0)
        assert no_jump_prob(m, 0) == 1.0


class TestStepSample:
    def test_post_jump_deterministic(self, rng):
        m = model_1a()
        st = DiscreteState(2, 1.0, 0.0)
        for _ in range(5):
            nxt = step_sample(m, 3, st, rng)
            assert nxt.mode == 2
            assert nxt.x == pytest.approx(math.exp(0.5 / 6), rel=1e-12)

    def test_zero_intensity_stays(self, rng):
        m = PdmpModel(
            example="1a",
            d=3,
            speeds=(0.1, 0.5, 1.0),
            noise=NoiseSpec(0.5, 2.1),
            delta=1 / 6,
            horizon_steps=36,
            intensity=ZeroIntensity(),
        )
        st = initial_state(m)
        for n in range(10):
            st = step_sample(m, n, st, rng)
            assert st.mode == 0

    def test_stay_probability_monte_carlo(self, rng):
        m = model_1a()
        n_draws = 200_000
        stays = 0
        st = initial_state(m)
        for _ in range(n_draws):
            stays += step_sample(m, 0, st, rng).mode == 0
        p = math.exp(-1 / 72)
        se = math.sqrt(p * (1 - p) / n_draws)
        assert stays / n_draws == pytest.approx(p, abs=3.5 * se)

    def test_one_jump_absorbing(self, rng):
        m = model_1a()
        for _ in range(200):
            st = initial_state(m)
            jumped_to = 0
            for n in range(m.horizon_steps):
                st = step_sample(m, n, st, rng)
                if jumped_to:
                    assert st.mode == jumped_to
                jumped_to = st.mode
        # mixture check: stay prob + integral of the jump density is 1
        stay = no_jump_prob(m, 5)
        dens, _ = integrate.quad(
            lambda s: (5 / 6 + s) * math.exp(-integrate.quad(lambda z: 5 / 6 + z, 0, s)[0]), 0, 1 / 6
        )
        assert stay + dens == pytest.approx(1.0, abs=1e-10)

    def test_jump_offset_marginal(self, rng):
        # conditional offset density lambda(t0+s) exp(-Lambda(s)) / (1 - stay)
        m = model_1a()
        n = 10
        draws = np.array([step_sample(m, n, initial_state(m), rng).mode > 0 for _ in range(20_000)])
        p_jump = 1.0 - no_jump_prob(m, n)
        se = math.sqrt(p_jump * (1 - p_jump) / 20_000)
        assert draws.mean() == pytest.approx(p_jump, abs=4 * se)


class TestCosts:
    def test_stage_cost_modes(self):
        c = costs_default(beta=2.0)
        assert stage_cost(c, 0) == 0.0
        assert stage_cost(c, 1) == pytest.approx(1 / 3)
        c1 = costs_default(beta=1.0)
        assert stage_cost(c1, 2) == pytest.approx(1 / 6)

    def test_terminal_cost_cases(self):
        c = costs_default(alpha=4.0, gamma=1.5)
        assert terminal_cost(c, 0, 3) == 4.0
        assert terminal_cost(c, 2, 2) == 0.0
        assert terminal_cost(c, 1, 2) == 1.5
        assert terminal_cost(c, 2, 0) == stage_cost(c, 2)

    def test_gamma_matrix(self):
        g = np.array([[0.0, 2.0], [0.5, 0.0]])
        c = make_cost_params(4.0, 1.0, g, 1 / 6, 36, 2)
        assert terminal_cost(c, 1, 2) == 2.0
        assert terminal_cost(c, 2, 1) == 0.5


class TestStrategyCost:
    def test_one_late_step(self):
        c = costs_default(beta=1.0)
        # jump lands between epochs 4 and 5; stop at 6 with the right call
        modes = [0] * 5 + [2] * 32
        assert strategy_cost(c, modes, 6, 2) == pytest.approx(c.beta * c.delta)

    def test_no_stop_no_jump(self):
        c = costs_default()
        assert strategy_cost(c, [0] * 37, None, 0) == 0.0

    def test_immediate_false_alarm(self):
        c = costs_default(alpha=4.0)
        modes = [0] * 10 + [1] * 27
        assert strategy_cost(c, modes, 0, 3) == 4.0

    def test_no_stop_accrues_all_stage_costs(self):
        c = costs_default(beta=1.0)
        modes = [0] * 7 + [1] * 30
        assert strategy_cost(c, modes, None, 0) == pytest.approx(30 * c.beta * c.delta)

    def test_positive_action_without_stop_rejected(self):
        c = costs_default()
        with pytest.raises(ValueError):
            strategy_cost(c, [0] * 37, None, 2)

    def test_stop_without_decision_rejected(self):
        c = costs_default()
        with pytest.raises(ValueError):
            strategy_cost(c, [0] * 37, 5, 0)

    def test_batch_matches_scalar(self, rng):
        c = costs_default()
        N = c.horizon_steps
        modes = rng.integers(0, 2, size=(64, N + 1)).cumsum(axis=1)
        modes = np.minimum(modes, 1) * rng.integers(1, 4, size=(64, 1))
        taus = rng.integers(0, N + 2, size=64)
        actions = np.where(taus <= N, rng.integers(1, 4, size=64), 0)
        got = strategy_cost_batch(c, modes, taus, actions)
        for r in range(64):
            tau = None if taus[r] > N else int(taus[r])
            want = strategy_cost(c, modes[r], tau, int(actions[r]))
            assert got[r] == pytest.approx(want, abs=1e-12)

    def test_cost_bounds(self, rng):
        c = costs_default()
        N = c.horizon_steps
        modes = np.where(np.arange(N + 1)[None, :] >= 5, 2, 0) * np.ones((8, 1), dtype=int)
        taus = rng.integers(0, N + 2, size=8)
        actions = np.where(taus <= N, 1, 0)
        cost = strategy_cost_batch(c, modes, taus, actions)
        assert (cost >= 0).all()
        assert (cost <= c.alpha + N * c.beta * c.delta + c.gamma_max).all()
