import math

import numpy as np
import pytest

from pdmp_detect.model import NoiseSpec, PdmpModel, ZeroIntensity, simulate_trajectory_batch
from pdmp_detect.quantize import (
    CLVQSchedule,
    QuantGrid,
    _lloyd_polish,
    _nearest,
    clvq_train,
    distortion,
    estimate_transitions,
    project,
    project_batch,
    scalar_distortion,
    train_scalar_grid,
)

from conftest import model_1a, model_2b


SMALL = CLVQSchedule(n_samples=40_000)


def deterministic_model():
    return PdmpModel(
        example="1a",
        d=3,
        speeds=(0.1, 0.5, 1.0),
        noise=NoiseSpec(0.5, 2.1),
        delta=1 / 6,
        horizon_steps=8,
        intensity=ZeroIntensity(),
    )


class TestClvqTrain:
    def test_deterministic_model_single_points(self, rng):
        m = deterministic_model()
        grids = clvq_train(m, [1] * 9, SMALL, rng)
        for n, g in enumerate(grids):
            assert g.ell == 1
            assert g.modes[0] == 0
            assert g.coords[0, 0] == pytest.approx(1.0, abs=1e-12)  # flow is constant

    def test_grid_contains_start_point(self, rng):
        m = model_1a()
        grids = clvq_train(m, [21] * 37, CLVQSchedule(n_samples=20_000), rng)
        assert grids[0].ell == 1
        assert grids[0].coords[0, 0] == m.x0

    def test_more_points_less_distortion(self, rng):
        m = model_1a()
        g10 = clvq_train(m, [10] * 37, SMALL, np.random.default_rng(5))
        g21 = clvq_train(m, [21] * 37, SMALL, np.random.default_rng(5))
        n = 20
        d10 = distortion(g10[n], m, 100_000, np.random.default_rng(6))
        d21 = distortion(g21[n], m, 100_000, np.random.default_rng(6))
        assert d21 < d10

    def test_positions_inside_state_bounds(self, rng):
        for make in (model_1a, model_2b):
            m = make()
            grids = clvq_train(m, [12] * (m.horizon_steps + 1), SMALL, rng)
            lo, hi = m.state_bounds
            for g in grids:
                assert (g.coords[:, 0] >= lo - 1e-9).all()
                assert (g.coords[:, 0] <= hi + 1e-9).all()

    def test_lloyd_fixed_point_residual(self, rng):
        m = model_1a()
        grids = clvq_train(m, [15] * 37, SMALL, np.random.default_rng(7))
        batch = simulate_trajectory_batch(m, 40_000, np.random.default_rng(7))
        n = 18
        g = grids[n]
        coords = batch.coords_at(n * m.delta)
        modes = batch.modes_at(n * m.delta)
        worst = 0.0
        for mode in g.present_modes():
            lo, hi = g.mode_slice(mode)
            sub = coords[modes == mode]
            if not len(sub):
                continue
            idx = _nearest(g.coords[lo:hi], sub)
            for j in range(hi - lo):
                cell = sub[idx == j]
                if len(cell):
                    worst = max(worst, float(np.abs(cell.mean(axis=0) - g.coords[lo + j]).max()))
        assert worst <= 2e-3  # training-sample residual is 1e-3; fresh sample doubles it

    def test_grid_size_floor_error(self, rng):
        m = model_1a()
        with pytest.raises(ValueError):
            clvq_train(m, [2] * 37, SMALL, rng)


class TestProject:
    def grid(self):
        modes = np.array([0, 1, 1, 2])
        coords = np.array([[1.0], [0.5], [2.0], [0.7]])
        return QuantGrid(3, modes, coords)

    def test_exact_point(self):
        g = self.grid()
        for i in range(g.ell):
            assert project(g, int(g.modes[i]), g.coords[i]) == i

    def test_tie_goes_to_lower_index(self):
        g = QuantGrid(0, np.array([1, 1]), np.array([[0.0], [2.0]]))
        assert project(g, 1, np.array([1.0])) == 0

    def test_mode_preserving(self):
        g = self.grid()
        # a mode-2 state never lands on the closer mode-1 point
        idx = project(g, 2, np.array([0.51]))
        assert g.modes[idx] == 2

    def test_missing_mode_raises(self):
        g = self.grid()
        with pytest.raises(ValueError):
            project(g, 3, np.array([1.0]))

    def test_idempotent(self):
        g = self.grid()
        for i in range(g.ell):
            j = project(g, int(g.modes[i]), g.coords[i])
            assert project(g, int(g.modes[j]), g.coords[j]) == j

    def test_batch_matches_scalar(self, rng):
        m = model_1a()
        grids = clvq_train(m, [12] * 37, SMALL, rng)
        batch = simulate_trajectory_batch(m, 500, rng)
        n = 12
        modes = batch.modes_at(n * m.delta)
        coords = batch.coords_at(n * m.delta)
        got = project_batch(grids[n], modes, coords)
        for r in range(0, 500, 37):
            assert got[r] == project(grids[n], int(modes[r]), coords[r])


class TestTransitions:
    def test_single_point_chain(self, rng):
        m = deterministic_model()
        grids = clvq_train(m, [1] * 9, SMALL, rng)
        mats = estimate_transitions(m, grids, 20_000, rng)
        for mt in mats:
            assert mt.probs.shape == (1, 1)
            assert mt.probs[0, 0] == 1.0

    def test_row_sums(self, rng):
        m = model_1a()
        grids = clvq_train(m, [21] * 37, SMALL, rng)
        mats = estimate_transitions(m, grids, 100_000, rng)
        for mt in mats:
            assert np.abs(mt.probs.sum(axis=1) - 1.0).max() <= 1e-12

    def test_absorbing_mode_support(self, rng):
        m = model_1a()
        grids = clvq_train(m, [15] * 37, SMALL, rng)
        mats = estimate_transitions(m, grids, 50_000, rng)
        for n, mt in enumerate(mats):
            src_modes = grids[n].modes
            dst_modes = grids[n + 1].modes
            for i in np.flatnonzero(src_modes > 0):
                support = np.flatnonzero(mt.probs[i] > 0)
                assert (dst_modes[support] == src_modes[i]).all()

    def test_mode0_escape_mass(self):
        m = model_1a()
        grids = clvq_train(m, [15] * 37, SMALL, np.random.default_rng(8))
        n_samples = 400_000
        mats = estimate_transitions(m, grids, n_samples, np.random.default_rng(9))
        n = 10
        lo, hi = grids[n].mode_slice(0)
        dst0_lo, dst0_hi = grids[n + 1].mode_slice(0)
        stay = mats[n].probs[lo:hi, dst0_lo:dst0_hi].sum(axis=1)
        p_theory = math.exp(-((1 / 6) ** 2) * (2 * n + 1) / 2.0)
        # one visited source row; binomial error on the escape mass
        se = math.sqrt(p_theory * (1 - p_theory) / (n_samples * math.exp(-((n / 6) ** 2) / 2)))
        assert stay[0] == pytest.approx(p_theory, abs=4 * se)


class TestDistortion:
    def test_support_grid_zero(self, rng):
        m = deterministic_model()
        grids = clvq_train(m, [1] * 9, SMALL, rng)
        assert distortion(grids[4], m, 5_000, rng) == 0.0

    def test_uniform_single_point(self, rng):
        samples = rng.uniform(0.0, 1.0, 200_000)
        pts = train_scalar_grid(samples, 1, SMALL, rng)
        assert pts[0] == pytest.approx(0.5, abs=0.01)
        assert scalar_distortion(pts, samples) == pytest.approx(1 / 12, abs=0.002)

    def test_doubling_points_reduces_distortion(self, rng):
        samples = rng.standard_normal(100_000)
        prev = np.inf
        for ell in (4, 8, 16):
            pts = train_scalar_grid(samples, ell, SMALL, np.random.default_rng(ell))
            d = scalar_distortion(pts, samples)
            assert d < prev
            prev = d
