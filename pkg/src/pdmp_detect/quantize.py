"""Per-epoch vector quantization of the hidden chain and transition estimation.

Grids are trained by competitive learning (CLVQ) over a stream of simulated
chain realizations, then polished by Lloyd iterations until each codepoint
sits at the empirical centroid of its cell.  The discrete mode coordinate is
never quantized: training, projection and transition counting are stratified
by mode, so a post-jump state can only ever be represented by a codepoint of
the same regime.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from .model import PdmpModel, TrajectoryBatch, flow_eval, simulate_trajectory_batch, survival

__all__ = [
    "CLVQSchedule",
    "QuantGrid",
    "TransitionMatrix",
    "clvq_train",
    "project",
    "project_batch",
    "estimate_transitions",
    "distortion",
    "train_scalar_grid",
]

log = logging.getLogger(__name__)

_PROJ_CHUNK = 200_000


@dataclass(frozen=True)
class CLVQSchedule:
    """Step-size schedule a_t = a0 * A / (A + t) and sample budgets."""

    a0: float = 0.5
    big_a: float = 1e4
    n_samples: int = 1_000_000
    lloyd_tol: float = 1e-3
    lloyd_max_iter: int = 80


@njit(cache=True)
def _clvq_pass(points, samples, a0, big_a, t0):
    t = t0
    for k in range(samples.shape[0]):
        best = 0
        bd = np.inf
        for j in range(points.shape[0]):
            dist = 0.0
            for dd in range(points.shape[1]):
                diff = samples[k, dd] - points[j, dd]
                dist += diff * diff
            if dist < bd:
                bd = dist
                best = j
        step = a0 * big_a / (big_a + t)
        for dd in range(points.shape[1]):
            points[best, dd] += step * (samples[k, dd] - points[best, dd])
        t += 1.0
    return t


def _nearest(points: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Index of the nearest codepoint for each sample row (ties: lowest index).

    Distances expand to |a|^2 - 2 a.b + |b|^2 so the bulk of the work is one
    matrix product; |a|^2 is constant per row and dropped.  Exact ties are
    re-resolved on true distances to keep the lowest-index contract immune to
    floating-point noise in the expansion.
    """
    pts2 = (points**2).sum(axis=1)
    out = np.empty(len(samples), dtype=np.int64)
    for lo in range(0, len(samples), _PROJ_CHUNK):
        chunk = samples[lo : lo + _PROJ_CHUNK]
        score = pts2[None, :] - 2.0 * (chunk @ points.T)
        best = np.argmin(score, axis=1)
        # guard near-ties of the expanded score against fp asymmetry
        srt = np.sort(score, axis=1)
        close = (srt[:, 1] - srt[:, 0]) < 1e-12 if score.shape[1] > 1 else np.zeros(len(chunk), bool)
        if close.any():
            sub = chunk[close]
            d2 = ((sub[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
            best[close] = np.argmin(d2, axis=1)
        out[lo : lo + _PROJ_CHUNK] = best
    return out


def _lloyd_polish(points: np.ndarray, samples: np.ndarray, tol: float, max_iter: int) -> float:
    """Move each codepoint to its cell centroid until the residual is below tol."""
    resid = np.inf
    for _ in range(max_iter):
        idx = _nearest(points, samples)
        counts = np.bincount(idx, minlength=len(points)).astype(float)
        resid = 0.0
        for dd in range(points.shape[1]):
            sums = np.bincount(idx, weights=samples[:, dd], minlength=len(points))
            means = np.where(counts > 0, sums / np.maximum(counts, 1.0), points[:, dd])
            resid = max(resid, float(np.abs(means - points[:, dd]).max()))
            points[:, dd] = means
        if resid <= tol:
            break
    return resid


@dataclass
class QuantGrid:
    """Codebook for one observation epoch: (mode, coords) points sorted by mode."""

    n: int
    modes: np.ndarray
    coords: np.ndarray
    _offsets: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        order = np.lexsort(tuple(self.coords[:, dd] for dd in reversed(range(self.coords.shape[1]))) + (self.modes,))
        self.modes = np.ascontiguousarray(self.modes[order])
        self.coords = np.ascontiguousarray(self.coords[order])
        self._offsets = {}
        for m in np.unique(self.modes):
            idx = np.flatnonzero(self.modes == m)
            self._offsets[int(m)] = (int(idx[0]), int(idx[-1]) + 1)

    @property
    def ell(self) -> int:
        return len(self.modes)

    @property
    def positions(self) -> np.ndarray:
        return self.coords[:, 0]

    def mode_slice(self, mode: int):
        if mode not in self._offsets:
            raise ValueError(f"grid at step {self.n} has no points of mode {mode}")
        return self._offsets[mode]

    def present_modes(self):
        return sorted(self._offsets)

    def counts_per_mode(self) -> dict:
        return {m: b - a for m, (a, b) in self._offsets.items()}


@dataclass
class TransitionMatrix:
    """Row-stochastic matrix of projected-chain transition frequencies."""

    n: int
    probs: np.ndarray

    def __post_init__(self):
        rows = self.probs.sum(axis=1)
        if not np.allclose(rows, 1.0, atol=1e-12):
            raise ValueError("rows must sum to 1")


def _mode_budget(model: PdmpModel, n: int, ell: int, capacities: dict) -> dict:
    """Split the point budget across modes by occupation probability.

    Every reachable mode keeps at least one point; a stratum never receives
    more points than its capacity (the pre-jump stratum is a single
    deterministic state, so its capacity is one), and surplus spills to the
    other strata in mass order.
    """
    if n == 0:
        return {0: ell}
    t_n = n * model.delta
    p0 = survival(model, 0.0, t_n)
    masses = {0: p0}
    for i in range(1, model.d + 1):
        masses[i] = (1.0 - p0) * model.post_jump_dist[i - 1]
    reachable = [m for m, mass in masses.items() if mass > 0.0]
    if ell < len(reachable):
        raise ValueError(f"grid size {ell} below the number of reachable modes at step {n}")
    budget = {m: 1 for m in reachable}
    pool = ell - len(reachable)
    open_modes = [m for m in reachable if budget[m] < capacities.get(m, ell)]
    while pool > 0 and open_modes:
        shares = {m: masses[m] for m in open_modes}
        total = sum(shares.values())
        want = {m: shares[m] / total * pool for m in open_modes}
        baseline = {m: min(int(want[m]), capacities.get(m, ell) - budget[m]) for m in open_modes}
        if sum(baseline.values()) == 0:
            order = sorted(open_modes, key=lambda m: want[m] - int(want[m]), reverse=True)
            for m in order:
                if pool == 0:
                    break
                budget[m] += 1
                pool -= 1
        else:
            for m in open_modes:
                budget[m] += baseline[m]
                pool -= baseline[m]
        open_modes = [m for m in open_modes if budget[m] < capacities.get(m, ell)]
    return budget


def _train_stratum(samples: np.ndarray, n_points: int, schedule: CLVQSchedule, rng: np.random.Generator) -> np.ndarray:
    uniq = np.unique(samples, axis=0)
    if len(uniq) <= n_points:
        return uniq
    init_idx = rng.choice(len(samples), size=n_points, replace=False)
    points = np.array(samples[init_idx], dtype=np.float64, order="C")
    _clvq_pass(points, np.ascontiguousarray(samples), schedule.a0, schedule.big_a, 0.0)
    _lloyd_polish(points, samples, schedule.lloyd_tol, schedule.lloyd_max_iter)
    return np.unique(points, axis=0)


def clvq_train(
    model: PdmpModel,
    grid_sizes: Sequence[int],
    schedule: CLVQSchedule,
    rng: np.random.Generator,
    sampler: Optional[Callable[[int, np.random.Generator], TrajectoryBatch]] = None,
) -> list:
    """Train one mode-stratified grid per observation epoch.

    ``grid_sizes`` gives the total point budget per epoch; it is divided
    across modes in proportion to their analytic occupation probabilities,
    with a floor of one point per reachable mode.  A stratum with zero
    training mass forfeits its budget to the most massive stratum.
    """
    N = model.horizon_steps
    if len(grid_sizes) != N + 1:
        raise ValueError("need one grid size per epoch 0..N")
    if sampler is None:
        sampler = lambda n, r: simulate_trajectory_batch(model, n, r)
    batch = sampler(schedule.n_samples, rng)
    grids = []
    for n in range(N + 1):
        t_n = n * model.delta
        modes_n = batch.modes_at(t_n)
        coords_n = batch.coords_at(t_n)
        counts = {m: int((modes_n == m).sum()) for m in range(model.d + 1)}
        capacities = {0: 1}
        for m in range(1, model.d + 1):
            capacities[m] = max(counts[m], 1)
        budget = _mode_budget(model, n, int(grid_sizes[n]), capacities)
        parts_modes, parts_coords = [], []
        for m, n_points in sorted(budget.items()):
            if counts.get(m, 0) == 0:
                pts = _synth_point(model, n, m)
                log.info("step %d: no training mass in mode %d, synthesized its codepoint", n, m)
            else:
                pts = _train_stratum(coords_n[modes_n == m], n_points, schedule, rng)
            parts_modes.append(np.full(len(pts), m, dtype=np.int64))
            parts_coords.append(pts)
        grids.append(QuantGrid(n, np.concatenate(parts_modes), np.vstack(parts_coords)))
    return grids


def _synth_point(model: PdmpModel, n: int, mode: int) -> np.ndarray:
    """Representative codepoint for a stratum the training stream never visited.

    Mode 0 is the exact deterministic pre-jump state; a post-jump mode uses
    the path that jumped halfway to the epoch.
    """
    t_n = n * model.delta
    if mode == 0:
        b = TrajectoryBatch(model, np.array([np.inf]), np.array([1]))
    else:
        b = TrajectoryBatch(model, np.array([0.5 * t_n]), np.array([mode]))
    return b.coords_at(t_n)


def project(grid: QuantGrid, mode: int, coords) -> int:
    """Nearest same-mode codepoint (Euclidean on coords, ties to lowest index)."""
    coords = np.atleast_1d(np.asarray(coords, dtype=float))
    lo, hi = grid.mode_slice(int(mode))
    d2 = ((grid.coords[lo:hi] - coords[None, :]) ** 2).sum(axis=1)
    return lo + int(np.argmin(d2))


def project_batch(grid: QuantGrid, modes: np.ndarray, coords: np.ndarray) -> np.ndarray:
    out = np.empty(len(modes), dtype=np.int64)
    for m in np.unique(modes):
        mask = modes == m
        lo, hi = grid.mode_slice(int(m))
        out[mask] = lo + _nearest(grid.coords[lo:hi], coords[mask])
    return out


def _fallback_row(model: PdmpModel, grid: QuantGrid, next_grid: QuantGrid, i: int) -> np.ndarray:
    """Deterministic-flow row for a codepoint never visited in training."""
    mode = int(grid.modes[i])
    x = float(grid.coords[i, 0])
    u = float(grid.coords[i, 1]) if grid.coords.shape[1] > 1 else float(grid.n * model.delta)
    if model.example in ("2a", "2b"):
        # codepoints are cell centroids; clamp the arcsin argument defensively
        v = model.speeds[mode - 1] if mode > 0 else 0.0
        w = np.clip(x - (v * u if model.example == "2b" else 0.0), -1.0, 1.0)
        x_next = float(np.asarray(flow_eval(model, mode, w + (v * u if model.example == "2b" else 0.0), u, model.delta)))
    else:
        x_next = float(np.asarray(flow_eval(model, mode, x, u, model.delta)))
    nxt = np.array([x_next, u + model.delta])[: next_grid.coords.shape[1]]
    row = np.zeros(next_grid.ell)
    row[project(next_grid, mode, nxt)] = 1.0
    return row


def estimate_transitions(
    model: PdmpModel,
    grids: Sequence[QuantGrid],
    n_samples: int,
    rng: np.random.Generator,
    sampler: Optional[Callable[[int, np.random.Generator], TrajectoryBatch]] = None,
) -> list:
    """Monte Carlo estimate of the projected-chain transition matrices."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if sampler is None:
        sampler = lambda n, r: simulate_trajectory_batch(model, n, r)
    batch = sampler(n_samples, rng)
    N = model.horizon_steps
    idx_prev = project_batch(grids[0], batch.modes_at(0.0), batch.coords_at(0.0))
    mats = []
    for n in range(N):
        t_next = (n + 1) * model.delta
        idx_next = project_batch(grids[n + 1], batch.modes_at(t_next), batch.coords_at(t_next))
        w = grids[n + 1].ell
        counts = np.bincount(idx_prev * w + idx_next, minlength=grids[n].ell * w).reshape(grids[n].ell, w).astype(float)
        rows = counts.sum(axis=1)
        for i in np.flatnonzero(rows == 0):
            counts[i] = _fallback_row(model, grids[n], grids[n + 1], int(i))
            rows[i] = 1.0
            log.info("step %d: deterministic fallback row for unvisited point %d", n, i)
        mats.append(TransitionMatrix(n, counts / rows[:, None]))
        idx_prev = idx_next
    return mats


def distortion(
    grid: QuantGrid,
    model: PdmpModel,
    n_samples: int,
    rng: np.random.Generator,
    sampler: Optional[Callable[[int, np.random.Generator], TrajectoryBatch]] = None,
) -> float:
    """Monte Carlo mean squared projection error at the grid's epoch."""
    if sampler is None:
        sampler = lambda n, r: simulate_trajectory_batch(model, n, r)
    batch = sampler(n_samples, rng)
    t_n = grid.n * model.delta
    modes = batch.modes_at(t_n)
    coords = batch.coords_at(t_n)
    idx = project_batch(grid, modes, coords)
    return float(((coords - grid.coords[idx]) ** 2).sum(axis=1).mean())


def distortion_profile(model, grids, n_samples, rng, sampler=None):
    """Per-epoch E|X - proj(X)| and E|X - proj(X)|^2 in one simulation pass."""
    if sampler is None:
        sampler = lambda n, r: simulate_trajectory_batch(model, n, r)
    batch = sampler(n_samples, rng)
    l1 = np.zeros(len(grids))
    l2sq = np.zeros(len(grids))
    for grid in grids:
        t_n = grid.n * model.delta
        coords = batch.coords_at(t_n)
        idx = project_batch(grid, batch.modes_at(t_n), coords)
        errs = np.sqrt(((coords - grid.coords[idx]) ** 2).sum(axis=1))
        l1[grid.n] = errs.mean()
        l2sq[grid.n] = (errs**2).mean()
    return l1, l2sq


def train_scalar_grid(samples: np.ndarray, n_points: int, schedule: CLVQSchedule, rng: np.random.Generator) -> np.ndarray:
    """Quantize a scalar sample with the same CLVQ + Lloyd pipeline (for rate checks)."""
    pts = _train_stratum(np.asarray(samples, dtype=float).reshape(-1, 1), n_points, schedule, rng)
    return np.sort(pts[:, 0])


def scalar_distortion(points: np.ndarray, samples: np.ndarray) -> float:
    d2 = (samples[:, None] - points[None, :]) ** 2
    return float(d2.min(axis=1).mean())
