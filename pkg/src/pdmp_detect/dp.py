"""Belief-space discretization, backward dynamic programming, error-bound constants.

The simulatable (belief, observation) chain produced by the quantized filter
is itself quantized, epoch by epoch, into joint grids; its transition
matrices turn the dynamic programming recursion into finite weighted sums.
Solving backward yields, per codepoint, the approximate value, whether the
stopping branch won strictly, and the regime to declare on stopping.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .filtering import BarChainSampler, psi_bar_batch
from .kernel import CostParams
from .model import PdmpModel
from .quantize import CLVQSchedule, QuantGrid, _lloyd_polish, _nearest, _clvq_pass

__all__ = [
    "BeliefGrid",
    "PolicySolution",
    "BoundConstants",
    "build_belief_grids",
    "project_joint",
    "expected_cost_on_point",
    "backward_solve",
    "bound_constants",
    "theorem_bounds",
]

log = logging.getLogger(__name__)


@dataclass
class BeliefGrid:
    """Joint codebook over (belief weights, observation) at one epoch.

    The observation coordinate is rescaled by ``y_scale`` inside the
    quantization metric so that both blocks have comparable range; ``thetas``
    rows are kept exactly on the simplex.
    """

    n: int
    thetas: np.ndarray
    ys: np.ndarray
    y_scale: float
    probs: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.ys)

    def joint(self) -> np.ndarray:
        return np.concatenate([self.thetas, (self.ys * self.y_scale)[:, None]], axis=1)


def default_y_scale(model: PdmpModel) -> float:
    lo, hi = model.state_bounds
    span = max(abs(model.link_eval(lo)), abs(model.link_eval(hi)))
    return 1.0 / (2.0 * (span + model.noise.trunc))


def project_joint(bgrid: BeliefGrid, thetas: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Nearest codepoint in the scaled joint metric (ties to lowest index)."""
    z = np.concatenate([thetas, (np.asarray(ys, dtype=float) * bgrid.y_scale)[:, None]], axis=1)
    return _nearest(bgrid.joint(), z)


def _renormalize(thetas: np.ndarray) -> np.ndarray:
    thetas = np.clip(thetas, 0.0, None)
    return thetas / thetas.sum(axis=1, keepdims=True)


def build_belief_grids(
    sampler: BarChainSampler,
    sizes: Sequence[int],
    schedule: CLVQSchedule,
    rng: np.random.Generator,
    n_chains: int = 100_000,
    y_scale: Optional[float] = None,
) -> List[BeliefGrid]:
    """Train joint grids on streamed surrogate chains, then estimate transitions.

    Two independent passes: the first trains the codebooks, the second counts
    projected transitions on fresh chains.  Rows never visited fall back to a
    small Monte Carlo of one-step transitions from the codepoint itself.
    """
    model = sampler.model
    N = sampler.n_steps
    if len(sizes) != N + 1:
        raise ValueError("need one grid size per epoch 0..N")
    if y_scale is None:
        y_scale = default_y_scale(model)

    bgrids: List[BeliefGrid] = []
    for n, thetas, ys in sampler.stream(n_chains, rng):
        if n == 0:
            bgrids.append(BeliefGrid(0, thetas[:1].copy(), ys[:1].copy(), y_scale))
            continue
        z = np.concatenate([thetas, (ys * y_scale)[:, None]], axis=1)
        target = min(int(sizes[n]), len(np.unique(z, axis=0)))
        init = rng.choice(len(z), size=target, replace=False)
        points = np.array(z[init], order="C")
        _clvq_pass(points, np.ascontiguousarray(z), schedule.a0, schedule.big_a, 0.0)
        _lloyd_polish(points, z, schedule.lloyd_tol, schedule.lloyd_max_iter)
        points = np.unique(points, axis=0)
        bgrids.append(
            BeliefGrid(n, _renormalize(points[:, :-1]), points[:, -1] / y_scale, y_scale)
        )

    counts = [np.zeros((bgrids[n].size, bgrids[n + 1].size)) for n in range(N)]
    prev_idx = None
    for n, thetas, ys in sampler.stream(n_chains, rng):
        idx = project_joint(bgrids[n], thetas, ys)
        if n > 0:
            w = bgrids[n].size
            flat = np.bincount(prev_idx * w + idx, minlength=bgrids[n - 1].size * w)
            counts[n - 1] += flat.reshape(bgrids[n - 1].size, w)
        prev_idx = idx
    for n in range(N):
        rows = counts[n].sum(axis=1)
        for i in np.flatnonzero(rows == 0):
            counts[n][i] = _one_step_fallback(sampler, bgrids, n, int(i), rng)
            rows[i] = counts[n][i].sum()
            log.info("belief grid step %d: MC fallback row for unvisited point %d", n, i)
        bgrids[n].probs = counts[n] / rows[:, None]
    return bgrids


def _one_step_fallback(
    sampler: BarChainSampler, bgrids: Sequence[BeliefGrid], n: int, i: int, rng: np.random.Generator, n_draws: int = 512
) -> np.ndarray:
    from .filtering import _sample_rows  # local import to avoid cycle at module load

    model = sampler.model
    theta = np.repeat(bgrids[n].thetas[i][None, :], n_draws, axis=0)
    ii = _sample_rows(theta, rng)
    jj = _sample_rows(sampler.transitions[n].probs[ii], rng)
    ys = sampler.link_values[n + 1][jj] + model.noise.sample(rng, n_draws)
    lik = model.noise.density(ys[:, None] - sampler.link_values[n + 1][None, :])
    thetas, _ = psi_bar_batch(theta, sampler.transitions[n].probs, lik)
    idx = project_joint(bgrids[n + 1], thetas, ys)
    return np.bincount(idx, minlength=bgrids[n + 1].size).astype(float)


# -- costs on grid points ---------------------------------------------------


def stage_cost_vector(costs: CostParams, grid: QuantGrid) -> np.ndarray:
    return np.where(grid.modes > 0, costs.beta * costs.delta, 0.0)


def terminal_cost_table(costs: CostParams, grid: QuantGrid, d: int) -> np.ndarray:
    """Per-codepoint terminal cost for each decision a = 0..d."""
    out = np.empty((grid.ell, d + 1))
    out[:, 0] = stage_cost_vector(costs, grid)
    for a in range(1, d + 1):
        wrong = np.where(
            grid.modes == 0,
            costs.alpha,
            costs.gamma[np.maximum(grid.modes - 1, 0), a - 1] * (grid.modes != a),
        )
        out[:, a] = wrong
    return out


def expected_cost_on_point(
    costs: CostParams, grid: QuantGrid, belief_weights: np.ndarray, action: int, d: Optional[int] = None
) -> float:
    """Belief-weighted stage (action 0) or terminal cost at one joint codepoint."""
    d = d if d is not None else int(grid.modes.max())
    table = terminal_cost_table(costs, grid, d)
    return float(belief_weights @ table[:, action])


@dataclass
class PolicySolution:
    """Backward-solve output: per epoch and codepoint, value / stop flag / decision."""

    values: List[np.ndarray]
    stop: List[np.ndarray]
    action: List[np.ndarray]
    costs: CostParams

    @property
    def n_steps(self) -> int:
        return len(self.values) - 1


def backward_solve(bgrids: Sequence[BeliefGrid], grids: Sequence[QuantGrid], costs: CostParams) -> PolicySolution:
    """Solve the finite dynamic programming recursion on the joint grids.

    At the horizon the decision minimizes the expected terminal cost over all
    regimes including "declare nothing" (which pays the stage cost); earlier,
    stopping wins only when strictly cheaper than continuing.
    """
    N = len(bgrids) - 1
    d = int(max(int(g.modes.max()) for g in grids))
    values: List[Optional[np.ndarray]] = [None] * (N + 1)
    stop: List[Optional[np.ndarray]] = [None] * (N + 1)
    action: List[Optional[np.ndarray]] = [None] * (N + 1)

    table_N = terminal_cost_table(costs, grids[N], d)
    cmat = bgrids[N].thetas @ table_N
    a_N = np.argmin(cmat, axis=1)
    values[N] = cmat[np.arange(len(a_N)), a_N]
    action[N] = a_N.astype(np.int64)
    stop[N] = a_N > 0

    for n in range(N - 1, -1, -1):
        table = terminal_cost_table(costs, grids[n], d)
        cmat = bgrids[n].thetas @ table
        cvec = bgrids[n].thetas @ stage_cost_vector(costs, grids[n])
        stop_val = cmat[:, 1:].min(axis=1)
        stop_act = np.argmin(cmat[:, 1:], axis=1) + 1
        cont_val = cvec + bgrids[n].probs @ values[n + 1]
        r = stop_val < cont_val
        values[n] = np.where(r, stop_val, cont_val)
        stop[n] = r
        action[n] = np.where(r, stop_act, 0).astype(np.int64)
    return PolicySolution(values, stop, action, costs)


# -- regularity constants and the two error bounds --------------------------


@dataclass(frozen=True)
class BoundConstants:
    """Lipschitz/regularity constants of the model and cost data.

    ``a_coeff`` weights the per-epoch state quantization errors in the bound
    on the first discretization; ``b_coeff`` weights the per-epoch belief
    quantization errors in the bound on the second discretization.  Both use
    the closed-form coefficient majorants, which explode quickly: values may
    overflow to inf for long horizons, which is faithful to the theory being
    a worst-case statement.
    """

    phi: float
    phi_each: tuple
    g_bar: float
    b_bar: float
    f_upper: float
    f_lower: float
    b_f: float
    l_f: float
    ff_bar: float
    ff_tilde: float
    ff_plus: float
    a_coeff: np.ndarray
    b_coeff: np.ndarray


def _flow_lipschitz(model: PdmpModel) -> list:
    """Per-regime position-Lipschitz constants over one horizon.

    The sinusoidal flows are not globally Lipschitz in the arcsin form (the
    derivative blows up at |x| = 1), so their modulus is evaluated on a dense
    grid clipped slightly inside the domain.
    """
    span = model.horizon_steps * model.delta
    out = []
    if model.example in ("1a", "1b"):
        out.append(1.0)
        for i, v in enumerate(model.speeds):
            if model.example == "1b" and i == 1:
                out.append(1.0)
            else:
                out.append(math.exp(abs(v) * span))
        return out
    xs = np.linspace(-0.999, 0.999, 401)
    ts = np.linspace(1e-3, span, 101)
    for mode in range(model.d + 1):
        v = model.speed_of(mode) if model.example == "2a" else model.base_speed
        theta = (v * math.pi * ts)[None, :]
        grad = np.abs(np.cos(np.arcsin(xs)[:, None] + theta)) / np.sqrt(1.0 - xs**2)[:, None]
        out.append(float(grad.max()))
    return out


def bound_constants(model: PdmpModel, costs: CostParams) -> BoundConstants:
    """Evaluate the closed-form regularity constants for the error bounds."""
    s = model.noise.trunc
    sig = model.noise.sigma
    if sig == 0.0:
        raise ValueError("bound constants need a nondegenerate noise")
    p = model.noise.normalizer
    lo, hi = model.state_bounds
    f_upper = 1.0 / (p * sig * math.sqrt(2.0 * math.pi))
    f_lower = f_upper * math.exp(-(s**2) / (2.0 * sig**2))
    if model.link == "identity":
        big_s = max(abs(lo), abs(hi))
        l_f = 2.0 * s * big_s * (big_s + s) / (p * sig**3 * math.sqrt(2.0 * math.pi))
        b_f = 2.0 * (s + big_s) * f_upper
    else:
        if lo <= 0:
            raise ValueError("inverse link needs positive state bounds")
        s1, s2 = lo, hi
        l_f = s * (2.0 * s + s2 - s1) / (s1**2 * p * sig**3 * math.sqrt(2.0 * math.pi))
        b_f = (2.0 * s + s2 - s1) * f_upper
    phi_each = _flow_lipschitz(model)
    phi = max(1.0, max(phi_each))
    g_bar = max(costs.alpha, costs.gamma_max)
    b_bar = g_bar + costs.delta * costs.beta

    ff_bar = (b_f + l_f) / f_lower + l_f * f_upper / f_lower**2
    ff_tilde = b_f / f_lower * (1.0 + f_upper / f_lower)
    ff_plus = b_f / f_lower + phi**2 * ff_bar

    N = costs.horizon_steps
    with np.errstate(over="ignore"):
        a_coeff = np.empty(N)
        for n in range(N):
            j = np.arange(N - n + 1, dtype=float)
            inner = ((1.0 + phi**2 * l_f) * (N - n - j) + 1.0) * (ff_plus * f_upper) ** j
            a_coeff[n] = b_bar * (1.0 + phi**2) * (l_f * (N - n + 1) + f_upper * ff_bar * inner.sum())
        b_coeff = np.empty(N + 1)
        for n in range(N + 1):
            j = np.arange(N - n + 1, dtype=float)
            b_coeff[n] = 2.0 * b_bar * ((N - n + 1 - j) * (f_upper * ff_tilde) ** j).sum()
    return BoundConstants(
        phi=phi,
        phi_each=tuple(phi_each),
        g_bar=g_bar,
        b_bar=b_bar,
        f_upper=f_upper,
        f_lower=f_lower,
        b_f=b_f,
        l_f=l_f,
        ff_bar=ff_bar,
        ff_tilde=ff_tilde,
        ff_plus=ff_plus,
        a_coeff=a_coeff,
        b_coeff=b_coeff,
    )


def belief_distortion_profile(
    sampler: BarChainSampler,
    bgrids: Sequence[BeliefGrid],
    n_chains: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-epoch E || projected belief - belief ||_1 of the surrogate chain."""
    out = np.zeros(len(bgrids))
    for n, thetas, ys in sampler.stream(n_chains, rng):
        idx = project_joint(bgrids[n], thetas, ys)
        out[n] = np.abs(bgrids[n].thetas[idx] - thetas).sum(axis=1).mean()
    return out


def theorem_bounds(bc: BoundConstants, state_dists: Sequence[float], belief_dists: Sequence[float]):
    """Evaluate the two error bounds at measured per-epoch quantization errors.

    A zero distortion contributes exactly zero even when its coefficient has
    overflowed to inf.
    """
    sd = np.asarray(state_dists, dtype=float)
    bd = np.asarray(belief_dists, dtype=float)
    if len(sd) != len(bc.a_coeff) or len(bd) != len(bc.b_coeff):
        raise ValueError("distortion vectors do not match the horizon")
    if (sd < 0).any() or (bd < 0).any():
        raise ValueError("distortions must be nonnegative")
    with np.errstate(invalid="ignore"):
        first = np.where(sd == 0.0, 0.0, bc.a_coeff * sd).sum()
        second = np.where(bd == 0.0, 0.0, bc.b_coeff * bd).sum()
    return float(first), float(second)
