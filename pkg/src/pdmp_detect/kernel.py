"""Discrete-time transition kernel of the observed chain and the cost model.

The hidden chain sampled at observation epochs is time-inhomogeneous: from a
pre-jump state it either flows deterministically (no jump in the interval) or
jumps at a within-interval offset drawn from the hazard, switches regime and
flows the rest of the interval.  Post-jump states flow deterministically
forever.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .model import (
    DiscreteState,
    LinearIntensity,
    PdmpModel,
    ZeroIntensity,
    advance_state,
    jump_state,
)

__all__ = [
    "CostParams",
    "no_jump_prob",
    "step_sample",
    "stage_cost",
    "terminal_cost",
    "strategy_cost",
]

NO_STOP = None


@dataclass(frozen=True)
class CostParams:
    """False-alarm, late-detection and mis-identification penalties.

    ``gamma`` may be given as a scalar (constant off-diagonal cost) or as a
    full (d x d) matrix indexed by (true mode - 1, chosen mode - 1); the
    diagonal is ignored since a correct call costs nothing.
    """

    alpha: float
    beta: float
    gamma: np.ndarray
    delta: float
    horizon_steps: int

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        g = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("gamma must be a square matrix (see make_cost_params)")
        if (g < 0).any():
            raise ValueError("gamma must be nonnegative")
        object.__setattr__(self, "gamma", g)

    @property
    def gamma_max(self) -> float:
        return float(self.gamma.max())


def make_cost_params(alpha: float, beta: float, gamma, delta: float, horizon_steps: int, d: int) -> CostParams:
    g = np.asarray(gamma, dtype=float)
    if g.ndim == 0:
        g = np.full((d, d), float(g))
        np.fill_diagonal(g, 0.0)
    if g.shape != (d, d):
        raise ValueError(f"gamma must be scalar or ({d},{d})")
    return CostParams(alpha, beta, g, delta, horizon_steps)


def no_jump_prob(model: PdmpModel, n: int) -> float:
    """Probability of flowing through the interval [n delta, (n+1) delta] without a jump."""
    if n < 0:
        raise ValueError("n must be >= 0")
    t0 = n * model.delta
    return math.exp(-model.intensity.integral(t0, t0 + model.delta))


def _sample_jump_offset(model: PdmpModel, n: int, rng: np.random.Generator) -> float:
    """Offset s in (0, delta] of the jump, conditional on it landing in the interval."""
    t0 = n * model.delta
    delta = model.delta
    stay = math.exp(-model.intensity.integral(t0, t0 + delta))
    u = rng.random()
    target = -math.log1p(-u * (1.0 - stay))
    lam = model.intensity
    if isinstance(lam, LinearIntensity):
        # solve rate*(t0 s + s^2/2) = target
        c = lam.rate
        return -t0 + math.sqrt(t0 * t0 + 2.0 * target / c)
    f = lambda s: lam.integral(t0, t0 + s) - target
    return optimize.brentq(f, 0.0, delta, xtol=1e-10)


def step_sample(model: PdmpModel, n: int, state: DiscreteState, rng: np.random.Generator) -> DiscreteState:
    """One transition of the hidden chain from epoch n to n+1."""
    if n >= model.horizon_steps:
        raise ValueError("n must be < horizon")
    if state.mode > 0:
        return advance_state(model, state, model.delta)
    if isinstance(model.intensity, ZeroIntensity) or rng.random() < no_jump_prob(model, n):
        return advance_state(model, state, model.delta)
    s = _sample_jump_offset(model, n, rng)
    mode = int(rng.choice(model.d, p=model.post_jump_dist)) + 1
    at_jump = advance_state(model, state, s)
    return advance_state(model, jump_state(model, at_jump, mode), model.delta - s)


def stage_cost(params: CostParams, state) -> float:
    """Per-epoch cost of not having stopped yet: 0 pre-jump, beta*delta after."""
    mode = state.mode if isinstance(state, DiscreteState) else int(state)
    return 0.0 if mode == 0 else params.beta * params.delta


def terminal_cost(params: CostParams, state, action: int) -> float:
    """Cost of stopping and declaring regime ``action`` (0 falls back to the stage cost)."""
    mode = state.mode if isinstance(state, DiscreteState) else int(state)
    if action == 0:
        return stage_cost(params, mode)
    if mode == 0:
        return params.alpha
    if mode != action:
        return float(params.gamma[mode - 1, action - 1])
    return 0.0


def strategy_cost(params: CostParams, modes: Sequence[int], tau: Optional[int], action: int) -> float:
    """Realized cost of a run given the hidden modes at the observation epochs.

    ``tau`` is the stopping epoch in 0..N, or None when the strategy never
    stopped (then ``action`` must be 0).
    """
    modes = np.asarray(modes, dtype=np.int64)
    N = params.horizon_steps
    if len(modes) != N + 1:
        raise ValueError("need modes at all N+1 epochs")
    if tau is None:
        if action != 0:
            raise ValueError("a positive decision requires stopping at or before N")
        return float(sum(stage_cost(params, int(m)) for m in modes))
    if not 0 <= tau <= N:
        raise ValueError("tau must be in 0..N or None")
    if action <= 0:
        raise ValueError("stopping at tau <= N requires a positive decision")
    stages = sum(stage_cost(params, int(m)) for m in modes[:tau])
    return float(stages + terminal_cost(params, int(modes[tau]), action))


def strategy_cost_batch(
    params: CostParams,
    modes: np.ndarray,
    taus: np.ndarray,
    actions: np.ndarray,
) -> np.ndarray:
    """Vectorized realized costs; ``taus`` uses N+1 as the no-stop sentinel."""
    R, cols = modes.shape
    N = params.horizon_steps
    if cols != N + 1:
        raise ValueError("need modes at all N+1 epochs")
    post = modes > 0
    cum = np.cumsum(post, axis=1) * params.beta * params.delta
    full = cum[:, N]
    idx = np.minimum(taus, N + 1)
    stopped = idx <= N
    stages = np.where(
        stopped,
        np.where(idx > 0, cum[np.arange(R), np.maximum(idx - 1, 0)], 0.0),
        full,
    )
    m_at = modes[np.arange(R), np.minimum(idx, N)]
    term = np.where(
        m_at == 0,
        params.alpha,
        params.gamma[np.maximum(m_at - 1, 0), np.maximum(actions - 1, 0)] * (m_at != actions),
    )
    return stages + np.where(stopped, term, 0.0)
