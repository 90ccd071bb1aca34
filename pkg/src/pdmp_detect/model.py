"""One-jump piecewise deterministic Markov models observed in discrete time.

The hidden process moves deterministically in a flow regime ("mode"), jumps
once at a random time driven by a hazard rate, selects a new regime, and
continues deterministically.  Noisy scalar observations of a link function of
the position are collected on a regular time grid.

Four example dynamics are provided:

* ``1a`` -- constant position before the jump, exponential growth ``exp(v_i t) x``
  after it.
* ``1b`` -- exponential growth in regime 1, linear drift ``x + v_2 t`` in regime 2.
* ``2a`` -- sinusoidal trajectory whose angular frequency changes at the jump.
* ``2b`` -- sinusoidal trajectory to which the jump adds a linear slope; the
  flow of this example depends on the time since the jump.

For the sinusoidal examples the simulator tracks the sine phase internally
(position = ``sin(phase)``), which is the only representation under which the
flow composes exactly; the textbook arcsin form is exposed by
:func:`flow_eval` and agrees on the principal branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize
from scipy.special import erf

__all__ = [
    "NoiseSpec",
    "LinearIntensity",
    "ZeroIntensity",
    "PdmpModel",
    "DiscreteState",
    "Trajectory",
    "TrajectoryBatch",
    "ObservationSequence",
    "flow_eval",
    "survival",
    "simulate_trajectory",
    "simulate_trajectory_batch",
    "observe",
    "observe_batch",
    "noise_density",
]

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

EXAMPLES = ("1a", "1b", "2a", "2b")


@dataclass(frozen=True)
class NoiseSpec:
    """Centered Gaussian observation noise truncated to ``[-trunc, trunc]``."""

    sigma2: float
    trunc: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        if self.trunc <= 0 and self.sigma2 > 0:
            raise ValueError("trunc must be > 0")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def normalizer(self) -> float:
        """Mass p = P(-trunc <= Z <= trunc) of the untruncated Gaussian."""
        if self.sigma2 == 0.0:
            return 1.0
        return float(erf(self.trunc / (self.sigma * _SQRT2)))

    def density(self, e):
        """Density of the truncated noise at ``e`` (0 outside the support)."""
        if self.sigma2 == 0.0:
            raise ValueError("density undefined for sigma2 == 0")
        e = np.asarray(e, dtype=float)
        inside = np.abs(e) <= self.trunc
        out = np.zeros_like(e)
        coef = 1.0 / (self.normalizer * self.sigma * _SQRT2PI)
        out[inside] = coef * np.exp(-e[inside] ** 2 / (2.0 * self.sigma2))
        if out.ndim == 0:
            return float(out)
        return out

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draw truncated samples by rejection (acceptance ~99.7% at 3 sigma)."""
        if self.sigma2 == 0.0:
            return np.zeros(size)
        out = rng.normal(0.0, self.sigma, size=size)
        bad = np.abs(out) > self.trunc
        while bad.any():
            out[bad] = rng.normal(0.0, self.sigma, size=int(bad.sum()))
            bad = np.abs(out) > self.trunc
        return out


@dataclass(frozen=True)
class LinearIntensity:
    """Hazard rate ``lambda(t) = rate * t`` of the jump time."""

    rate: float = 1.0

    def __call__(self, t):
        return self.rate * np.asarray(t, dtype=float)

    def integral(self, t0: float, t1: float) -> float:
        return 0.5 * self.rate * (t1 * t1 - t0 * t0)

    def sample_jump(self, rng: np.random.Generator):
        if self.rate == 0.0:
            return math.inf
        return math.sqrt(2.0 * rng.exponential() / self.rate)

    def sample_jump_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.rate == 0.0:
            return np.full(n, np.inf)
        return np.sqrt(2.0 * rng.exponential(size=n) / self.rate)


@dataclass(frozen=True)
class ZeroIntensity:
    """No jump ever occurs."""

    def __call__(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def integral(self, t0: float, t1: float) -> float:
        return 0.0

    def sample_jump(self, rng: np.random.Generator):
        return math.inf

    def sample_jump_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, np.inf)


class CallableIntensity:
    """Wraps an arbitrary nonnegative hazard ``fn(t)``; integrals by quadrature."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, t):
        return self.fn(t)

    def integral(self, t0: float, t1: float) -> float:
        val, _ = integrate.quad(self.fn, t0, t1, limit=200)
        return val

    def sample_jump(self, rng: np.random.Generator):
        u = rng.exponential()
        hi = 1.0
        while self.integral(0.0, hi) < u:
            hi *= 2.0
            if hi > 1e6:
                return math.inf
        return optimize.brentq(lambda t: self.integral(0.0, t) - u, 0.0, hi, xtol=1e-10)

    def sample_jump_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.array([self.sample_jump(rng) for _ in range(n)])


@dataclass(frozen=True)
class PdmpModel:
    """Immutable description of a one-jump PDMP and its observation scheme.

    ``speeds`` holds the post-jump regime parameters ``v_1..v_d``; ``base_speed``
    is the pre-jump frequency parameter of the sinusoidal examples (``v_0``)
    and is unused by examples 1a/1b.
    """

    example: str
    d: int
    speeds: tuple
    noise: NoiseSpec
    delta: float
    horizon_steps: int
    x0: float = 1.0
    base_speed: float = 0.0
    link: str = "identity"
    intensity: object = field(default_factory=LinearIntensity)
    post_jump_dist: Optional[tuple] = None
    state_bounds: Optional[tuple] = None

    def __post_init__(self):
        if self.example not in EXAMPLES:
            raise ValueError(f"unknown example {self.example!r}")
        if self.d < 1 or len(self.speeds) != self.d:
            raise ValueError("need one speed per post-jump mode")
        if self.link not in ("identity", "inverse"):
            raise ValueError(f"unknown link {self.link!r}")
        if self.post_jump_dist is None:
            object.__setattr__(self, "post_jump_dist", tuple([1.0 / self.d] * self.d))
        pi = np.asarray(self.post_jump_dist, dtype=float)
        if len(pi) != self.d or (pi <= 0).any() or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("post_jump_dist must be positive and sum to 1")
        if self.example in ("2a", "2b") and abs(self.x0) > 1.0:
            raise ValueError("sinusoidal examples need |x0| <= 1")
        if self.state_bounds is None:
            object.__setattr__(self, "state_bounds", self._default_bounds())

    # -- geometry -----------------------------------------------------------

    def _default_bounds(self) -> tuple:
        span = self.horizon_steps * self.delta
        vmax = max(abs(v) for v in self.speeds)
        if self.example == "1a":
            return (self.x0 * math.exp(-vmax * span), self.x0 * math.exp(vmax * span))
        if self.example == "1b":
            lo = min(self.x0 * math.exp(-abs(self.speeds[0]) * span), self.x0 - abs(self.speeds[1]) * span)
            hi = max(self.x0 * math.exp(abs(self.speeds[0]) * span), self.x0 + abs(self.speeds[1]) * span)
            return (lo, hi)
        if self.example == "2a":
            return (-1.0, 1.0)
        return (-1.0 - vmax * span, 1.0 + vmax * span)

    @property
    def n_steps(self) -> int:
        return self.horizon_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.horizon_steps + 1) * self.delta

    @property
    def phase0(self) -> float:
        return math.asin(self.x0)

    @property
    def pos_dim(self) -> int:
        """Dimension of the quantization coordinate (position, plus u for 2b)."""
        return 2 if self.example == "2b" else 1

    def link_eval(self, x):
        if self.link == "identity":
            return np.asarray(x, dtype=float)
        return 1.0 / np.asarray(x, dtype=float)

    def speed_of(self, mode: int) -> float:
        if mode == 0:
            return self.base_speed if self.example in ("2a", "2b") else 0.0
        return self.speeds[mode - 1]


@dataclass
class DiscreteState:
    """Hidden state at one observation epoch: mode, position, auxiliaries.

    ``phase`` carries the sine phase for examples 2a/2b; ``u`` is the time
    since the last jump (equals running time before the jump).
    """

    mode: int
    x: float
    u: float = 0.0
    phase: Optional[float] = None


def initial_state(model: PdmpModel) -> DiscreteState:
    phase = model.phase0 if model.example in ("2a", "2b") else None
    return DiscreteState(mode=0, x=model.x0, u=0.0, phase=phase)


def advance_state(model: PdmpModel, state: DiscreteState, t: float) -> DiscreteState:
    """Deterministic flow of ``state`` for duration ``t`` (no jump)."""
    m = state.mode
    if model.example in ("1a", "1b"):
        x = flow_eval(model, m, state.x, state.u, t)
        return DiscreteState(m, x, state.u + t, None)
    if model.example == "2a":
        phase = state.phase + model.speed_of(m) * math.pi * t
        return DiscreteState(m, math.sin(phase), state.u + t, phase)
    # 2b: sine keeps the base frequency, post-jump regimes add slope v_m * u
    phase = state.phase + model.base_speed * math.pi * t
    u = state.u + t
    x = math.sin(phase) + (model.speeds[m - 1] * u if m > 0 else 0.0)
    return DiscreteState(m, x, u, phase)


def jump_state(model: PdmpModel, state: DiscreteState, new_mode: int) -> DiscreteState:
    """Regime switch: position unchanged, time-since-jump reset to 0."""
    if state.mode != 0:
        raise ValueError("one-jump model: only mode 0 can jump")
    return DiscreteState(new_mode, state.x, 0.0, state.phase)


def flow_eval(model: PdmpModel, mode: int, x, u, t):
    """Position flow of one regime, in the closed arcsin form.

    For the sinusoidal examples this form is only branch-faithful when the
    underlying phase stays in [-pi/2, pi/2]; the simulator avoids the issue by
    tracking the phase itself (see :func:`advance_state`).
    """
    if mode < 0 or mode > model.d:
        raise ValueError(f"mode {mode} outside 0..{model.d}")
    x = np.asarray(x, dtype=float)
    ex = model.example
    if ex == "1a":
        if mode == 0:
            return x + 0.0
        return np.exp(model.speeds[mode - 1] * t) * x
    if ex == "1b":
        if mode == 0:
            return x + 0.0
        if mode == 1:
            return np.exp(model.speeds[0] * t) * x
        return x + model.speeds[1] * t
    if ex == "2a":
        return np.sin(np.arcsin(x) + model.speed_of(mode) * math.pi * t)
    if mode == 0:
        return np.sin(np.arcsin(x) + model.base_speed * math.pi * t)
    v = model.speeds[mode - 1]
    return np.sin(np.arcsin(x - v * u) + model.base_speed * math.pi * t) + v * (u + t)


def survival(model: PdmpModel, t0: float, t: float) -> float:
    """P(T > t0 + t | T > t0) = exp(-integral of the hazard over [t0, t0+t])."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return math.exp(-model.intensity.integral(t0, t0 + t))


@dataclass
class Trajectory:
    """One realized hidden path: jump time, post mode, and a state evaluator."""

    model: PdmpModel
    jump_time: float
    post_mode: int

    def mode_at(self, t: float) -> int:
        return self.post_mode if t >= self.jump_time else 0

    def state_at(self, t: float) -> DiscreteState:
        m = self.model
        if t < self.jump_time:
            return advance_state(m, initial_state(m), t)
        at_jump = advance_state(m, initial_state(m), self.jump_time)
        jumped = jump_state(m, at_jump, self.post_mode)
        return advance_state(m, jumped, t - self.jump_time)

    def position_at(self, t: float) -> float:
        return self.state_at(t).x

    def modes_at_epochs(self) -> np.ndarray:
        return np.where(self.model.times >= self.jump_time, self.post_mode, 0)

    def positions_at_epochs(self) -> np.ndarray:
        return np.array([self.position_at(t) for t in self.model.times])


class TrajectoryBatch:
    """Vectorized bundle of independent trajectories.

    Positions at any fixed time are closed-form functions of the jump times
    and post modes, so nothing but ``(T, post_mode)`` is stored.
    """

    def __init__(self, model: PdmpModel, jump_times: np.ndarray, post_modes: np.ndarray):
        self.model = model
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.post_modes = np.asarray(post_modes, dtype=np.int64)
        self.size = len(self.jump_times)

    def modes_at(self, t: float) -> np.ndarray:
        return np.where(t >= self.jump_times, self.post_modes, 0)

    def positions_at(self, t: float) -> np.ndarray:
        m = self.model
        T = self.jump_times
        dt = np.maximum(t - T, 0.0)
        v = np.asarray(m.speeds, dtype=float)[self.post_modes - 1]
        if m.example == "1a":
            return m.x0 * np.exp(v * dt)
        if m.example == "1b":
            out = np.where(self.post_modes == 1, m.x0 * np.exp(v * dt), m.x0 + v * dt)
            return np.where(dt > 0, out, m.x0)
        if m.example == "2a":
            phase = m.phase0 + m.base_speed * math.pi * np.minimum(t, T) + v * math.pi * dt
            return np.sin(phase)
        return np.sin(m.phase0 + m.base_speed * math.pi * t) + v * dt

    def u_at(self, t: float) -> np.ndarray:
        return np.where(t >= self.jump_times, t - self.jump_times, t)

    def coords_at(self, t: float) -> np.ndarray:
        """Quantization coordinates at time t, shape (size, pos_dim)."""
        x = self.positions_at(t)
        if self.model.pos_dim == 1:
            return x[:, None]
        return np.stack([x, self.u_at(t)], axis=1)


def simulate_trajectory(model: PdmpModel, rng: np.random.Generator, x0: Optional[float] = None) -> Trajectory:
    """Draw the jump time by inverse transform and the post mode from pi."""
    if x0 is not None and x0 != model.x0:
        raise ValueError("per-run x0 overrides are not supported; build a new model")
    T = model.intensity.sample_jump(rng)
    mode = int(rng.choice(model.d, p=model.post_jump_dist)) + 1
    return Trajectory(model, T, mode)


def simulate_trajectory_batch(model: PdmpModel, n: int, rng: np.random.Generator) -> TrajectoryBatch:
    T = model.intensity.sample_jump_batch(rng, n)
    modes = rng.choice(model.d, size=n, p=model.post_jump_dist) + 1
    return TrajectoryBatch(model, T, modes)


@dataclass
class ObservationSequence:
    """Noisy observations y_0..y_N on the regular time grid."""

    times: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


def observe(trajectory: Trajectory, model: PdmpModel, rng: np.random.Generator) -> ObservationSequence:
    x = trajectory.positions_at_epochs()
    eps = model.noise.sample(rng, len(x))
    return ObservationSequence(model.times, model.link_eval(x) + eps)


def observe_batch(batch: TrajectoryBatch, model: PdmpModel, rng: np.random.Generator) -> np.ndarray:
    """Observation matrix of shape (batch.size, N+1)."""
    cols = []
    for t in model.times:
        cols.append(model.link_eval(batch.positions_at(t)))
    signal = np.stack(cols, axis=1)
    return signal + model.noise.sample(rng, signal.shape)


def noise_density(model: PdmpModel, e):
    return model.noise.density(e)
