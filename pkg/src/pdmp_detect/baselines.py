"""Comparison detectors: moving average and a regime-posterior ("Kalman") rule.

The moving-average rule is model-free: it fires the first time the mean of
the last k observations crosses a threshold, then picks the regime whose
two-segment independent-Gaussian likelihood best explains the stream.

The Kalman-style rule linearizes the dynamics to a hidden-regime chain with
deterministic per-regime paths and plain Gaussian emissions.  With no process
noise the regime posterior is computable exactly by enumerating (jump epoch,
regime) hypotheses, which is what we do; it costs O(k d) per epoch.  Stopping
is either a fixed posterior threshold or a cost-calibrated comparison of the
one-step continuation cost against the best immediate decision cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .kernel import CostParams, no_jump_prob
from .model import PdmpModel

__all__ = [
    "MaConfig",
    "ma_detect",
    "ma_mode_choice",
    "mode_transition_matrix",
    "kalman_posterior",
    "kalman_detect",
    "MaDetector",
    "KalmanDetector",
    "linearize_observations",
]


def linearize_observations(y: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Inverse-link streams are fed to the baselines as 1/y, clamping |y| away from 0."""
    y = np.asarray(y, dtype=float)
    safe = np.where(np.abs(y) < floor, np.where(y < 0, -floor, floor), y)
    return 1.0 / safe


@dataclass(frozen=True)
class MaConfig:
    window: int
    threshold: float
    direction: str = "above"

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.direction not in ("above", "below"):
            raise ValueError("direction must be 'above' or 'below'")


def _window_means(y: np.ndarray, k: int) -> np.ndarray:
    """Mean of the trailing window at each epoch; -inf/NaN-free, first k-1 unset."""
    c = np.concatenate([[0.0], np.cumsum(y)])
    out = np.full(len(y), np.nan)
    out[k - 1 :] = (c[k:] - c[:-k]) / k
    return out


def ma_detect(observations, config: MaConfig) -> Optional[int]:
    """First epoch whose trailing-window mean strictly crosses the threshold."""
    y = np.asarray(getattr(observations, "y", observations), dtype=float)
    if config.window > len(y):
        raise ValueError("window longer than the stream")
    means = _window_means(y, config.window)
    with np.errstate(invalid="ignore"):
        fired = means > config.threshold if config.direction == "above" else means < config.threshold
    idx = np.flatnonzero(fired)
    return int(idx[0]) if len(idx) else None


def _mode_dynamics(model: PdmpModel) -> list:
    """Per-regime linearized epoch dynamics: ('mult', A_i) or ('add', increment)."""
    if model.example == "1a":
        return [("mult", math.exp(v * model.delta)) for v in model.speeds]
    if model.example == "1b":
        return [("mult", math.exp(model.speeds[0] * model.delta)), ("add", model.speeds[1] * model.delta)]
    raise ValueError("linearized baselines are defined for examples 1a/1b only")


def _mode_mean(model: PdmpModel, base: float, mode_idx: int, steps: np.ndarray) -> np.ndarray:
    kind, coef = _mode_dynamics(model)[mode_idx]
    steps = np.asarray(steps, dtype=float)
    if kind == "mult":
        return base * coef**steps
    return base + coef * steps


def ma_mode_choice(observations, tau: int, model: PdmpModel, sigma2: float) -> int:
    """Pick the regime minimizing the two-segment negative log likelihood.

    Segment split t runs over {2..tau-1}: observations through t are modelled
    as independent Gaussians at the pre-jump level, later ones follow the
    candidate regime's mean path started at t.  Ties go to the lowest regime
    index; streams too short to split fall back to a single post-jump segment
    from time zero.
    """
    y = np.asarray(getattr(observations, "y", observations), dtype=float)[: tau + 1]
    base = float(model.link_eval(model.x0))
    d = model.d
    if tau < 3:
        best, best_val = 1, np.inf
        for i in range(d):
            mean = _mode_mean(model, base, i, np.arange(tau + 1))
            val = float(((y - mean) ** 2).sum()) / (2.0 * sigma2)
            if val < best_val - 1e-15:
                best, best_val = i + 1, val
        return best
    best, best_val = 1, np.inf
    for i in range(d):
        for t in range(2, tau):
            pre = ((y[: t + 1] - base) ** 2).sum()
            steps = np.arange(t + 1, tau + 1) - t
            post = ((y[t + 1 :] - _mode_mean(model, base, i, steps)) ** 2).sum()
            val = (pre + post) / (2.0 * sigma2)
            if val < best_val - 1e-15:
                best, best_val = i + 1, val
    return best


def mode_transition_matrix(model: PdmpModel, n: int) -> np.ndarray:
    """Analytic regime transition matrix of the linearized chain at epoch n."""
    d = model.d
    out = np.eye(d + 1)
    stay = no_jump_prob(model, n)
    out[0, 0] = stay
    out[0, 1:] = np.asarray(model.post_jump_dist) * (1.0 - stay)
    return out


class _HypothesisBank:
    """Shared precomputation for the exact regime posterior of one model."""

    def __init__(self, model: PdmpModel, sigma2: float):
        self.model = model
        self.sigma2 = sigma2
        self.base = float(model.link_eval(model.x0))
        N = model.horizon_steps
        d = model.d
        stay = np.array([no_jump_prob(model, n) for n in range(N)])
        surv = np.concatenate([[1.0], np.cumprod(stay)])  # surv[k] = P(no jump through epoch k)
        self.log_surv = np.log(surv)
        # bucket t (first active epoch): P = surv[t-1] - surv[t], split over regimes
        bucket = surv[:-1] - surv[1:]
        self.log_bucket = np.log(np.maximum(bucket[:, None] * np.asarray(model.post_jump_dist)[None, :], 1e-300))
        # paths[t-1, i, n] with growth (n - t)^+ applied to the base level
        steps = np.maximum(np.arange(N + 1)[None, :] - np.arange(1, N + 1)[:, None], 0)
        self.paths = np.stack(
            [_mode_mean(model, self.base, i, steps) for i in range(d)], axis=1
        )  # (N, d, N+1)

    def log_emission(self, y: float, level) -> np.ndarray:
        return -0.5 * math.log(2.0 * math.pi * self.sigma2) - (y - np.asarray(level)) ** 2 / (2.0 * self.sigma2)


def kalman_posterior(
    observations,
    model: PdmpModel,
    sigma2: Optional[float] = None,
) -> np.ndarray:
    """Exact regime posteriors P(M_j | y_1..y_k) for every k, shape (K+1, d+1).

    Enumerates (first active epoch, regime) hypotheses with deterministic
    paths and plain Gaussian emissions; the first observation is uninformative
    (all paths share the pre-jump level at epoch 0).
    """
    y = np.asarray(getattr(observations, "y", observations), dtype=float)
    if sigma2 is None:
        sigma2 = model.noise.sigma2
    bank = _HypothesisBank(model, sigma2)
    return _posterior_scan(bank, y, stop_rule=None)[0]


def _posterior_scan(bank: _HypothesisBank, y: np.ndarray, stop_rule=None):
    """Shared forward scan; optionally stops early when stop_rule fires.

    Returns (posteriors so far, tau, action); tau is None without a stop.
    """
    model = bank.model
    d = model.d
    K = len(y) - 1
    ll_jump = np.full((max(K, 1), d), -np.inf)
    ll_null = 0.0
    posts = np.zeros((K + 1, d + 1))
    posts[0, 0] = 1.0
    if stop_rule is not None:
        fired = stop_rule(posts[0])
        if fired is not None:
            return posts[:1], 0, fired
    for k in range(1, K + 1):
        ll_jump[k - 1, :] = ll_null
        lev = bank.paths[:k, :, k]
        ll_jump[:k, :] += bank.log_emission(y[k], lev)
        ll_null += float(bank.log_emission(y[k], bank.base))
        lw_j = bank.log_bucket[:k, :] + ll_jump[:k, :]
        lw_0 = bank.log_surv[k] + ll_null
        top = max(float(lw_j.max()), lw_0)
        w_j = np.exp(lw_j - top)
        w_0 = math.exp(lw_0 - top)
        z = w_0 + w_j.sum()
        posts[k, 0] = w_0 / z
        posts[k, 1:] = w_j.sum(axis=0) / z
        if stop_rule is not None:
            fired = stop_rule(posts[k])
            if fired is not None:
                return posts[: k + 1], k, fired
    return posts, None, 0


def _fixed_rule(threshold: float):
    def rule(post: np.ndarray):
        j = int(np.argmax(post[1:])) + 1
        return j if post[j] > threshold else None

    return rule


def _calibrated_rule(costs: CostParams):
    alpha, beta, delta = costs.alpha, costs.beta, costs.delta

    def rule(post: np.ndarray):
        lhs = beta * delta * post[1:].sum()
        # gamma has a zero diagonal, so gamma[:, j] @ post already skips regime j
        decision_cost = alpha * post[0] + costs.gamma.T @ post[1:]
        if np.all(lhs <= decision_cost):
            return None
        return int(np.argmin(decision_cost)) + 1

    return rule


def kalman_detect(observations, model: PdmpModel, rule, sigma2: Optional[float] = None) -> Tuple[Optional[int], int]:
    """Scan the posterior online; stop per the rule.

    ``rule`` is ``("fixed", s)`` or ``("calibrated", CostParams)``.
    """
    y = np.asarray(getattr(observations, "y", observations), dtype=float)
    if sigma2 is None:
        sigma2 = model.noise.sigma2
    bank = _HypothesisBank(model, sigma2)
    kind, arg = rule
    stop_rule = _fixed_rule(float(arg)) if kind == "fixed" else _calibrated_rule(arg)
    _, tau, action = _posterior_scan(bank, y, stop_rule)
    return tau, action


class MaDetector:
    """Batch wrapper: moving-average stop plus likelihood mode choice."""

    wants_truth = False

    def __init__(self, model: PdmpModel, config: MaConfig, sigma2: Optional[float] = None):
        self.model = model
        self.config = config
        self.sigma2 = model.noise.sigma2 if sigma2 is None else sigma2

    def _stream(self, Y: np.ndarray) -> np.ndarray:
        return linearize_observations(Y) if self.model.link == "inverse" else Y

    def detect_batch(self, Y: np.ndarray, truth=None):
        Z = self._stream(Y)
        B, cols = Z.shape
        taus = np.full(B, cols, dtype=np.int64)
        actions = np.zeros(B, dtype=np.int64)
        for r in range(B):
            tau = ma_detect(Z[r], self.config)
            if tau is not None:
                taus[r] = tau
                actions[r] = ma_mode_choice(Z[r], tau, self.model, self.sigma2)
        return taus, actions, np.zeros(B, dtype=np.int64)


class KalmanDetector:
    """Batch wrapper around the exact-regime-posterior detector."""

    wants_truth = False

    def __init__(self, model: PdmpModel, rule, sigma2: Optional[float] = None):
        self.model = model
        self.rule = rule
        self.sigma2 = model.noise.sigma2 if sigma2 is None else sigma2

    def _stream(self, Y: np.ndarray) -> np.ndarray:
        return linearize_observations(Y) if self.model.link == "inverse" else Y

    def detect_batch(self, Y: np.ndarray, truth=None):
        Z = self._stream(Y)
        B, cols = Z.shape
        bank = _HypothesisBank(self.model, self.sigma2)
        kind, arg = self.rule
        stop_rule = _fixed_rule(float(arg)) if kind == "fixed" else _calibrated_rule(arg)
        taus = np.full(B, cols, dtype=np.int64)
        actions = np.zeros(B, dtype=np.int64)
        for r in range(B):
            _, tau, action = _posterior_scan(bank, Z[r], stop_rule)
            if tau is not None:
                taus[r] = tau
                actions[r] = action
        return taus, actions, np.zeros(B, dtype=np.int64)
