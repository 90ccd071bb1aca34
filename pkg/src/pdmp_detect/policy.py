"""Online execution of the solved stopping strategy and strategy evaluation.

The online loop recursively filters the real observation stream through the
codebook filter, projects the (belief, observation) pair onto the solved
joint grid, and stops the first time the stored stop flag fires, declaring
the stored regime.  Decisions at epoch k read only observations up to k.

``evaluate_strategy`` scores any detector on freshly simulated runs; the
trajectories and observation noise depend only on the seed, never on the
detector, so competing detectors can be compared on identical runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dp import BeliefGrid, PolicySolution, project_joint
from .filtering import grid_link_values, psi_bar_batch
from .kernel import CostParams, strategy_cost_batch
from .model import PdmpModel, Trajectory, observe_batch, simulate_trajectory_batch
from .quantize import QuantGrid, TransitionMatrix

__all__ = [
    "StrategyRun",
    "EvalSummary",
    "QuantPolicyDetector",
    "NeverStopDetector",
    "ConstantDetector",
    "OracleDetector",
    "run_policy",
    "evaluate_strategy",
]


@dataclass
class StrategyRun:
    """Outcome of running a detector on one observation stream.

    Truth-dependent fields (cost, delay, early, observations after the jump)
    are filled only when the underlying trajectory is known.
    """

    tau: Optional[int]
    action: int
    degenerate_events: int = 0
    cost: Optional[float] = None
    delay: Optional[float] = None
    obs_after_jump: Optional[int] = None
    early: Optional[bool] = None


@dataclass
class EvalSummary:
    """Monte Carlo summary of a detector's performance."""

    n_runs: int
    mean_cost: float
    sd_cost: float
    ci95: float
    mean_delay: float
    sd_delay: float
    mean_obs_after_jump: float
    early_count: int
    wrong_count: int
    no_stop_count: int
    degenerate_events: int

    def row(self) -> dict:
        return {
            "runs": self.n_runs,
            "mean_cost": self.mean_cost,
            "sd_cost": self.sd_cost,
            "ci95": self.ci95,
            "mean_delay": self.mean_delay,
            "sd_delay": self.sd_delay,
            "mean_obs_after_jump": self.mean_obs_after_jump,
            "early": self.early_count,
            "wrong_mode": self.wrong_count,
            "no_stop": self.no_stop_count,
            "degenerate": self.degenerate_events,
        }


class QuantPolicyDetector:
    """Runs the solved stopping rule on real observation streams."""

    wants_truth = False

    def __init__(
        self,
        model: PdmpModel,
        grids: Sequence[QuantGrid],
        transitions: Sequence[TransitionMatrix],
        bgrids: Sequence[BeliefGrid],
        solution: PolicySolution,
    ):
        if len(bgrids) != len(grids):
            raise ValueError("solution grids and state grids disagree on the horizon")
        for n, bg in enumerate(bgrids):
            if bg.thetas.shape[1] != grids[n].ell:
                raise ValueError(f"belief grid at step {n} does not match the state grid")
        self.model = model
        self.grids = grids
        self.transitions = transitions
        self.bgrids = bgrids
        self.solution = solution
        self.link_values = [grid_link_values(model, g) for g in grids]

    def detect_batch(self, Y: np.ndarray, truth=None):
        model = self.model
        N = model.horizon_steps
        if Y.shape[1] != N + 1:
            raise ValueError("observation streams must have N+1 entries")
        B = Y.shape[0]
        thetas = np.zeros((B, self.grids[0].ell))
        thetas[:, 0] = 1.0
        taus = np.full(B, N + 1, dtype=np.int64)
        actions = np.zeros(B, dtype=np.int64)
        degenerate = np.zeros(B, dtype=np.int64)
        active = np.ones(B, dtype=bool)
        for k in range(N + 1):
            idx = project_joint(self.bgrids[k], thetas, Y[:, k])
            fire = active & self.solution.stop[k][idx]
            taus[fire] = k
            actions[fire] = self.solution.action[k][idx[fire]]
            active &= ~fire
            if k < N:
                lik = model.noise.density(Y[:, k + 1][:, None] - self.link_values[k + 1][None, :])
                thetas, deg = psi_bar_batch(thetas, self.transitions[k].probs, lik)
                degenerate += deg & active
        return taus, actions, degenerate

    def detect(self, y: np.ndarray):
        taus, actions, degenerate = self.detect_batch(np.asarray(y, dtype=float)[None, :])
        tau = None if taus[0] > self.model.horizon_steps else int(taus[0])
        return tau, int(actions[0]), int(degenerate[0])


def run_policy(
    observations,
    grids: Sequence[QuantGrid],
    transitions: Sequence[TransitionMatrix],
    bgrids: Sequence[BeliefGrid],
    solution: PolicySolution,
    costs: Optional[CostParams] = None,
    model: Optional[PdmpModel] = None,
    trajectory: Optional[Trajectory] = None,
) -> StrategyRun:
    """Run the stopping strategy on one stream; fill realized metrics if the truth is given."""
    if model is None:
        raise ValueError("model is required")
    det = QuantPolicyDetector(model, grids, transitions, bgrids, solution)
    y = np.asarray(getattr(observations, "y", observations), dtype=float)
    tau, action, degenerate = det.detect(y)
    run = StrategyRun(tau=tau, action=action, degenerate_events=degenerate)
    if trajectory is not None and costs is not None:
        modes = trajectory.modes_at_epochs()
        taus = np.array([model.horizon_steps + 1 if tau is None else tau])
        run.cost = float(strategy_cost_batch(costs, modes[None, :], taus, np.array([action]))[0])
        if tau is not None:
            t_tau = tau * model.delta
            run.early = bool(t_tau < trajectory.jump_time)
            if not run.early:
                run.delay = float(t_tau - trajectory.jump_time)
                run.obs_after_jump = int(((model.times >= trajectory.jump_time) & (model.times <= t_tau)).sum())
    return run


class NeverStopDetector:
    wants_truth = False

    def detect_batch(self, Y, truth=None):
        B, cols = Y.shape
        return np.full(B, cols, dtype=np.int64), np.zeros(B, dtype=np.int64), np.zeros(B, dtype=np.int64)


class ConstantDetector:
    """Stops at a fixed epoch with a fixed decision (testing aid)."""

    wants_truth = False

    def __init__(self, tau: int, action: int):
        self.tau = tau
        self.action = action

    def detect_batch(self, Y, truth=None):
        B = Y.shape[0]
        return (
            np.full(B, self.tau, dtype=np.int64),
            np.full(B, self.action, dtype=np.int64),
            np.zeros(B, dtype=np.int64),
        )


class OracleDetector:
    """Told the truth: stops at the first epoch at or after the jump, right regime."""

    wants_truth = True

    def __init__(self, model: PdmpModel):
        self.model = model

    def detect_batch(self, Y, truth=None):
        if truth is None:
            raise ValueError("oracle detector needs the simulated trajectories")
        N = self.model.horizon_steps
        B = Y.shape[0]
        first_post = np.ceil(truth.jump_times / self.model.delta - 1e-12).astype(np.int64)
        taus = np.where(first_post <= N, np.maximum(first_post, 0), N + 1)
        actions = np.where(taus <= N, truth.post_modes, 0)
        return taus, actions.astype(np.int64), np.zeros(B, dtype=np.int64)


def evaluate_strategy(
    model: PdmpModel,
    detector,
    costs: CostParams,
    n_runs: int,
    seed: int,
) -> EvalSummary:
    """Score a detector on n_runs fresh trajectories.

    All randomness derives from ``seed`` alone, so two detectors evaluated
    with the same seed see bitwise-identical trajectories and observations.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    batch = simulate_trajectory_batch(model, n_runs, rng)
    Y = observe_batch(batch, model, rng)
    taus, actions, degenerate = detector.detect_batch(Y, truth=batch if detector.wants_truth else None)

    N = model.horizon_steps
    times = model.times
    modes = np.stack([batch.modes_at(t) for t in times], axis=1)
    cost = strategy_cost_batch(costs, modes, taus, actions)

    stopped = taus <= N
    t_tau = np.minimum(taus, N) * model.delta
    early = stopped & (t_tau < batch.jump_times)
    detected = stopped & ~early
    delays = t_tau - batch.jump_times
    obs_after = np.floor(t_tau / model.delta + 1e-12) - np.ceil(batch.jump_times / model.delta - 1e-12) + 1
    wrong = detected & (actions != batch.post_modes)

    mean_delay = float(delays[detected].mean()) if detected.any() else float("nan")
    sd_delay = float(delays[detected].std()) if detected.any() else float("nan")
    mean_obs = float(obs_after[detected].mean()) if detected.any() else float("nan")
    return EvalSummary(
        n_runs=n_runs,
        mean_cost=float(cost.mean()),
        sd_cost=float(cost.std()),
        ci95=float(1.96 * cost.std() / np.sqrt(n_runs)),
        mean_delay=mean_delay,
        sd_delay=sd_delay,
        mean_obs_after_jump=mean_obs,
        early_count=int(early.sum()),
        wrong_count=int(wrong.sum()),
        no_stop_count=int((~stopped).sum()),
        degenerate_events=int(degenerate.sum()),
    )
