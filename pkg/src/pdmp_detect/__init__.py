"""Change-point detection for one-jump PDMPs observed in discrete time through noise."""

from .model import (
    NoiseSpec,
    PdmpModel,
    Trajectory,
    TrajectoryBatch,
    ObservationSequence,
    flow_eval,
    survival,
    simulate_trajectory,
    simulate_trajectory_batch,
    observe,
    observe_batch,
    noise_density,
)
from .kernel import CostParams, make_cost_params, no_jump_prob, stage_cost, step_sample, strategy_cost, terminal_cost
from .quantize import CLVQSchedule, QuantGrid, TransitionMatrix, clvq_train, distortion, estimate_transitions, project
from .filtering import Belief, BarChainSampler, belief_l1, oracle_filter, psi_bar, simulate_bar_chain
from .dp import (
    BeliefGrid,
    BoundConstants,
    PolicySolution,
    backward_solve,
    bound_constants,
    build_belief_grids,
    expected_cost_on_point,
    theorem_bounds,
)
from .policy import EvalSummary, QuantPolicyDetector, StrategyRun, evaluate_strategy, run_policy
from .baselines import KalmanDetector, MaConfig, MaDetector, kalman_detect, kalman_posterior, ma_detect, ma_mode_choice
from .bench import ResultTable, format_table, run_benchmark
from .config import AppConfig, load_config

__version__ = "0.1.0"
