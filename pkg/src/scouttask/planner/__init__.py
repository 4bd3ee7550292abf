from scouttask.planner.acquisition import (
    coverage,
    coverage_arrays,
    mi_ucb,
    mutual_information,
    posterior_expected_reward,
    reward_cgf,
)
from scouttask.planner.mcts import MCTSTree, PlanEvaluator, RoundResult, decmcts_round
from scouttask.planner.types import (
    PlannerConfig,
    PlannerError,
    TeamPlanDistribution,
    TrajectoryPlan,
)
from scouttask.planner.wire import decode_distribution, encode_distribution

__all__ = [
    "MCTSTree", "PlanEvaluator", "PlannerConfig", "PlannerError", "RoundResult",
    "TeamPlanDistribution", "TrajectoryPlan", "coverage", "coverage_arrays",
    "decmcts_round", "decode_distribution", "encode_distribution", "mi_ucb",
    "mutual_information", "posterior_expected_reward", "reward_cgf",
]
