"""RL agents (PPO, A2C, DQN), baselines and policy evaluation."""

from passgym.agents.a2c import A2cConfig, a2c_policy_gradient, a2c_train
from passgym.agents.baselines import BudgetError, SearchResult, brute_force_optimal, greedy_baseline
from passgym.agents.buffers import ReplayBuffer, RolloutBuffer, Transition, compute_gae
from passgym.agents.dqn import DqnConfig, dqn_train
from passgym.agents.policies import (
    ActorCritic,
    EpisodeResult,
    GraphTask,
    GreedyPolicy,
    QPolicy,
    SequencePolicy,
    evaluate_policy,
    policy_features,
    policy_input_dim,
    value_input_dim,
)
from passgym.agents.ppo import PpoConfig, PpoLearner, TrainResult, policy_loss_and_grad, ppo_train, ppo_update

__all__ = [
    "A2cConfig", "ActorCritic", "BudgetError", "DqnConfig", "EpisodeResult", "GraphTask", "GreedyPolicy",
    "PpoConfig", "PpoLearner", "QPolicy", "ReplayBuffer", "RolloutBuffer", "SearchResult", "SequencePolicy",
    "TrainResult", "Transition", "a2c_policy_gradient", "a2c_train", "brute_force_optimal", "compute_gae",
    "dqn_train", "evaluate_policy", "greedy_baseline", "policy_features", "policy_input_dim", "policy_loss_and_grad",
    "ppo_train", "ppo_update", "value_input_dim",
]
