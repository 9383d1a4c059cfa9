"""Network input features, policy objects, and policy evaluation.

Networks never see raw counts: observations are divided by the episode's
initial op count and extended with episode bookkeeping: the fraction of the
horizon remaining, how often each action has been taken, and which actions
are known no-ops on the current graph (applied since the last change).  The
value network may additionally receive the cost features
``(flops, transcendentals) / initial_flops``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from passgym.env import EnvConfig, PassOrderingEnv
from passgym.ir import OBSERVATION_SIZE, Graph, observation, op_count
from passgym.nn import MlpParams, argmax, forward, init_mlp, log_softmax, sample
from passgym.passes import DEFAULT_CATALOG, Catalog, apply_pass

COST_FEATURE_DIM = 2
VALUE_INPUT_MODES = ("obs_only", "obs_plus_cost_features")


def policy_input_dim(n_actions: int) -> int:
    return OBSERVATION_SIZE + 1 + 2 * n_actions


def policy_features(env: PassOrderingEnv, obs: Optional[np.ndarray] = None) -> np.ndarray:
    obs = observation(env.graph) if obs is None else obs
    horizon = env.config.horizon
    remaining = 1.0 - env.step_index / horizon
    return np.concatenate([obs / max(1, env.initial_op_count), [remaining], env.action_counts / horizon,
                           env.settled])


def cost_features(env: PassOrderingEnv) -> np.ndarray:
    scale = max(1, env.initial_flop_count)
    return np.array([env.cost.flop_count / scale, env.cost.transcendental_count / scale])


def value_features(env: PassOrderingEnv, mode: str, policy_input: Optional[np.ndarray] = None) -> np.ndarray:
    x = policy_features(env) if policy_input is None else policy_input
    if mode == "obs_plus_cost_features":
        return np.concatenate([x, cost_features(env)])
    if mode != "obs_only":
        raise ValueError(f"unknown value_input_mode {mode!r}")
    return x


def value_input_dim(mode: str, n_actions: int) -> int:
    return policy_input_dim(n_actions) + (COST_FEATURE_DIM if mode == "obs_plus_cost_features" else 0)


class Policy(Protocol):
    def act(self, env: PassOrderingEnv, deterministic: bool = True,
            rng: Optional[np.random.Generator] = None) -> int: ...


@dataclass
class ActorCritic:
    policy: MlpParams
    value: MlpParams
    value_input_mode: str = "obs_only"

    @classmethod
    def create(cls, n_actions: int, hidden_dims: Sequence[int], rng: np.random.Generator,
               value_input_mode: str = "obs_only") -> "ActorCritic":
        if value_input_mode not in VALUE_INPUT_MODES:
            raise ValueError(f"unknown value_input_mode {value_input_mode!r}")
        policy = init_mlp(policy_input_dim(n_actions), hidden_dims, n_actions, rng, output_gain=0.01)
        value = init_mlp(value_input_dim(value_input_mode, n_actions), hidden_dims, 1, rng, output_gain=1.0)
        return cls(policy, value, value_input_mode)

    def logits(self, policy_inputs: np.ndarray) -> np.ndarray:
        return forward(self.policy, policy_inputs)[0]

    def values(self, value_inputs: np.ndarray) -> np.ndarray:
        out = forward(self.value, value_inputs)[0]
        return out[..., 0]

    def act(self, env: PassOrderingEnv, deterministic: bool = True,
            rng: Optional[np.random.Generator] = None) -> int:
        logits = self.logits(policy_features(env))
        if deterministic:
            return argmax(logits)
        return sample(logits, rng)

    def copy(self) -> "ActorCritic":
        return ActorCritic(self.policy.copy(), self.value.copy(), self.value_input_mode)


@dataclass
class QPolicy:
    q: MlpParams

    def act(self, env: PassOrderingEnv, deterministic: bool = True,
            rng: Optional[np.random.Generator] = None) -> int:
        return argmax(forward(self.q, policy_features(env))[0])


class GreedyPolicy:
    """One-step lookahead: the action with the largest immediate op-count drop."""

    def act(self, env: PassOrderingEnv, deterministic: bool = True,
            rng: Optional[np.random.Generator] = None) -> int:
        best, best_drop = 0, None
        current = env.cost.op_count
        for action in range(env.action_space_size):
            after, _ = apply_pass(env.graph, env.pass_id(action), env.catalog)
            drop = current - op_count(after)
            if best_drop is None or drop > best_drop:
                best, best_drop = action, drop
        return best


@dataclass
class SequencePolicy:
    """Replays a fixed action sequence (then repeats its last action)."""

    actions: Sequence[int]

    def act(self, env: PassOrderingEnv, deterministic: bool = True,
            rng: Optional[np.random.Generator] = None) -> int:
        i = min(env.step_index, len(self.actions) - 1)
        return int(self.actions[i])


@dataclass
class EpisodeResult:
    actions: list[int]
    pass_ids: list[int]
    rewards: list[float]
    final_op_count: int
    episode_return: float
    final_graph: Graph = field(repr=False, default=None)


def evaluate_policy(policy: Policy, env: PassOrderingEnv, graph: Graph, deterministic: bool = True,
                    rng: Optional[np.random.Generator] = None) -> EpisodeResult:
    """Run one unshaped episode.  The return is the discounted sum of rewards."""
    env.reset(graph)
    actions, rewards = [], []
    while not env.done:
        action = policy.act(env, deterministic=deterministic, rng=rng)
        result = env.step(action)
        actions.append(int(action))
        rewards.append(result.reward)
    gamma = env.config.gamma
    ret = float(sum(gamma ** t * r for t, r in enumerate(rewards)))
    return EpisodeResult(actions, list(env.history), rewards, env.cost.op_count, ret, env.graph)


@dataclass
class GraphTask:
    """Environment factory plus the graphs episodes are drawn from."""

    graphs: Sequence[Graph]
    env_config: EnvConfig = field(default_factory=EnvConfig)
    catalog: Catalog = DEFAULT_CATALOG

    def __post_init__(self):
        if not self.graphs:
            raise ValueError("a task needs at least one graph")

    def make_env(self) -> PassOrderingEnv:
        return PassOrderingEnv(self.env_config, self.catalog)

    def draw(self, rng: np.random.Generator) -> Graph:
        return self.graphs[int(rng.integers(len(self.graphs)))]

    @property
    def n_actions(self) -> int:
        return self.make_env().action_space_size


def log_probs_of(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    return np.take_along_axis(lp, actions[:, None], axis=1)[:, 0]
