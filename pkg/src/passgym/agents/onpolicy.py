"""Rollout collection shared by PPO and A2C."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from passgym.env import EnvConfig, PassOrderingEnv, ShapingConfig
from passgym.nn import sample

from passgym.agents.buffers import RolloutBuffer
from passgym.agents.policies import ActorCritic, GraphTask, log_probs_of, policy_features, value_features


def worker_rng(seed: int, worker: int) -> np.random.Generator:
    """Independent stream per environment instance, derived from the master seed."""
    return np.random.default_rng([seed, 1, worker])


def training_env_config(task: GraphTask, shaping: ShapingConfig, gamma: float) -> EnvConfig:
    base = task.env_config
    if not np.isclose(base.gamma, gamma):
        raise ValueError(f"agent gamma {gamma} differs from environment gamma {base.gamma}")
    shaping = dataclasses.replace(shaping, gamma=base.gamma)
    return dataclasses.replace(base, shaping=shaping)


@dataclass
class EpisodeStats:
    returns: list[float] = field(default_factory=list)
    final_op_counts: list[int] = field(default_factory=list)
    base_returns: list[float] = field(default_factory=list)

    def drain(self) -> dict:
        out = {
            "episodes": len(self.returns),
            "mean_episode_return": float(np.mean(self.returns)) if self.returns else None,
            "mean_base_return": float(np.mean(self.base_returns)) if self.base_returns else None,
            "mean_final_opcount": float(np.mean(self.final_op_counts)) if self.final_op_counts else None,
        }
        self.returns.clear()
        self.final_op_counts.clear()
        self.base_returns.clear()
        return out


class RolloutCollector:
    """Steps ``n_envs`` independent environments in lockstep.

    Each environment owns its RNG stream, used both to pick the next episode's
    graph and to sample actions, so results do not depend on how the
    environments are batched.
    """

    def __init__(self, task: GraphTask, env_config: EnvConfig, n_envs: int, seed: int):
        self.task = task
        self.shaped = env_config.shaping.enabled
        self.envs = [PassOrderingEnv(env_config, task.catalog) for _ in range(n_envs)]
        self.rngs = [worker_rng(seed, i) for i in range(n_envs)]
        for env, rng in zip(self.envs, self.rngs):
            env.reset(task.draw(rng))
        self.running_return = np.zeros(n_envs)
        self.running_base = np.zeros(n_envs)
        self.stats = EpisodeStats()
        self.total_steps = 0

    @property
    def n_envs(self) -> int:
        return len(self.envs)

    def inputs(self, mode: str) -> tuple[np.ndarray, np.ndarray]:
        p = np.stack([policy_features(env) for env in self.envs])
        v = np.stack([value_features(env, mode, p[i]) for i, env in enumerate(self.envs)])
        return p, v

    def collect(self, model: ActorCritic, buffer: RolloutBuffer, n_steps: int) -> np.ndarray:
        """Fill ``buffer`` with ``n_steps`` per environment; returns bootstrap values."""
        for _ in range(n_steps):
            p, v = self.inputs(model.value_input_mode)
            logits = model.logits(p)
            values = model.values(v)
            actions = np.array([sample(logits[i], rng) for i, rng in enumerate(self.rngs)], dtype=np.int64)
            log_probs = log_probs_of(logits, actions)
            rewards = np.zeros(self.n_envs)
            dones = np.zeros(self.n_envs)
            for i, env in enumerate(self.envs):
                result = env.step_for_training(int(actions[i]))
                rewards[i] = result.reward
                self.running_return[i] += result.reward
                self.running_base[i] += result.info.get("base_reward", result.reward)
                if result.done:
                    dones[i] = 1.0
                    self.stats.returns.append(float(self.running_return[i]))
                    self.stats.base_returns.append(float(self.running_base[i]))
                    self.stats.final_op_counts.append(result.info["op_count"])
                    self.running_return[i] = 0.0
                    self.running_base[i] = 0.0
                    env.reset(self.task.draw(self.rngs[i]))
            buffer.add(p, v, actions, rewards, dones, log_probs, values)
            self.total_steps += self.n_envs
        _, v = self.inputs(model.value_input_mode)
        return model.values(v)
