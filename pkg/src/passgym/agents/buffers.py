"""Experience containers and advantage estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class Transition:
    observation: np.ndarray
    action: int
    reward: float
    next_observation: np.ndarray
    done: bool
    cost_features: np.ndarray
    log_prob: Optional[float] = None
    value_estimate: Optional[float] = None


def compute_gae(rewards, values, dones, last_value, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates along axis 0.

    ``dones[t]`` marks that the episode ended *after* step ``t``, so the value
    of the following state is not bootstrapped.  Extra trailing axes (e.g. one
    column per environment) are handled elementwise.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError(f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    if rewards.shape[0] < 1:
        raise ValueError("need at least one step")
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(last_value, dtype=np.float64)
    running = np.zeros_like(rewards[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


class RolloutBuffer:
    """Fixed-size on-policy storage laid out ``[steps, n_envs, ...]``."""

    def __init__(self, n_steps: int, n_envs: int, policy_dim: int, value_dim: int):
        self.n_steps, self.n_envs = n_steps, n_envs
        shape = (n_steps, n_envs)
        self.policy_inputs = np.zeros(shape + (policy_dim,))
        self.value_inputs = np.zeros(shape + (value_dim,))
        self.actions = np.zeros(shape, dtype=np.int64)
        self.rewards = np.zeros(shape)
        self.dones = np.zeros(shape)
        self.log_probs = np.zeros(shape)
        self.values = np.zeros(shape)
        self.advantages: Optional[np.ndarray] = None
        self.returns: Optional[np.ndarray] = None
        self.pos = 0

    @property
    def capacity(self) -> int:
        return self.n_steps * self.n_envs

    @property
    def full(self) -> bool:
        return self.pos == self.n_steps

    def add(self, policy_inputs, value_inputs, actions, rewards, dones, log_probs, values) -> None:
        if self.full:
            raise IndexError("rollout buffer is full")
        t = self.pos
        self.policy_inputs[t] = policy_inputs
        self.value_inputs[t] = value_inputs
        self.actions[t] = actions
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.pos += 1

    def compute_returns_and_advantages(self, last_values, gamma: float, lam: float) -> None:
        self.advantages, self.returns = compute_gae(
            self.rewards[: self.pos], self.values[: self.pos], self.dones[: self.pos], last_values, gamma, lam
        )

    def flat(self) -> dict[str, np.ndarray]:
        """Samples flattened env-major so each env's steps stay contiguous."""
        if self.advantages is None:
            raise RuntimeError("compute_returns_and_advantages has not run")
        n = self.pos

        def swap(a):
            a = a[:n]
            return np.swapaxes(a, 0, 1).reshape((n * self.n_envs,) + a.shape[2:])

        return {
            "policy_inputs": swap(self.policy_inputs),
            "value_inputs": swap(self.value_inputs),
            "actions": swap(self.actions),
            "log_probs": swap(self.log_probs),
            "values": swap(self.values),
            "advantages": swap(self.advantages),
            "returns": swap(self.returns),
        }

    def clear(self) -> None:
        self.pos = 0
        self.advantages = None
        self.returns = None


class ReplayBuffer:
    """Uniform-sampling ring buffer; the oldest item is overwritten when full."""

    def __init__(self, capacity: int, obs_dim: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.observations = np.zeros((capacity, obs_dim))
        self.next_observations = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.insertions = np.zeros(capacity, dtype=np.int64)  # global insertion index per slot
        self.count = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def add(self, observation, action, reward, next_observation, done) -> None:
        slot = self.count % self.capacity
        self.observations[slot] = observation
        self.next_observations[slot] = next_observation
        self.actions[slot] = action
        self.rewards[slot] = reward
        self.dones[slot] = float(done)
        self.insertions[slot] = self.count
        self.count += 1

    def sample(self, batch_size: int) -> dict[str, np.ndarray]:
        if len(self) == 0:
            raise IndexError("cannot sample from an empty replay buffer")
        idx = self.rng.integers(0, len(self), size=batch_size)
        return {
            "observations": self.observations[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_observations": self.next_observations[idx],
            "dones": self.dones[idx],
        }
