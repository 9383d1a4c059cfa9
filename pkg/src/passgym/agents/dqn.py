"""Deep Q-learning with uniform replay, a hard-copied target network and
linearly decaying epsilon-greedy exploration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from passgym.nn import AdamState, MlpParams, NumericError, adam_step, argmax, backward, forward, init_mlp

from passgym.agents.buffers import ReplayBuffer
from passgym.agents.onpolicy import EpisodeStats, training_env_config, worker_rng
from passgym.agents.policies import GraphTask, QPolicy, policy_features, policy_input_dim
from passgym.agents.ppo import TrainResult, config_dict
from passgym.env import PassOrderingEnv, ShapingConfig


@dataclass
class DqnConfig:
    lr: float = 3e-4
    gamma: float = 0.99
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    target_update_interval: int = 1000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    exploration_fraction: float = 0.2
    train_freq: int = 4
    total_steps: int = 50_000
    hidden_dims: tuple[int, ...] = (256, 256)
    log_interval: int = 1000

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        for name in ("epsilon_start", "epsilon_end", "exploration_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def epsilon(self, step: int) -> float:
        span = self.exploration_fraction * self.total_steps
        if span <= 0:
            return self.epsilon_end
        frac = min(1.0, step / span)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


def q_targets(target: MlpParams, rewards: np.ndarray, next_inputs: np.ndarray, dones: np.ndarray,
              gamma: float) -> np.ndarray:
    """``r + gamma * (1 - done) * max_a Q_target(s', a)``."""
    if gamma == 0.0:
        return rewards.astype(np.float64).copy()
    next_q = forward(target, next_inputs)[0]
    return rewards + gamma * (1.0 - dones) * next_q.max(axis=1)


def q_loss_and_grad(q: MlpParams, inputs: np.ndarray, actions: np.ndarray,
                    targets: np.ndarray) -> tuple[float, MlpParams]:
    out, cache = forward(q, inputs)
    n = len(actions)
    diff = out[np.arange(n), actions] - targets
    g = np.zeros_like(out)
    g[np.arange(n), actions] = 2.0 * diff / n
    grads, _ = backward(q, cache, g)
    return float(np.mean(diff ** 2)), grads


def dqn_train(task: GraphTask, config: DqnConfig, seed: int) -> TrainResult:
    env_config = training_env_config(task, ShapingConfig(), config.gamma)
    in_dim = policy_input_dim(task.n_actions)
    q = init_mlp(in_dim, config.hidden_dims, task.n_actions, np.random.default_rng([seed, 0]))
    target = q.copy()
    opt = AdamState.for_params(q, config.lr)
    replay = ReplayBuffer(min(config.buffer_capacity, max(config.total_steps, 1)), in_dim, seed=seed)
    rng = worker_rng(seed, 0)
    env = PassOrderingEnv(env_config, task.catalog)
    env.reset(task.draw(rng))
    stats = EpisodeStats()
    running = 0.0
    updates = 0
    losses: list[float] = []
    log = []

    def result(aborted: bool = False) -> TrainResult:
        meta = {"algo": "dqn", "seed": seed, "steps": config.total_steps, "updates": updates, "shaping": False,
                "policy_input_dim": in_dim, "config": config_dict(config)}
        if aborted:
            meta["aborted"] = True
        return TrainResult(QPolicy(q), log, {"q": opt.to_dict()}, meta)

    x = policy_features(env)
    try:
        for step in range(1, config.total_steps + 1):
            if rng.random() < config.epsilon(step - 1):
                action = int(rng.integers(env.action_space_size))
            else:
                action = argmax(forward(q, x)[0])
            result_step = env.step(action)
            running += result_step.reward
            next_x = policy_features(env, result_step.observation)
            replay.add(x, action, result_step.reward, next_x, result_step.done)
            if result_step.done:
                stats.returns.append(running)
                stats.base_returns.append(running)
                stats.final_op_counts.append(result_step.info["op_count"])
                running = 0.0
                env.reset(task.draw(rng))
                next_x = policy_features(env)
            x = next_x
            if len(replay) >= config.batch_size and step % config.train_freq == 0:
                batch = replay.sample(config.batch_size)
                y = q_targets(target, batch["rewards"], batch["next_observations"], batch["dones"], config.gamma)
                loss, grads = q_loss_and_grad(q, batch["observations"], batch["actions"], y)
                if not np.isfinite(loss):
                    raise NumericError("non-finite DQN loss")
                adam_step(q, grads, opt)
                losses.append(loss)
                updates += 1
            if step % config.target_update_interval == 0:
                target = q.copy()
            if step % config.log_interval == 0 or step == config.total_steps:
                log.append({"update": updates, "steps": step, **stats.drain(),
                            "policy_loss": None, "value_loss": float(np.mean(losses)) if losses else None,
                            "clip_fraction": None, "approx_kl": None, "epsilon": config.epsilon(step)})
                losses.clear()
    except NumericError as exc:
        exc.partial = result(aborted=True)
        raise
    return result()
