"""Synchronous advantage actor-critic.

One gradient step per short rollout, advantages are n-step returns minus
``V(s)``, no clipping and no advantage normalisation.  With ``n_epochs=1`` and
clipping disabled, PPO's first gradient on the same rollout is identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from passgym.env import ShapingConfig
from passgym.nn import MlpParams, NumericError, adam_step, backward, forward, log_softmax

from passgym.agents.buffers import RolloutBuffer
from passgym.agents.onpolicy import RolloutCollector, training_env_config
from passgym.agents.policies import ActorCritic, GraphTask, policy_input_dim, value_input_dim
from passgym.agents.ppo import PpoLearner, TrainResult, actor_critic_result, value_loss_and_grad


@dataclass
class A2cConfig:
    lr: float = 3e-4
    gamma: float = 0.99
    n_steps: int = 8
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    total_steps: int = 50_000
    n_envs: int = 4
    hidden_dims: tuple[int, ...] = (256, 256)
    value_input_mode: str = "obs_only"
    shaping: ShapingConfig = field(default_factory=ShapingConfig)

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")


def a2c_policy_gradient(policy: MlpParams, inputs: np.ndarray, actions: np.ndarray, advantages: np.ndarray,
                        entropy_coef: float = 0.0) -> tuple[float, MlpParams]:
    """Gradient of ``-mean(log pi(a|s) * A) - c_ent * mean(H)``."""
    logits, cache = forward(policy, inputs)
    lp = log_softmax(logits)
    probs = np.exp(lp)
    n = len(actions)
    chosen = lp[np.arange(n), actions]
    loss = -float(np.mean(chosen * advantages))
    g_logits = probs * (advantages / n)[:, None]
    g_logits[np.arange(n), actions] -= advantages / n
    if entropy_coef:
        ent = -(probs * lp).sum(axis=1)
        loss -= entropy_coef * float(np.mean(ent))
        g_logits += (entropy_coef / n) * probs * (lp + ent[:, None])
    grads, _ = backward(policy, cache, g_logits)
    return loss, grads


def a2c_train(task: GraphTask, config: A2cConfig, seed: int) -> TrainResult:
    env_config = training_env_config(task, config.shaping, config.gamma)
    model = ActorCritic.create(task.n_actions, config.hidden_dims, np.random.default_rng([seed, 0]),
                               config.value_input_mode)
    learner = PpoLearner.create(model, config.lr)
    collector = RolloutCollector(task, env_config, config.n_envs, seed)
    n_actions = task.n_actions
    buffer = RolloutBuffer(config.n_steps, config.n_envs, policy_input_dim(n_actions),
                           value_input_dim(config.value_input_mode, n_actions))
    n_updates = max(1, config.total_steps // (config.n_steps * config.n_envs))
    log_every = max(1, n_updates // 50)
    log, window = [], []
    try:
        for update in range(1, n_updates + 1):
            buffer.clear()
            last_values = collector.collect(model, buffer, config.n_steps)
            # lambda = 1 turns GAE into the n-step return minus V(s)
            buffer.compute_returns_and_advantages(last_values, config.gamma, 1.0)
            data = buffer.flat()
            pi_loss, pi_grads = a2c_policy_gradient(model.policy, data["policy_inputs"], data["actions"],
                                                    data["advantages"], config.entropy_coef)
            v_loss, v_grads = value_loss_and_grad(model.value, data["value_inputs"], data["returns"],
                                                  config.value_coef)
            if not np.isfinite(pi_loss + v_loss):
                raise NumericError("non-finite A2C loss")
            adam_step(model.policy, pi_grads, learner.policy_opt)
            adam_step(model.value, v_grads, learner.value_opt)
            window.append((pi_loss, v_loss))
            if update % log_every == 0 or update == n_updates:
                losses = np.mean(window, axis=0)
                window.clear()
                log.append({"update": update, "steps": collector.total_steps, **collector.stats.drain(),
                            "policy_loss": float(losses[0]), "value_loss": float(losses[1]),
                            "clip_fraction": 0.0, "approx_kl": None})
    except NumericError as exc:
        exc.partial = actor_critic_result("a2c", model, log, learner, collector, config, seed, n_actions, True)
        raise
    return actor_critic_result("a2c", model, log, learner, collector, config, seed, n_actions)
