"""Proximal policy optimization with a clipped surrogate and GAE.

Separate policy and value MLPs.  The policy always sees the observation
features; with ``value_input_mode="obs_plus_cost_features"`` the value network
is ``V(s, f)`` with ``f`` the flop/transcendental counts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from passgym.env import ShapingConfig
from passgym.nn import AdamState, MlpParams, NumericError, adam_step, backward, forward, log_softmax

from passgym.agents.buffers import RolloutBuffer
from passgym.agents.onpolicy import RolloutCollector, training_env_config
from passgym.agents.policies import ActorCritic, GraphTask, policy_input_dim, value_input_dim


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: Optional[float] = 0.2  # None disables clipping
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    lr: float = 3e-4
    batch_size: int = 256
    n_epochs: int = 10
    n_steps: int = 2048
    total_steps: int = 50_000
    n_envs: int = 4
    hidden_dims: tuple[int, ...] = (256, 256)
    value_input_mode: str = "obs_only"
    normalize_advantage: bool = True
    shaping: ShapingConfig = field(default_factory=ShapingConfig)

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        if self.clip_range is not None and not 0.0 < self.clip_range < 1.0:
            raise ValueError("clip_range must lie in (0, 1)")
        if self.n_steps % self.n_envs:
            raise ValueError("n_steps must be a multiple of n_envs")
        if not 0 < self.batch_size <= self.n_steps:
            raise ValueError("batch_size must be in (0, n_steps]")


def _onehot(actions: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(actions), n))
    out[np.arange(len(actions)), actions] = 1.0
    return out


def policy_loss_and_grad(policy: MlpParams, inputs: np.ndarray, actions: np.ndarray, old_log_probs: np.ndarray,
                         advantages: np.ndarray, clip_range: Optional[float],
                         entropy_coef: float = 0.0) -> tuple[float, MlpParams, dict]:
    """Clipped surrogate loss ``-mean(min(r*A, clip(r)*A)) - c_ent*mean(H)`` and its gradient."""
    logits, cache = forward(policy, inputs)
    lp = log_softmax(logits)
    probs = np.exp(lp)
    n = len(actions)
    new_log_probs = lp[np.arange(n), actions]
    ratio = np.exp(new_log_probs - old_log_probs)
    surr = ratio * advantages
    if clip_range is None:
        objective = surr
        active = np.ones(n)
        clip_fraction = 0.0
    else:
        clipped = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * advantages
        objective = np.minimum(surr, clipped)
        active = (surr <= clipped).astype(np.float64)
        clip_fraction = float(np.mean(np.abs(ratio - 1.0) > clip_range))
    ent = -(probs * lp).sum(axis=1)
    loss = -float(np.mean(objective))
    g_logp = -(ratio * advantages * active) / n
    g_logits = g_logp[:, None] * (_onehot(actions, probs.shape[1]) - probs)
    if entropy_coef:
        loss -= entropy_coef * float(np.mean(ent))
        g_logits += (entropy_coef / n) * probs * (lp + ent[:, None])
    grads, _ = backward(policy, cache, g_logits)
    log_ratio = new_log_probs - old_log_probs
    stats = {
        "policy_loss": -float(np.mean(objective)),
        "entropy": float(np.mean(ent)),
        "clip_fraction": clip_fraction,
        "approx_kl": float(np.mean((ratio - 1.0) - log_ratio)),
    }
    return loss, grads, stats


def value_loss_and_grad(value: MlpParams, inputs: np.ndarray, returns: np.ndarray,
                        scale: float = 1.0) -> tuple[float, MlpParams]:
    """Mean squared error of V against ``returns``; the gradient is multiplied by ``scale``."""
    out, cache = forward(value, inputs)
    diff = out[:, 0] - returns
    loss = float(np.mean(diff ** 2))
    grads, _ = backward(value, cache, (scale * 2.0 * diff / len(diff))[:, None])
    return loss, grads


@dataclass
class PpoLearner:
    model: ActorCritic
    policy_opt: AdamState
    value_opt: AdamState

    @classmethod
    def create(cls, model: ActorCritic, lr: float) -> "PpoLearner":
        return cls(model, AdamState.for_params(model.policy, lr), AdamState.for_params(model.value, lr))


def ppo_update(learner: PpoLearner, buffer: RolloutBuffer, config: PpoConfig,
               rng: np.random.Generator) -> dict:
    """Run ``n_epochs`` of shuffled minibatch Adam steps; returns mean diagnostics."""
    data = buffer.flat()
    n = len(data["actions"])
    if n == 0:
        raise ValueError("empty rollout buffer")
    adv = data["advantages"]
    if config.normalize_advantage:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    totals: dict[str, float] = {}
    batches = 0
    model = learner.model
    for _ in range(config.n_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            pi_loss, pi_grads, stats = policy_loss_and_grad(
                model.policy, data["policy_inputs"][idx], data["actions"][idx], data["log_probs"][idx],
                adv[idx], config.clip_range, config.entropy_coef)
            v_loss, v_grads = value_loss_and_grad(model.value, data["value_inputs"][idx], data["returns"][idx],
                                                  config.value_coef)
            stats["value_loss"] = v_loss
            stats["loss"] = pi_loss + config.value_coef * v_loss
            if not np.isfinite(stats["loss"]):
                raise NumericError(f"non-finite PPO loss {stats['loss']}")
            adam_step(model.policy, pi_grads, learner.policy_opt)
            adam_step(model.value, v_grads, learner.value_opt)
            for key, value in stats.items():
                totals[key] = totals.get(key, 0.0) + value
            batches += 1
    return {key: value / batches for key, value in totals.items()}


@dataclass
class TrainResult:
    model: object
    log: list[dict]
    optimizer_state: dict
    meta: dict


def config_dict(config) -> dict:
    out = dataclasses.asdict(config)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    return out


def ppo_train(task: GraphTask, config: PpoConfig, seed: int, callback=None) -> TrainResult:
    """Collect ``n_steps`` transitions, compute GAE, update; repeat until ``total_steps``."""
    env_config = training_env_config(task, config.shaping, config.gamma)
    init_rng = np.random.default_rng([seed, 0])
    shuffle_rng = np.random.default_rng([seed, 2])
    model = ActorCritic.create(task.n_actions, config.hidden_dims, init_rng, config.value_input_mode)
    learner = PpoLearner.create(model, config.lr)
    collector = RolloutCollector(task, env_config, config.n_envs, seed)
    per_env = config.n_steps // config.n_envs
    n_actions = task.n_actions
    buffer = RolloutBuffer(per_env, config.n_envs, policy_input_dim(n_actions),
                           value_input_dim(config.value_input_mode, n_actions))
    n_updates = max(1, config.total_steps // config.n_steps)
    log = []
    try:
        for update in range(1, n_updates + 1):
            buffer.clear()
            last_values = collector.collect(model, buffer, per_env)
            buffer.compute_returns_and_advantages(last_values, config.gamma, config.gae_lambda)
            diagnostics = ppo_update(learner, buffer, config, shuffle_rng)
            record = {"update": update, "steps": collector.total_steps, **collector.stats.drain(), **diagnostics}
            log.append(record)
            if callback is not None:
                callback(record, learner)
    except NumericError as exc:
        exc.partial = actor_critic_result("ppo", model, log, learner, collector, config, seed, n_actions, aborted=True)
        raise
    return actor_critic_result("ppo", model, log, learner, collector, config, seed, n_actions)


def actor_critic_result(algo, model, log, learner, collector, config, seed, n_actions, aborted=False) -> TrainResult:
    meta = {
        "algo": algo,
        "seed": seed,
        "steps": collector.total_steps,
        "shaping": bool(config.shaping.enabled),
        "value_input_mode": config.value_input_mode,
        "policy_input_dim": policy_input_dim(n_actions),
        "value_input_dim": value_input_dim(config.value_input_mode, n_actions),
        "config": config_dict(config),
    }
    if aborted:
        meta["aborted"] = True
    opt = {"policy": learner.policy_opt.to_dict(), "value": learner.value_opt.to_dict()}
    return TrainResult(model, log, opt, meta)
