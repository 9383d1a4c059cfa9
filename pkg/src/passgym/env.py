"""Gym-style pass-ordering environment.

State: the 17-slot count vector of the current graph.  Action: index into the
catalog (or into ``action_subset``).  Reward: minus the current op count
divided by the op count at reset.  Episodes end after exactly ``horizon``
steps.  ``shaped_step`` adds the potential-based term ``gamma*phi(s') - phi(s)``
with ``phi(s) = -(w_f*flops(s) + w_t*transcendentals(s)) / scale``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from passgym.ir import OBSERVATION_SIZE, CostAnalysis, Graph, check_valid, cost_analysis, observation
from passgym.passes import DEFAULT_CATALOG, Catalog, apply_pass
from passgym.text import emit_text


class ActionError(ValueError):
    pass


class EpisodeError(RuntimeError):
    """Stepping a finished episode, or before any reset."""


@dataclass
class ShapingConfig:
    enabled: bool = False
    gamma: Optional[float] = None  # None: inherit the environment's gamma
    flop_weight: float = 1.0
    transcendental_weight: float = 2.0
    scale: Optional[float] = None  # None ("auto"): the episode's initial flop count

    def __post_init__(self):
        if not (np.isfinite(self.flop_weight) and np.isfinite(self.transcendental_weight)):
            raise ValueError("shaping weights must be finite")
        if self.scale is not None and not self.scale > 0:
            raise ValueError("shaping scale must be positive")


@dataclass
class EnvConfig:
    horizon: int = 16
    gamma: float = 0.99
    reward_mode: str = "scaled_opcount"
    action_subset: Optional[tuple[int, ...]] = None
    shaping: ShapingConfig = field(default_factory=ShapingConfig)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.reward_mode != "scaled_opcount":
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")
        if self.action_subset is not None:
            self.action_subset = tuple(int(a) for a in self.action_subset)
            if not self.action_subset:
                raise ValueError("action_subset must not be empty")
        if self.shaping.gamma is None:
            self.shaping.gamma = self.gamma
        elif self.shaping.gamma != self.gamma:
            raise ValueError("shaping gamma must equal the environment gamma")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


_validated: "weakref.WeakSet[Graph]" = weakref.WeakSet()


class PassOrderingEnv:
    """One episode at a time over one graph.  Not thread-safe; use one instance per worker."""

    def __init__(self, config: EnvConfig | None = None, catalog: Catalog = DEFAULT_CATALOG):
        self.config = config or EnvConfig()
        self.catalog = catalog
        if self.config.action_subset is not None:
            for pid in self.config.action_subset:
                catalog[pid]
        self.graph: Graph | None = None
        self.original: Graph | None = None
        self.cost: CostAnalysis | None = None
        self.step_index = 0
        self.initial_op_count = 0
        self.initial_flop_count = 0
        self.cumulative_reward = 0.0
        self.history: list[int] = []
        self.action_counts = np.zeros(self.action_space_size)
        self.settled = np.zeros(self.action_space_size)

    # -- spaces ---------------------------------------------------------------

    @property
    def action_space_size(self) -> int:
        subset = self.config.action_subset
        return len(subset) if subset is not None else self.catalog.size

    def observation_space(self) -> tuple[int, np.ndarray, np.ndarray]:
        return OBSERVATION_SIZE, np.zeros(OBSERVATION_SIZE), np.full(OBSERVATION_SIZE, np.inf)

    def pass_id(self, action: int) -> int:
        if not isinstance(action, (int, np.integer)) or not 0 <= action < self.action_space_size:
            raise ActionError(f"action {action!r} outside [0, {self.action_space_size})")
        subset = self.config.action_subset
        return int(subset[action]) if subset is not None else int(action)

    @property
    def done(self) -> bool:
        return self.step_index >= self.config.horizon

    # -- episode --------------------------------------------------------------

    def reset(self, graph: Graph) -> np.ndarray:
        if graph not in _validated:
            check_valid(graph)
            _validated.add(graph)
        self.original = graph
        self.graph = graph
        self.cost = cost_analysis(graph)
        self.step_index = 0
        self.initial_op_count = self.cost.op_count
        self.initial_flop_count = self.cost.flop_count
        self.cumulative_reward = 0.0
        self.history = []
        self.action_counts = np.zeros(self.action_space_size)
        self.settled = np.zeros(self.action_space_size)
        return observation(graph)

    def _advance(self, action: int) -> tuple[bool, CostAnalysis]:
        if self.graph is None:
            raise EpisodeError("step called before reset")
        if self.done:
            raise EpisodeError("episode is complete; call reset")
        pid = self.pass_id(action)
        previous = self.cost
        self.graph, changed = apply_pass(self.graph, pid, self.catalog)
        if changed:
            self.cost = cost_analysis(self.graph)
            self.settled[:] = 0.0
        # every pass runs to a fixed point, so a second application is a no-op
        self.settled[action] = 1.0
        self.action_counts[action] += 1
        self.step_index += 1
        self.history.append(pid)
        return changed, previous

    def _base_reward(self) -> float:
        return -self.cost.op_count / max(1, self.initial_op_count)

    def _info(self, changed: bool) -> dict:
        return {
            "op_count": self.cost.op_count,
            "flop_count": self.cost.flop_count,
            "transcendental_count": self.cost.transcendental_count,
            "pass_changed": changed,
            "step_index": self.step_index,
        }

    def step(self, action: int) -> StepResult:
        changed, _ = self._advance(action)
        reward = self._base_reward()
        self.cumulative_reward += reward
        return StepResult(observation(self.graph), reward, self.done, self._info(changed))

    # -- potential-based shaping ------------------------------------------------

    @property
    def shaping_scale(self) -> float:
        scale = self.config.shaping.scale
        return float(scale) if scale is not None else float(max(1, self.initial_flop_count))

    def potential(self, cost: CostAnalysis | None = None) -> float:
        cost = cost or self.cost
        s = self.config.shaping
        return -(s.flop_weight * cost.flop_count + s.transcendental_weight * cost.transcendental_count) / self.shaping_scale

    def shaped_step(self, action: int) -> StepResult:
        changed, previous = self._advance(action)
        base = self._base_reward()
        phi_before = self.potential(previous)
        phi_after = self.potential()
        reward = base + self.config.gamma * phi_after - phi_before
        self.cumulative_reward += reward
        info = self._info(changed)
        info["phi"] = phi_after
        info["base_reward"] = base
        return StepResult(observation(self.graph), reward, self.done, info)

    def step_for_training(self, action: int) -> StepResult:
        return self.shaped_step(action) if self.config.shaping.enabled else self.step(action)

    # -- rendering --------------------------------------------------------------

    def render(self) -> str:
        if self.graph is None:
            raise EpisodeError("render called before reset")
        header = (f"# step {self.step_index}/{self.config.horizon} op_count {self.cost.op_count} "
                  f"cumulative_reward {self.cumulative_reward:.6f}\n")
        return header + emit_text(self.graph)


def rollout_sequence(env: PassOrderingEnv, graph: Graph, actions: Sequence[int], shaped: bool = False) -> list[StepResult]:
    """Reset on ``graph`` and play ``actions``; convenience for tests and baselines."""
    env.reset(graph)
    stepper = env.shaped_step if shaped else env.step
    return [stepper(a) for a in actions]
