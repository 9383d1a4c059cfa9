"""Non-learning baselines: greedy one-step lookahead and exhaustive search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from passgym.env import EnvConfig, PassOrderingEnv
from passgym.ir import Graph, op_count
from passgym.passes import DEFAULT_CATALOG, Catalog, apply_pass

from passgym.agents.policies import GreedyPolicy, evaluate_policy

BRUTE_FORCE_BUDGET = 10 ** 6


class BudgetError(ValueError):
    pass


@dataclass
class SearchResult:
    sequence: list[int]  # catalog pass ids
    final_op_count: int


def greedy_baseline(env: PassOrderingEnv, graph: Graph) -> SearchResult:
    result = evaluate_policy(GreedyPolicy(), env, graph, deterministic=True)
    return SearchResult(result.pass_ids, result.final_op_count)


def brute_force_optimal(graph: Graph, action_subset: Sequence[int], horizon: int,
                        catalog: Catalog = DEFAULT_CATALOG) -> SearchResult:
    """Minimal op count after exactly ``horizon`` passes from ``action_subset``.

    Ties go to the lexicographically smallest sequence (compared as positions
    in ``action_subset``).  Sub-results are memoised per (graph, depth), which
    is exact because passes are deterministic.
    """
    subset = list(action_subset)
    if len(subset) ** horizon > BRUTE_FORCE_BUDGET:
        raise BudgetError(f"{len(subset)}^{horizon} sequences exceed the budget of {BRUTE_FORCE_BUDGET}")
    memo: dict[tuple[Graph, int], tuple[int, tuple[int, ...]]] = {}

    def best(g: Graph, depth: int) -> tuple[int, tuple[int, ...]]:
        if depth == 0:
            return op_count(g), ()
        key = (g, depth)
        if key in memo:
            return memo[key]
        found = None
        for position, pid in enumerate(subset):
            nxt, _ = apply_pass(g, pid, catalog)
            count, rest = best(nxt, depth - 1)
            if found is None or count < found[0]:
                found = (count, (position,) + rest)
        memo[key] = found
        return found

    count, positions = best(graph, horizon)
    return SearchResult([subset[p] for p in positions], count)


def greedy_for(graph: Graph, config: EnvConfig | None = None, catalog: Catalog = DEFAULT_CATALOG) -> SearchResult:
    return greedy_baseline(PassOrderingEnv(config or EnvConfig(), catalog), graph)
