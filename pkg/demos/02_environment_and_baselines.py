"""Step the environment by hand, then compare greedy and exhaustive search."""
import numpy as np

from passgym.agents import brute_force_optimal, greedy_baseline
from passgym.bench import generate_benchmark
from passgym.env import EnvConfig, PassOrderingEnv, ShapingConfig
from passgym.ir import op_count
from passgym.passes import DEFAULT_CATALOG, run_default_pipeline

bench = generate_benchmark(42, (20, 60))
g = bench.graph
print(bench.name, "ops:", op_count(g), "default pipeline:", op_count(run_default_pipeline(g)))

## Reward is minus the normalised op count after every step
env = PassOrderingEnv(EnvConfig(horizon=6))
obs = env.reset(g)
print("initial observation:", obs.astype(int))
for name in ["dce", "identity-elim", "constant-folding", "dce", "cse", "dce"]:
    step = env.step(DEFAULT_CATALOG.id_of(name))
    print(f"{name:18s} reward {step.reward:+.4f}  op_count {step.info['op_count']:3d}  done {step.done}")
print(env.render().splitlines()[0])

## Shaping adds gamma*phi(s') - phi(s); the discounted sum telescopes
env = PassOrderingEnv(EnvConfig(horizon=6, shaping=ShapingConfig(enabled=True)))
env.reset(g)
phi0 = env.potential()
gap = 0.0
rng = np.random.default_rng(1)
for t in range(6):
    s = env.shaped_step(int(rng.integers(12)))
    gap += 0.99 ** t * (s.reward - s.info["base_reward"])
print("shaping sum", gap, "vs", 0.99 ** 6 * env.potential() - phi0)

## Greedy one-step lookahead against exhaustive search on a 6-pass subset
subset = [DEFAULT_CATALOG.id_of(n) for n in
          ("constant-folding", "dce", "cse", "identity-elim", "algebraic-simplify", "exp-log-elim")]
env = PassOrderingEnv(EnvConfig(horizon=3, action_subset=subset))
for seed in range(5):
    h = generate_benchmark(seed, (5, 40)).graph
    greedy = greedy_baseline(env, h)
    best = brute_force_optimal(h, subset, 3)
    print(f"seed {seed}: ops {op_count(h):3d}  greedy {greedy.final_op_count:3d}  optimal {best.final_op_count:3d}  "
          f"{[DEFAULT_CATALOG.names[p] for p in best.sequence]}")
