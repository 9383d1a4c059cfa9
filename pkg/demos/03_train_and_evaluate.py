"""Train a small PPO agent on generated graphs and score it against the default pipeline."""
import tempfile
from pathlib import Path

from passgym.agents import GreedyPolicy, GraphTask, PpoConfig, ppo_train
from passgym.bench import generate_suite, run_evaluation, write_report
from passgym.env import EnvConfig

train = generate_suite(40, (20, 80), 0)
test = generate_suite(20, (20, 80), 10_000)
env_cfg = EnvConfig(horizon=16)
task = GraphTask([b.graph for b in train], env_cfg)

## 100k steps with a small network, well under a minute on one core
res = ppo_train(task, PpoConfig(total_steps=102_400, hidden_dims=(64, 64)), seed=1)
for row in res.log[::10]:
    print(f"steps {row['steps']:6d}  return {row['mean_episode_return']:+.3f}  "
          f"final ops {row['mean_final_opcount']:.1f}  entropy {row['entropy']:.3f}")

## Geometric mean of (I - R) / (I - D): above 1 means more ops removed than the default pipeline
ppo = run_evaluation(res.model, test, env_cfg)
greedy = run_evaluation(GreedyPolicy(), test, env_cfg)
print("ppo   ", ppo.geometric_mean, "excluded", len(ppo.excluded))
print("greedy", greedy.geometric_mean, "excluded", len(greedy.excluded))
worst = min(ppo.rows, key=lambda r: r.improvement_percent if r.improvement_percent is not None else 1e9)
print("worst row:", worst.name, worst.I, worst.R, worst.D)
print("its sequence:", worst.sequence)

out = Path(tempfile.mkdtemp()) / "ppo_report"
csv_path, json_path = write_report(ppo, out)
print(csv_path.read_text().splitlines()[-1])
