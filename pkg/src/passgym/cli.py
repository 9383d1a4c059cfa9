"""``passgym`` command line: gen, train, eval, optimize, show, catalog list.

Exit codes: 0 success, 1 usage or config error, 2 data or parse error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from passgym import bench
from passgym.agents.a2c import a2c_train
from passgym.agents.dqn import dqn_train
from passgym.agents.policies import GraphTask, GreedyPolicy, evaluate_policy
from passgym.agents.ppo import ppo_train
from passgym.config import (
    CheckpointError,
    ConfigError,
    RunConfig,
    default_config,
    load_checkpoint,
    load_config,
    save_checkpoint,
    write_json,
)
from passgym.env import EnvConfig, PassOrderingEnv
from passgym.ir import BindingError, ShapeError, ValidationError, cost_analysis, evaluate, random_bindings
from passgym.nn import NumericError
from passgym.passes import DEFAULT_CATALOG, CatalogError
from passgym.text import ParseError, emit_text, read_graph

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TRAINERS = {"ppo": ppo_train, "dqn": dqn_train, "a2c": a2c_train}
VERIFY_RTOL = 1e-9


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="passgym", description="Pass-ordering gym over a miniature tensor IR.")
    p.add_argument("--config", help="INI run config")
    p.add_argument("--seed", type=int, help="overrides PASSGYM_SEED and [run] seed")
    p.add_argument("--workers", type=int, default=1, help="cap on parallel evaluation workers")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write train and test suites")
    g.add_argument("--count", type=int, help="benchmarks per suite (train and test)")
    g.add_argument("--size-range", type=int, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--out", help="directory; default <output.directory>/suites")
    g.add_argument("--seed", type=int, dest="sub_seed", help="offset added to both seed ranges")

    t = sub.add_parser("train", help="train an agent on the train suite")
    t.add_argument("--algo", choices=sorted(TRAINERS), default="ppo")
    t.add_argument("--steps", type=int, help="total environment steps")
    t.add_argument("--seed", type=int, dest="sub_seed", help="master seed")
    t.add_argument("--shaping", action="store_true", help="potential-based reward shaping")
    t.add_argument("--value-features", action="store_true", help="value net sees cost features")
    t.add_argument("--suite", help="train suite directory")
    t.add_argument("--checkpoint", help="checkpoint path")
    t.add_argument("--log", help="training log path (JSON lines)")

    e = sub.add_parser("eval", help="evaluate against the default pipeline")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--baseline", choices=["greedy"])
    src.add_argument("--compare", nargs=2, metavar=("A_JSON", "B_JSON"))
    e.add_argument("--suite", help="test suite directory")
    e.add_argument("--out", help="report path prefix; .csv and .json are written")

    o = sub.add_parser("optimize", help="optimize one .mg file with a trained policy")
    osrc = o.add_mutually_exclusive_group(required=True)
    osrc.add_argument("--checkpoint")
    osrc.add_argument("--baseline", choices=["greedy"])
    o.add_argument("graph")
    o.add_argument("--out", help="output .mg; default <graph>.opt.mg")
    o.add_argument("--verify", action="store_true", help="check outputs on random bindings")
    o.add_argument("--seed", type=int, dest="sub_seed", help="seed for --verify bindings")

    s = sub.add_parser("show", help="print a graph and its cost analysis")
    s.add_argument("graph")

    c = sub.add_parser("catalog", help="pass catalog")
    c.add_argument("action", choices=["list"])
    return p


# -- helpers --------------------------------------------------------------------------


def _load_run_config(args) -> RunConfig:
    return load_config(args.config, DEFAULT_CATALOG) if args.config else default_config(DEFAULT_CATALOG)


def _seed(args, cfg: RunConfig) -> int:
    flag = getattr(args, "sub_seed", None)
    return cfg.resolve_seed(flag if flag is not None else args.seed)


def _suite_dir(cfg: RunConfig, which: str, given: Optional[str]) -> Path:
    return Path(given) if given else Path(cfg.output.directory) / "suites" / which


def _read_suite(path: Path) -> list[bench.Benchmark]:
    if not path.exists():
        raise FileNotFoundError(f"suite not found: {path} (run `passgym gen` first)")
    return bench.read_suite(path)


def _cost_table(graph) -> str:
    cost = cost_analysis(graph)
    lines = [f"op_count\t{cost.op_count}", f"flop_count\t{cost.flop_count}",
             f"transcendental_count\t{cost.transcendental_count}"]
    lines += [f"kind.{kind}\t{n}" for kind, n in cost.as_dict()["per_kind"].items() if n]
    return "\n".join(lines)


# -- commands -------------------------------------------------------------------------


def cmd_gen(args, cfg: RunConfig) -> int:
    suite_cfg = cfg.suite
    if args.count is not None:
        suite_cfg = dataclasses.replace(suite_cfg, count=args.count, test_count=args.count)
    if args.size_range is not None:
        suite_cfg = dataclasses.replace(suite_cfg, size_range=tuple(args.size_range))
    suite_cfg.validate()  # before any write
    offset = _seed(args, cfg)
    out = Path(args.out) if args.out else Path(cfg.output.directory) / "suites"
    try:
        train = bench.generate_from_seeds(suite_cfg.train_seeds(offset), suite_cfg.size_range)
        test = bench.generate_from_seeds(suite_cfg.test_seeds(offset), suite_cfg.size_range)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    bench.write_suite(train, out / "train")
    bench.write_suite(test, out / "test")
    print(f"train: {len(train)} benchmarks -> {out / 'train'}")
    print(f"test: {len(test)} benchmarks -> {out / 'test'}")
    return EXIT_OK


def _train_setup(args, cfg: RunConfig):
    algo_cfg = getattr(cfg, args.algo)
    env = cfg.env
    if args.shaping:
        if args.algo == "dqn":
            raise UsageError("--shaping applies to ppo and a2c")
        shaping = dataclasses.replace(algo_cfg.shaping, enabled=True)
        algo_cfg = dataclasses.replace(algo_cfg, shaping=shaping)
        env = dataclasses.replace(env, shaping=dataclasses.replace(env.shaping, enabled=True))
    if args.value_features:
        if args.algo == "dqn":
            raise UsageError("--value-features applies to ppo and a2c")
        algo_cfg = dataclasses.replace(algo_cfg, value_input_mode="obs_plus_cost_features")
    if args.steps is not None:
        if args.steps < 1:
            raise UsageError("--steps must be positive")
        algo_cfg = dataclasses.replace(algo_cfg, total_steps=args.steps)
    return algo_cfg, env


def cmd_train(args, cfg: RunConfig) -> int:
    algo_cfg, env = _train_setup(args, cfg)
    seed = _seed(args, cfg)
    suite = _read_suite(_suite_dir(cfg, "train", args.suite))
    task = GraphTask([b.graph for b in suite], env, DEFAULT_CATALOG)
    checkpoint = Path(args.checkpoint) if args.checkpoint else cfg.output.checkpoint_path
    log_path = Path(args.log) if args.log else checkpoint.with_name(checkpoint.stem + ".log.jsonl")
    try:
        result = TRAINERS[args.algo](task, algo_cfg, seed)
    except NumericError as exc:
        if exc.partial is not None and exc.partial.log:
            save_checkpoint(exc.partial, env, DEFAULT_CATALOG, checkpoint)
            _write_log(exc.partial, log_path)
            print(f"numeric failure: {exc}; last good state written to {checkpoint}", file=sys.stderr)
        else:
            print(f"numeric failure: {exc}; no update completed, nothing written", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(result, env, DEFAULT_CATALOG, checkpoint)
    _write_log(result, log_path)
    returns = [r["mean_episode_return"] for r in result.log if r.get("mean_episode_return") is not None]
    final = returns[-1] if returns else float("nan")
    print(f"{args.algo}: {result.meta['steps']} steps, final mean episode return {final:.6f}")
    print(f"checkpoint: {checkpoint}")
    print(f"log: {log_path}")
    return EXIT_OK


def _write_log(result, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"meta": result.meta}, sort_keys=True)]
    lines += [json.dumps(record, sort_keys=True) for record in result.log]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _policy_and_env(args, cfg: RunConfig):
    if getattr(args, "baseline", None) == "greedy":
        return GreedyPolicy(), cfg.env
    ckpt = load_checkpoint(args.checkpoint, DEFAULT_CATALOG)
    return ckpt.policy, ckpt.env


def cmd_eval(args, cfg: RunConfig) -> int:
    if args.compare:
        return _compare(*args.compare)
    policy, env = _policy_and_env(args, cfg)
    suite = _read_suite(_suite_dir(cfg, "test", args.suite))
    _check_disjoint(args, cfg, suite)
    report = bench.run_evaluation(policy, suite, env, DEFAULT_CATALOG, workers=max(1, args.workers))
    out = Path(args.out) if args.out else Path(cfg.output.directory) / "report"
    csv_path, json_path = bench.write_report(report, out)
    gm = "undefined" if report.geometric_mean is None else f"{report.geometric_mean:.6f}"
    print(f"geometric mean: {gm} over {len(report.rows)} benchmarks "
          f"({len(report.excluded)} excluded, {len(report.failed)} failed)")
    worst = report.worst_improvement
    if worst is not None:
        row = min((r for r in report.rows if r.improvement_percent is not None), key=lambda r: r.improvement_percent)
        print(f"worst improvement: {worst:+.2f}% ({row.name})")
    print(f"report: {csv_path} {json_path}")
    return EXIT_OK


def _check_disjoint(args, cfg: RunConfig, suite) -> None:
    """Refuse to evaluate on benchmarks the checkpoint was trained on."""
    if not args.checkpoint:
        return
    train_dir = _suite_dir(cfg, "train", None)
    if not (train_dir / bench.MANIFEST).exists():
        return
    train_seeds = {b.seed for b in bench.read_suite(train_dir)}
    overlap = sorted(train_seeds & {b.seed for b in suite})
    if overlap:
        raise ConfigError(f"test suite shares seeds with the train suite: {overlap[:5]}")


def _compare(a_path: str, b_path: str) -> int:
    a, b = bench.read_report(a_path), bench.read_report(b_path)
    b_rows = {r.name: r for r in b.rows}
    print("name\tratio_a\tratio_b\tdelta")
    for row in a.rows:
        other = b_rows.get(row.name)
        if other is None:
            continue
        if row.ratio is None or other.ratio is None:
            print(f"{row.name}\t{row.ratio}\t{other.ratio}\t")
        else:
            print(f"{row.name}\t{row.ratio:.6f}\t{other.ratio:.6f}\t{other.ratio - row.ratio:+.6f}")
    if a.geometric_mean is not None and b.geometric_mean is not None:
        print(f"geometric_mean\t{a.geometric_mean:.6f}\t{b.geometric_mean:.6f}\t"
              f"{b.geometric_mean - a.geometric_mean:+.6f}")
    return EXIT_OK


def cmd_optimize(args, cfg: RunConfig) -> int:
    policy, env_cfg = _policy_and_env(args, cfg)
    graph = read_graph(args.graph)
    env = PassOrderingEnv(env_cfg, DEFAULT_CATALOG)
    result = evaluate_policy(policy, env, graph, deterministic=True)
    out = Path(args.out) if args.out else Path(args.graph).with_suffix(".opt.mg")
    optimized = result.final_graph
    verified = None
    if args.verify:
        verified = _verify(graph, optimized, np.random.default_rng(_seed(args, cfg)))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(emit_text(optimized), encoding="utf-8")
    sidecar = out.with_suffix(out.suffix + ".json")
    write_json({
        "input": str(args.graph),
        "output": str(out),
        "passes": [DEFAULT_CATALOG[p].name for p in result.pass_ids],
        "before": cost_analysis(graph).as_dict(),
        "after": cost_analysis(optimized).as_dict(),
        "verified": verified,
    }, sidecar)
    print(" ".join(DEFAULT_CATALOG[p].name for p in result.pass_ids))
    print(f"op_count {cost_analysis(graph).op_count} -> {cost_analysis(optimized).op_count}")
    print(f"wrote {out} and {sidecar}")
    if verified is False:
        print("verification FAILED: outputs differ", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _verify(before, after, rng: np.random.Generator, trials: int = 5) -> bool:
    with np.errstate(all="ignore"):
        for _ in range(trials):
            bindings = random_bindings(before, rng)
            want, got = evaluate(before, bindings), evaluate(after, bindings)
            if not np.all(np.isfinite(want)):
                continue
            if not np.allclose(got, want, rtol=VERIFY_RTOL, atol=0.0):
                return False
    return True


def cmd_show(args, cfg: RunConfig) -> int:
    graph = read_graph(args.graph)
    print(emit_text(graph), end="")
    print(_cost_table(graph))
    return EXIT_OK


def cmd_catalog(args, cfg: RunConfig) -> int:
    print(DEFAULT_CATALOG.listing(), end="")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "optimize": cmd_optimize, "show": cmd_show,
            "catalog": cmd_catalog}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_run_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"passgym: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, CheckpointError, CatalogError, ShapeError, BindingError, ValidationError,
            FileNotFoundError, OSError) as exc:
        print(f"passgym: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"passgym: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
