"""Synthetic benchmark suites, the geometric-mean metric, and report I/O.

Suites are built from four templates (``mlp_block``, ``attention_like``,
``residual_chain``, ``random_dag``) and then salted with reducible material:

* wrappers the default pipeline clears easily: ``x*1``, ``x+0``, double
  negation, ``log(exp(x))``, transpose and reshape round trips, identity
  broadcasts, foldable constant islands, duplicated subexpressions and dead
  subgraphs;
* cascades, where each rewrite is exposed only by a pass that runs *earlier*
  in the default order (``x + (t - x)`` once ``t`` has collapsed to ``x``).
  Each level costs the round-capped default pipeline a whole round but an
  agent only two steps, which is where pass ordering has headroom.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from passgym.env import EnvConfig, PassOrderingEnv
from passgym.ir import Graph, GraphBuilder, OpKind, check_valid, op_count
from passgym.passes import DEFAULT_CATALOG, Catalog, run_default_pipeline
from passgym.text import parse_text, emit_text

ORIGINS = ("mlp_block", "attention_like", "residual_chain", "random_dag")
MIN_OPS, MAX_OPS = 5, 5000


class MetricUndefinedError(ValueError):
    """Every benchmark row was excluded from the geometric mean."""


@dataclass
class Benchmark:
    name: str
    graph: Graph
    origin: str
    seed: int


# -- generation -------------------------------------------------------------------------


class _Salter:
    """Template construction helpers plus the salting wrappers."""

    def __init__(self, rng: np.random.Generator, builder: GraphBuilder, salt_rate: float, cascade_share: float):
        self.rng = rng
        self.b = builder
        self.salt_rate = salt_rate
        self.cascade_share = cascade_share
        self.easy_salts = 0

    def ops(self) -> int:
        return sum(1 for n in self.b.nodes if n.kind != OpKind.PARAMETER)

    def const(self, value: float, like: int) -> int:
        return self.b.constant(value, self.b.shape(like))

    def maybe_salt(self, v: int) -> int:
        if self.rng.random() >= self.salt_rate:
            return v
        if self.rng.random() < self.cascade_share:
            return self.cascade(v, int(self.rng.integers(2, 5)))
        return self.easy(v)

    def easy(self, v: int) -> int:
        b, rng = self.b, self.rng
        shape = b.shape(v)
        choices = ["mul_one", "add_zero", "sub_zero", "div_one", "neg_neg", "log_exp", "island", "zero_term",
                   "bcast_self", "dup"]
        if len(shape) == 2:
            choices.append("transpose_pair")
        if len(shape) >= 1 and math.prod(shape) > 1:
            choices.append("reshape_pair")
        kind = choices[int(rng.integers(len(choices)))]
        self.easy_salts += 1
        if kind == "mul_one":
            return b.multiply(v, self.const(1.0, v))
        if kind == "add_zero":
            return b.add(self.const(0.0, v), v)
        if kind == "sub_zero":
            return b.subtract(v, self.const(0.0, v))
        if kind == "div_one":
            return b.divide(v, self.const(1.0, v))
        if kind == "neg_neg":
            return b.negate(b.negate(v))
        if kind == "log_exp":
            return b.log(b.exp(v))
        if kind == "island":
            c = float(rng.integers(1, 5))
            return b.add(v, b.subtract(self.const(c, v), b.multiply(self.const(c, v), self.const(1.0, v))))
        if kind == "zero_term":
            return b.add(v, b.multiply(b.tanh(v), self.const(0.0, v)))
        if kind == "bcast_self":
            return b.broadcast(v, shape, tuple(range(len(shape))))
        if kind == "transpose_pair":
            return b.transpose(b.transpose(v, (1, 0)), (1, 0))
        if kind == "reshape_pair":
            return b.reshape(b.reshape(v, (math.prod(shape),)), shape)
        # dup: the same nonlinearity computed twice and combined
        return b.maximum(b.tanh(v), b.tanh(v))

    def cascade(self, v: int, depth: int) -> int:
        """``depth`` levels; level 1 needs cse, each later level another round."""
        b, rng = self.b, self.rng
        t = b.add(v, b.subtract(b.tanh(v), b.tanh(v)))
        for _ in range(depth - 1):
            kind = int(rng.integers(3))
            if kind == 0:
                t = b.add(t, b.subtract(t, v))
            elif kind == 1:
                t = b.multiply(t, b.divide(t, v))
            else:
                t = b.add(t, b.multiply(t, b.subtract(t, v)))
        return t

    def dead_subgraph(self, v: int) -> None:
        b = self.b
        x = b.tanh(v)
        for _ in range(int(self.rng.integers(1, 4))):
            x = b.add(x, b.negate(x)) if self.rng.random() < 0.5 else b.multiply(x, b.tanh(x))


def _dims(rng: np.random.Generator) -> int:
    return int(rng.integers(2, 5))


def _mlp_block(s: _Salter, rng, target: int) -> int:
    b = s.b
    batch, width = _dims(rng), _dims(rng)
    x = b.parameter((batch, width))
    while True:
        out = _dims(rng)
        w = s.maybe_salt(b.parameter((width, out)))
        h = s.maybe_salt(b.dot(x, w))
        bias = b.broadcast(b.parameter((out,)), (batch, out), (1,))
        h = s.maybe_salt(b.add(h, bias))
        x = s.maybe_salt(b.tanh(h))
        width = out
        if s.ops() >= target:
            return x


def _attention_like(s: _Salter, rng, target: int) -> int:
    b = s.b
    seq, d = _dims(rng), _dims(rng)
    x = b.parameter((seq, d))
    while True:
        q = s.maybe_salt(b.dot(x, b.parameter((d, d))))
        k = s.maybe_salt(b.dot(x, b.parameter((d, d))))
        v = b.dot(x, b.parameter((d, d)))
        scores = b.divide(b.dot(q, b.transpose(k, (1, 0))), b.constant(math.sqrt(d), (seq, seq)))
        e = s.maybe_salt(b.exp(b.tanh(scores)))
        denom = b.broadcast(b.reduce_sum(e, (1,)), (seq, seq), (0,))
        probs = s.maybe_salt(b.divide(e, denom))
        x = s.maybe_salt(b.add(x, b.dot(probs, v)))
        if s.ops() >= target:
            return x


def _residual_chain(s: _Salter, rng, target: int) -> int:
    b = s.b
    rows, cols = _dims(rng), _dims(rng)
    x = b.parameter((rows, cols))
    while True:
        h = s.maybe_salt(b.dot(x, b.parameter((cols, cols))))
        h = s.maybe_salt(b.maximum(h, b.constant(0.0, (rows, cols))))
        h = b.tanh(h)
        x = s.maybe_salt(b.add(x, h))
        if s.ops() >= target:
            return x


def _random_dag(s: _Salter, rng, target: int) -> int:
    b = s.b
    shape = (_dims(rng), _dims(rng))
    pool = [b.parameter(shape) for _ in range(int(rng.integers(2, 4)))]
    while True:
        op = int(rng.integers(6))
        a = pool[int(rng.integers(len(pool)))]
        c = pool[int(rng.integers(len(pool)))]
        if op == 0:
            v = b.add(a, c)
        elif op == 1:
            v = b.subtract(a, c)
        elif op == 2:
            v = b.multiply(a, b.tanh(c))
        elif op == 3:
            v = b.maximum(a, c)
        elif op == 4:
            v = b.tanh(a)
        else:
            v = b.negate(a)
        pool.append(s.maybe_salt(v))
        if s.ops() >= target:
            out = pool[-1]
            for other in pool[-3:-1]:
                out = b.add(out, other)
            return out


_TEMPLATES = {
    "mlp_block": _mlp_block,
    "attention_like": _attention_like,
    "residual_chain": _residual_chain,
    "random_dag": _random_dag,
}


def generate_benchmark(seed: int, size_range: tuple[int, int] = (20, 120), origin: Optional[str] = None,
                       salt_rate: float = 0.45, cascade_share: float = 0.3) -> Benchmark:
    """Deterministic in ``seed``; the op count lands inside ``size_range``."""
    lo, hi = size_range
    if not MIN_OPS <= lo <= hi <= MAX_OPS:
        raise ValueError(f"size_range must satisfy {MIN_OPS} <= lo <= hi <= {MAX_OPS}, got {size_range}")
    rng = np.random.default_rng([seed, 7])
    if origin is None:
        origin = ORIGINS[int(rng.integers(len(ORIGINS)))]
    if origin not in _TEMPLATES:
        raise ValueError(f"unknown origin {origin!r}; expected one of {', '.join(ORIGINS)}")
    template = _TEMPLATES[origin]
    target = int(rng.integers(lo, hi + 1))
    for attempt in range(64):
        builder = GraphBuilder(f"{origin}_{seed:05d}")
        salter = _Salter(rng, builder, salt_rate, cascade_share)
        budget = max(1, int(target * 0.8))
        root = template(salter, rng, budget)
        if salter.easy_salts == 0 or rng.random() < 0.5:
            root = salter.easy(root)
        if rng.random() < 0.5:
            salter.dead_subgraph(builder.nodes[int(rng.integers(len(builder.nodes)))].id)
        graph = check_valid(builder.build(root))
        count = op_count(graph)
        if lo <= count <= hi and op_count(run_default_pipeline(graph)) < count:
            return Benchmark(graph.name, graph, origin, seed)
        # overshoot or undershoot: retry with the target nudged toward the range
        target = max(lo, int(target * 0.85)) if count > hi else min(hi, target + max(1, lo - count))
    raise RuntimeError(f"could not generate a benchmark in {size_range} for seed {seed}")


def generate_suite(count: int, size_range: tuple[int, int], seed: int) -> list[Benchmark]:
    """``count`` benchmarks with seeds ``seed, seed+1, ...``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return generate_from_seeds(range(seed, seed + count), size_range)


def generate_from_seeds(seeds: Sequence[int], size_range: tuple[int, int]) -> list[Benchmark]:
    return [generate_benchmark(int(s), size_range) for s in seeds]


# -- metric ---------------------------------------------------------------------------


def row_ratio(initial: int, agent: int, default: int) -> Optional[float]:
    """``(I - R) / (I - D)``, 1.0 when neither reduces, None when excluded."""
    agent_gap, default_gap = initial - agent, initial - default
    if agent > initial or default > initial:
        return None
    if default_gap == 0:
        return 1.0 if agent_gap == 0 else None
    return agent_gap / default_gap


def geometric_mean_metric(rows: Sequence[tuple[int, int, int]]) -> tuple[float, int]:
    """Geometric mean of per-row reduction ratios, computed as exp(mean(log)).

    Returns ``(value, excluded)``.  Rows with ``I = D`` and ``R < I``, and rows
    where ``R`` or ``D`` exceed ``I``, are excluded and counted.
    """
    if not rows:
        raise ValueError("need at least one row")
    logs, excluded, zero = [], 0, False
    for initial, agent, default in rows:
        ratio = row_ratio(initial, agent, default)
        if ratio is None:
            excluded += 1
        elif ratio == 0.0:
            zero = True  # a zero factor makes the product zero
        else:
            logs.append(math.log(ratio))
    if not logs and not zero:
        raise MetricUndefinedError("all rows were excluded from the geometric mean")
    if zero:
        return 0.0, excluded
    return math.exp(math.fsum(logs) / len(logs)), excluded


def improvement_percent(initial: int, agent: int, default: int) -> float:
    return 100.0 * ((initial - agent) - (initial - default)) / max(1, initial - default)


# -- evaluation -----------------------------------------------------------------------


@dataclass
class ReportRow:
    name: str
    I: int
    R: Optional[int]
    D: int
    ratio: Optional[float]
    improvement_percent: Optional[float]
    sequence: list[str] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class EvalReport:
    rows: list[ReportRow]
    geometric_mean: Optional[float]
    excluded: list[str]
    failed: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "geometric_mean": self.geometric_mean,
            "excluded": self.excluded,
            "failed": self.failed,
            "rows": [vars(r) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls([ReportRow(**r) for r in data["rows"]], data["geometric_mean"], data["excluded"],
                   data.get("failed", []))

    @property
    def worst_improvement(self) -> Optional[float]:
        values = [r.improvement_percent for r in self.rows if r.improvement_percent is not None]
        return min(values) if values else None


def _evaluate_row(policy, bench: Benchmark, env_config: EnvConfig, catalog: Catalog) -> ReportRow:
    from passgym.agents.policies import evaluate_policy

    initial = op_count(bench.graph)
    default = op_count(run_default_pipeline(bench.graph, catalog))
    try:
        env = PassOrderingEnv(env_config, catalog)
        result = evaluate_policy(policy, env, bench.graph, deterministic=True)
    except Exception as exc:  # a failing row must not sink the suite
        return ReportRow(bench.name, initial, None, default, None, None, [], f"{type(exc).__name__}: {exc}")
    agent = result.final_op_count
    ratio = row_ratio(initial, agent, default)
    return ReportRow(bench.name, initial, agent, default, ratio, improvement_percent(initial, agent, default),
                     [catalog[p].name for p in result.pass_ids])


def _evaluate_row_star(args):
    return _evaluate_row(*args)


def run_evaluation(policy, suite: Sequence[Benchmark], env_config: EnvConfig | None = None,
                   catalog: Catalog = DEFAULT_CATALOG, workers: int = 1) -> EvalReport:
    """Evaluate ``policy`` deterministically on every benchmark; rows sorted by name."""
    if not suite:
        raise ValueError("suite is empty")
    env_config = env_config or EnvConfig()
    jobs = [(policy, bench, env_config, catalog) for bench in sorted(suite, key=lambda b: b.name)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_evaluate_row_star, jobs))
    else:
        rows = [_evaluate_row(*job) for job in jobs]
    failed = [r.name for r in rows if r.error is not None]
    excluded = [r.name for r in rows if r.error is None and r.ratio is None]
    ok = [(r.I, r.R, r.D) for r in rows if r.error is None]
    try:
        gm = geometric_mean_metric(ok)[0] if ok else None
    except MetricUndefinedError:
        gm = None
    return EvalReport(rows, gm, excluded, failed)


# -- files ----------------------------------------------------------------------------

CSV_FIELDS = ["name", "I", "R", "D", "ratio", "improvement_percent"]


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_report(report: EvalReport, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.json``; returns both paths."""
    base = Path(path)
    base = base.with_suffix("") if base.suffix in (".csv", ".json") else base
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for r in report.rows:
                writer.writerow([r.name, r.I, _fmt(r.R), r.D, _fmt(r.ratio), _fmt(r.improvement_percent)])
            writer.writerow(["geometric_mean", "", "", "", _fmt(report.geometric_mean), ""])
        json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {base}: {exc}") from exc
    return csv_path, json_path


def read_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def read_csv_aggregate(path) -> Optional[float]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    last = rows[-1]
    if last[0] != "geometric_mean":
        raise ValueError(f"{path}: missing aggregate line")
    return float(last[4]) if last[4] else None


MANIFEST = "manifest.tsv"


def write_suite(suite: Sequence[Benchmark], directory) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        lines = []
        for bench in suite:
            filename = f"{bench.name}.mg"
            (directory / filename).write_text(emit_text(bench.graph), encoding="utf-8")
            lines.append(f"{bench.name}\t{bench.origin}\t{bench.seed}\t{filename}\n")
        (directory / MANIFEST).write_text("".join(lines), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write suite to {directory}: {exc}") from exc
    return directory


def read_suite(directory) -> list[Benchmark]:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"{directory}: no {MANIFEST}")
    suite = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, origin, seed, filename = line.split("\t")
        graph = parse_text((directory / filename).read_text(encoding="utf-8"), name=name)
        suite.append(Benchmark(name, graph, origin, int(seed)))
    return suite
