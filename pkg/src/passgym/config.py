"""Run configuration (INI) and checkpoint files (JSON).

A run config looks like::

    [run]
    seed = 1

    [env]
    horizon = 16
    gamma = 0.99
    action_subset = ["cse", "dce"]
    shaping.enabled = false
    shaping.scale = auto

    [ppo]
    total_steps = 200000
    hidden_dims = [64, 64]

    [suite]
    count = 100
    test_count = 50
    size_range = [20, 120]
    train_seed_range = [0, 100000]
    test_seed_range = [100000, 200000]

    [output]
    directory = runs
    checkpoint = runs/checkpoint.json

List values are JSON.  Seed ranges are half-open ``[start, stop)``; a suite of
``count`` benchmarks uses seeds ``start .. start+count-1``.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from passgym.agents.a2c import A2cConfig
from passgym.agents.dqn import DqnConfig
from passgym.agents.policies import ActorCritic, QPolicy
from passgym.agents.ppo import PpoConfig, TrainResult
from passgym.env import EnvConfig, ShapingConfig
from passgym.nn import MlpParams
from passgym.passes import Catalog

CHECKPOINT_FORMAT = "passgym-checkpoint"
CHECKPOINT_VERSION = 1
ALGOS = {"ppo": PpoConfig, "dqn": DqnConfig, "a2c": A2cConfig}


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class SuiteConfig:
    count: int = 100
    test_count: int = 50
    size_range: tuple[int, int] = (20, 120)
    train_seed_range: tuple[int, int] = (0, 100_000)
    test_seed_range: tuple[int, int] = (100_000, 200_000)

    def validate(self) -> None:
        for name in ("size_range", "train_seed_range", "test_seed_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"[suite] {name} must be increasing, got {[lo, hi]}")
        if self.count < 1 or self.test_count < 1:
            raise ConfigError("[suite] count and test_count must be positive")
        (a0, a1), (b0, b1) = self.train_seed_range, self.test_seed_range
        if a0 < b1 and b0 < a1:
            raise ConfigError(f"[suite] train_seed_range {[a0, a1]} overlaps test_seed_range {[b0, b1]}")
        if a1 - a0 < self.count or b1 - b0 < self.test_count:
            raise ConfigError("[suite] a seed range is shorter than its suite")

    def train_seeds(self, offset: int = 0) -> range:
        start = self.train_seed_range[0] + offset
        return range(start, start + self.count)

    def test_seeds(self, offset: int = 0) -> range:
        start = self.test_seed_range[0] + offset
        return range(start, start + self.test_count)


@dataclass
class OutputConfig:
    directory: str = "runs"
    checkpoint: Optional[str] = None

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.directory) / "checkpoint.json"


@dataclass
class RunConfig:
    seed: Optional[int] = None
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    a2c: A2cConfig = field(default_factory=A2cConfig)
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def resolve_seed(self, flag: Optional[int]) -> int:
        """Flag, then ``PASSGYM_SEED``, then ``[run] seed``, then 0."""
        if flag is not None:
            return flag
        env = os.environ.get("PASSGYM_SEED")
        if env:
            try:
                return int(env)
            except ValueError:
                raise ConfigError(f"PASSGYM_SEED must be an integer, got {env!r}") from None
        return self.seed if self.seed is not None else 0


def _value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _fill(cls, section: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def _split_shaping(section: dict, where: str) -> tuple[dict, Optional[ShapingConfig]]:
    plain = {k: v for k, v in section.items() if not k.startswith("shaping.")}
    shaping = {k[len("shaping."):]: v for k, v in section.items() if k.startswith("shaping.")}
    if shaping.get("scale") == "auto":
        shaping["scale"] = None
    return plain, (_fill(ShapingConfig, shaping, f"{where} shaping") if shaping else None)


def resolve_action_subset(subset, catalog: Catalog) -> Optional[list[int]]:
    """Accept pass ids or names."""
    if subset is None:
        return None
    if not isinstance(subset, list) or not subset:
        raise ConfigError("action_subset must be a non-empty list")
    try:
        return [catalog.id_of(s) if isinstance(s, str) else int(catalog[s].id) for s in subset]
    except KeyError as exc:
        raise ConfigError(f"action_subset: {exc}") from None


def load_config(path, catalog: Catalog) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {"run", "env", "ppo", "dqn", "a2c", "suite", "output"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    sections = {name: {k: _value(v) for k, v in parser.items(name)} for name in parser.sections()}
    return config_from_sections(sections, catalog)


def config_from_sections(sections: dict, catalog: Catalog) -> RunConfig:
    run = sections.get("run", {})
    if set(run) - {"seed"}:
        raise ConfigError("[run] accepts only 'seed'")
    env_raw, shaping = _split_shaping(sections.get("env", {}), "env")
    if "action_subset" in env_raw:
        env_raw["action_subset"] = resolve_action_subset(env_raw["action_subset"], catalog)
    if shaping is not None:
        env_raw["shaping"] = shaping
    env = _fill(EnvConfig, env_raw, "env")
    algos = {}
    for name, cls in ALGOS.items():
        raw = dict(sections.get(name, {}))
        if name != "dqn":
            raw, algo_shaping = _split_shaping(raw, name)
            # agents train against the environment's shaping unless overridden
            raw["shaping"] = algo_shaping or env.shaping
        raw.setdefault("gamma", env.gamma)
        algos[name] = _fill(cls, raw, name)
    suite_raw = sections.get("suite", {})
    for key in ("size_range", "train_seed_range", "test_seed_range"):
        if key in suite_raw:
            suite_raw[key] = tuple(suite_raw[key])
    suite = _fill(SuiteConfig, suite_raw, "suite")
    suite.validate()
    output = _fill(OutputConfig, sections.get("output", {}), "output")
    return RunConfig(run.get("seed"), env, algos["ppo"], algos["dqn"], algos["a2c"], suite, output)


def default_config(catalog: Catalog) -> RunConfig:
    return config_from_sections({}, catalog)


# -- checkpoints ----------------------------------------------------------------------


def env_to_dict(env: EnvConfig) -> dict:
    return dataclasses.asdict(env)


def env_from_dict(data: dict) -> EnvConfig:
    data = dict(data)
    data["shaping"] = ShapingConfig(**data["shaping"])
    return EnvConfig(**data)


def checkpoint_dict(result: TrainResult, env: EnvConfig, catalog: Catalog) -> dict:
    model = result.model
    if isinstance(model, ActorCritic):
        networks = {"policy": model.policy.to_dict(), "value": model.value.to_dict()}
    elif isinstance(model, QPolicy):
        networks = {"q": model.q.to_dict()}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "algo": result.meta["algo"],
        "catalog_fingerprint": catalog.fingerprint,
        "env": env_to_dict(env),
        "networks": networks,
        "optimizer_state": result.optimizer_state,
        "training_meta": result.meta,
    }


def write_json(data, path) -> None:
    """Write atomically so an interrupted run never leaves a truncated file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def save_checkpoint(result: TrainResult, env: EnvConfig, catalog: Catalog, path) -> None:
    write_json(checkpoint_dict(result, env, catalog), path)


@dataclass
class Checkpoint:
    algo: str
    policy: object
    env: EnvConfig
    meta: dict


def load_checkpoint(path, catalog: Catalog) -> Checkpoint:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not JSON ({exc})") from None
    if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format/version")
    if data.get("catalog_fingerprint") != catalog.fingerprint:
        raise CheckpointError(
            f"{path}: catalog fingerprint {data.get('catalog_fingerprint')} does not match {catalog.fingerprint}")
    env = env_from_dict(data["env"])
    nets = data["networks"]
    if data["algo"] == "dqn":
        policy = QPolicy(MlpParams.from_dict(nets["q"]))
    else:
        policy = ActorCritic(MlpParams.from_dict(nets["policy"]), MlpParams.from_dict(nets["value"]),
                             data["training_meta"].get("value_input_mode", "obs_only"))
    return Checkpoint(data["algo"], policy, env, data["training_meta"])
