"""Experiment configuration: ``key = value`` lines under ``[section]`` headers.

Sections::

    [experiment]   seeds, train_fraction, out, hcr_run, ns_run, ct_run
    [world]        WorldSpec fields
    [eval]         ks, groups, active_fraction, high_ratio_fraction, num_chrono_subsets
    [run.<name>]   TrainConfig fields; a comma list turns a key into a grid

A grid run trains every combination and keeps the one with the best
validation NDCG. ``HCR_SEED`` (comma list) overrides ``seeds``.
"""

from __future__ import annotations

import configparser
import hashlib
import itertools
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .evaluation import GroupSpec
from .simulator import WorldSpec
from .training import TrainConfig

SEED_ENV = "HCR_SEED"
RUN_PREFIX = "run."


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(text: str, cast) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("empty list")
    return [cast(t) for t in items]


def _caster(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _fill(cls, section, where: str, allow_grid: bool = False):
    """Build ``cls`` from a section, or a dict of grid lists when ``allow_grid``."""
    defaults = cls()
    known = {f.name for f in fields(cls)}
    values, grid = {}, {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{where}] unknown key {key!r}")
        default = getattr(defaults, key)
        try:
            if isinstance(default, tuple):
                values[key] = tuple(_parse_list(raw, float))
                continue
            parsed = _parse_list(raw, _caster(default))
        except ValueError as exc:
            raise ConfigError(f"[{where}] {key}: {exc}") from None
        if len(parsed) > 1:
            if not allow_grid:
                raise ConfigError(f"[{where}] {key} takes a single value")
            grid[key] = parsed
        else:
            values[key] = parsed[0]
    return replace(defaults, **values), grid


@dataclass
class RunSpec:
    """A named training configuration, possibly with grid-searched keys."""

    name: str
    base: TrainConfig
    grid: dict[str, list] = field(default_factory=dict)

    def candidates(self, seed: int) -> list[TrainConfig]:
        keys = sorted(self.grid)
        combos = itertools.product(*(self.grid[k] for k in keys)) if keys else [()]
        return [replace(self.base, seed=seed, **dict(zip(keys, combo))) for combo in combos]


@dataclass
class ExperimentConfig:
    world: WorldSpec
    runs: dict[str, RunSpec]
    groups: GroupSpec
    ks: tuple[int, ...] = (50, 100)
    with_groups: bool = True
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    train_fraction: float = 0.7
    out: str = "runs"
    hcr_run: str = "hcr"
    ns_run: str = "hcr_ns"
    ct_run: str = "ct"
    digest: str = ""

    def run(self, name: str) -> RunSpec:
        if name not in self.runs:
            raise ConfigError(f"no [run.{name}] section (have: {', '.join(sorted(self.runs)) or 'none'})")
        return self.runs[name]


def parse_config(text: str, env: dict | None = None) -> ExperimentConfig:
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    known = {"experiment", "world", "eval"}
    for name in parser.sections():
        if name not in known and not name.startswith(RUN_PREFIX):
            raise ConfigError(f"unknown section [{name}]")

    world = WorldSpec()
    if parser.has_section("world"):
        world, _ = _fill(WorldSpec, parser["world"], "world")
    try:
        world.validate()
    except ValueError as exc:
        raise ConfigError(f"[world] {exc}") from None

    runs = {}
    for name in parser.sections():
        if name.startswith(RUN_PREFIX):
            base, grid = _fill(TrainConfig, parser[name], name, allow_grid=True)
            spec = RunSpec(name[len(RUN_PREFIX):], base, grid)
            for cfg in spec.candidates(base.seed):
                try:
                    cfg.validate()
                except ValueError as exc:
                    raise ConfigError(f"[{name}] {exc}") from None
            runs[spec.name] = spec

    cfg = ExperimentConfig(world=world, runs=runs, groups=GroupSpec())
    if parser.has_section("eval"):
        sec = dict(parser["eval"])
        try:
            if "ks" in sec:
                cfg.ks = tuple(_parse_list(sec.pop("ks"), int))
            if "groups" in sec:
                cfg.with_groups = _parse_bool(sec.pop("groups"))
        except ValueError as exc:
            raise ConfigError(f"[eval] {exc}") from None
        cfg.groups, _ = _fill(GroupSpec, sec, "eval")
        try:
            cfg.groups.validate()
        except ValueError as exc:
            raise ConfigError(f"[eval] {exc}") from None
        if any(k < 1 for k in cfg.ks):
            raise ConfigError("[eval] ks must be >= 1")

    if parser.has_section("experiment"):
        sec = parser["experiment"]
        allowed = {"seeds", "train_fraction", "out", "hcr_run", "ns_run", "ct_run"}
        extra = set(sec) - allowed
        if extra:
            raise ConfigError(f"[experiment] unknown key(s): {', '.join(sorted(extra))}")
        try:
            if "seeds" in sec:
                cfg.seeds = tuple(_parse_list(sec["seeds"], int))
            if "train_fraction" in sec:
                cfg.train_fraction = float(sec["train_fraction"])
        except ValueError as exc:
            raise ConfigError(f"[experiment] {exc}") from None
        for key in ("out", "hcr_run", "ns_run", "ct_run"):
            if key in sec:
                setattr(cfg, key, sec[key].strip())

    if env.get(SEED_ENV):
        try:
            cfg.seeds = tuple(_parse_list(env[SEED_ENV], int))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be a comma list of integers") from None
    if not cfg.seeds:
        raise ConfigError("seed list is empty")
    if not 0 < cfg.train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    cfg.digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return cfg


def load_config(path, env: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, env)
