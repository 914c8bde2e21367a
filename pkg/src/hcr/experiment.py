"""Seeded end-to-end runs: world -> log -> split -> trained models -> fidelity table."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, RunSpec
from .core import DatasetSplit, InteractionLog, chronological_split
from .evaluation import EvalReport, evaluate_split, group_analysis, model_fidelity
from .simulator import SyntheticWorld, WorldSpec, build_world, simulate_log, true_interventional
from .training import TrainConfig, TrainHistory, build_model, train

logger = logging.getLogger(__name__)

# (row label, run key in the config, scoring variant)
ABLATION_ROWS = (
    ("HCR", "hcr", "HCR"),
    ("HCR_T", "hcr", "HCR_T"),
    ("HCR_S1", "hcr", "HCR_S1"),
    ("HCR_S2", "hcr", "HCR_S2"),
    ("HCR_NS", "ns", "HCR"),
    ("CT", "ct", "CT"),
)


@dataclass
class SeedData:
    world: SyntheticWorld
    log: InteractionLog
    split: DatasetSplit
    truth: np.ndarray


def make_data(spec: WorldSpec, seed: int, train_fraction: float = 0.7) -> SeedData:
    world = build_world(spec, seed)
    log = simulate_log(world, seed)
    return SeedData(world, log, chronological_split(log, train_fraction), true_interventional(world))


@dataclass
class FitResult:
    model: object
    history: TrainHistory
    config: TrainConfig


def fit(run: RunSpec, split: DatasetSplit, seed: int, on_epoch=None) -> FitResult:
    """Train every grid candidate; keep the best validation NDCG (first wins ties)."""
    best = None
    candidates = run.candidates(seed)
    for cfg in candidates:
        if len(candidates) > 1:
            logger.info("run %s candidate %s", run.name, cfg)
        model, history = train(build_model(split, cfg), split, cfg, on_epoch)
        metric = history.best_metric if history.best_metric is not None else -np.inf
        if best is None or metric > best[0]:
            best = (metric, FitResult(model, history, cfg))
    return best[1]


@dataclass
class AblationResult:
    ks: tuple[int, ...]
    # seed -> row label -> {"fidelity": x, "recall@K": ..., "ndcg@K": ...}
    table: dict[int, dict[str, dict[str, float]]] = field(default_factory=dict)
    histories: dict[int, dict[str, TrainHistory]] = field(default_factory=dict)
    groups: dict[int, EvalReport] = field(default_factory=dict)

    def columns(self) -> list[str]:
        cols = ["fidelity"]
        for k in self.ks:
            cols += [f"recall@{k}", f"ndcg@{k}"]
        return cols

    def mean(self) -> dict[str, dict[str, float]]:
        seeds = sorted(self.table)
        return {label: {c: float(np.mean([self.table[s][label][c] for s in seeds])) for c in self.columns()}
                for label, _, _ in ABLATION_ROWS}

    def fidelity(self, label: str) -> np.ndarray:
        return np.array([self.table[s][label]["fidelity"] for s in sorted(self.table)])

    def to_csv(self) -> str:
        cols = self.columns()
        lines = ["seed,variant," + ",".join(cols)]
        for seed in sorted(self.table):
            for label, _, _ in ABLATION_ROWS:
                row = self.table[seed][label]
                lines.append(f"{seed},{label}," + ",".join(f"{row[c]:.6f}" for c in cols))
        for label, row in self.mean().items():
            lines.append(f"mean,{label}," + ",".join(f"{row[c]:.6f}" for c in cols))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cols = self.columns()
        head = f"{'seed':>5} {'variant':<8}" + "".join(f"{c:>12}" for c in cols)
        lines = [head]
        rows = [(str(s), self.table[s]) for s in sorted(self.table)] + [("mean", self.mean())]
        for seed, table in rows:
            for label, _, _ in ABLATION_ROWS:
                lines.append(f"{seed:>5} {label:<8}" + "".join(f"{table[label][c]:>12.6f}" for c in cols))
        return "\n".join(lines) + "\n"


def ablate_seed(cfg: ExperimentConfig, seed: int, with_groups: bool = False, on_epoch=None):
    """Train HCR, HCR-NS and CT on one seeded world and score the ablation rows."""
    data = make_data(cfg.world, seed, cfg.train_fraction)
    runs = {"hcr": cfg.run(cfg.hcr_run), "ns": cfg.run(cfg.ns_run), "ct": cfg.run(cfg.ct_run)}
    fits = {}
    for key, run in runs.items():
        fits[key] = fit(run, data.split, seed, on_epoch)
        logger.info("seed %d run %s best epoch %s", seed, run.name, fits[key].history.best_epoch)

    rows = {}
    for label, key, variant in ABLATION_ROWS:
        model = fits[key].model
        report = evaluate_split(model, data.split, variant, cfg.ks)
        row = {"fidelity": model_fidelity(model, data.truth, data.split, variant)}
        for k in cfg.ks:
            kk = _reported_k(report, variant, k)
            row[f"recall@{k}"] = report.get("recall", variant, "test", "all", kk)
            row[f"ndcg@{k}"] = report.get("ndcg", variant, "test", "all", kk)
        rows[label] = row

    groups = None
    if with_groups:
        groups = group_analysis(fits["hcr"].model, data.split, "HCR", cfg.ks, cfg.groups)
        groups.extend(group_analysis(fits["ct"].model, data.split, "CT", cfg.ks, cfg.groups))
    histories = {runs[k].name: f.history for k, f in fits.items()}
    return rows, histories, groups


def _reported_k(report: EvalReport, variant: str, k: int) -> int:
    # K may have been clamped to the candidate count
    ks = sorted({r[4] for r in report.rows if r[1] == variant})
    return k if k in ks else min(ks, key=lambda x: abs(x - k))


def run_ablation(cfg: ExperimentConfig, with_groups: bool = False, progress=None) -> AblationResult:
    result = AblationResult(ks=tuple(cfg.ks))
    for seed in cfg.seeds:
        rows, histories, groups = ablate_seed(cfg, seed, with_groups)
        result.table[seed] = rows
        result.histories[seed] = histories
        if groups is not None:
            result.groups[seed] = groups
        if progress is not None:
            progress(seed, rows)
    return result
