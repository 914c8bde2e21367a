"""Command line: simulate | train | evaluate | ablate | oracle-check.

Exit codes: 0 success, 1 usage or configuration error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .core import LogFormatError, chronological_split, read_log, write_log
from .evaluation import EvalReport, GroupSpec, evaluate_split, group_analysis, model_fidelity
from .experiment import ABLATION_ROWS, AblationResult, ablate_seed, fit
from .inference import TableScorer, Variant, VariantError, rank_users
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .oracle import MAX_CONFOUNDER, MAX_DIM, check_identities
from .simulator import build_world, observational_like_rate, simulate_log, true_interventional
from .training import TrainingDiverged

logger = logging.getLogger("hcr")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2
GT_HEADER = "user_id,item_id,p_do,p_obs"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _write(path: Path, text: str) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _manifest(out: Path, **entries) -> Path:
    """JSON manifest; file paths are stored relative to ``out``."""
    body = {"tool_version": __version__, **entries}
    return _write(out / "manifest.json", json.dumps(body, indent=2, sort_keys=True) + "\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _seed(args, cfg: ExperimentConfig) -> int:
    return args.seed if args.seed is not None else cfg.seeds[0]


# simulate

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    out = _out_dir(args.out)
    world = build_world(cfg.world, seed)
    log = simulate_log(world, seed)
    write_log(log, out / "interactions.csv")

    p_do, p_obs = true_interventional(world), observational_like_rate(world)
    uu, ii = np.meshgrid(np.arange(world.spec.num_users), np.arange(world.spec.num_items), indexing="ij")
    rows = (f"{u},{i},{a!r},{b!r}" for u, i, a, b in
            zip(uu.ravel().tolist(), ii.ravel().tolist(), p_do.ravel().tolist(), p_obs.ravel().tolist()))
    _write(out / "ground_truth.csv", GT_HEADER + "\n" + "\n".join(rows) + "\n")

    dump = np.loadtxt(out / "ground_truth.csv", delimiter=",", skiprows=1, ndmin=2)
    gap = np.abs(dump[:, 2] - dump[:, 3])
    n_click = int(log.clicks.sum())
    print(f"seed={seed}")
    print(f"records={len(log)} users={log.num_users} items={log.num_items}")
    print(f"click_rate={n_click / len(log):.6f} like_rate={log.likes.sum() / len(log):.6f} "
          f"like_given_click={log.likes.sum() / max(n_click, 1):.6f}")
    print(f"max_abs_p_do_minus_p_obs={gap.max():.6e} mean_abs_p_do_minus_p_obs={gap.mean():.6f}")
    print(f"wrote {out / 'interactions.csv'} and {out / 'ground_truth.csv'}")
    return EXIT_OK


# train

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    run = cfg.run(args.run)
    seed = _seed(args, cfg)
    log = read_log(args.data)
    split = chronological_split(log, cfg.train_fraction)
    out = _out_dir(args.out)

    result = fit(run, split, seed)
    ckpt = out / "model.hcr1"
    save_checkpoint(result.model, ckpt)
    lines = result.history.lines()
    _write(out / "train_log.txt", "".join(line + "\n" for line in lines))
    figure = None
    if result.history.per_epoch:
        from .plotting import plot_histories

        figure = plot_histories({run.name: result.history}, out / "training_curve.png").name
    _manifest(out, command="train", config_sha256=cfg.digest, seed=seed, run=run.name,
              train_config=asdict(result.config), best_epoch=result.history.best_epoch,
              data=Path(args.data).name, data_sha256=_sha256(args.data), checkpoints=[ckpt.name], reports=["train_log.txt"],
              figures=[figure] if figure else [])
    print(f"run={run.name} seed={seed} epochs={len(result.history.per_epoch)} "
          f"best_epoch={result.history.best_epoch} best_valid_ndcg@{result.config.eval_k}="
          f"{result.history.best_metric if result.history.best_metric is not None else float('nan'):.6f}")
    print(f"wrote {ckpt}")
    return EXIT_OK


# evaluate

def load_ground_truth(path, log) -> np.ndarray:
    """``p_do`` table indexed by the log's dense ids (ground truth uses original ids)."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read ground truth {path}: {exc}") from None
    if data.shape[1] != 4:
        raise UsageError(f"ground truth must have columns {GT_HEADER}")
    users, items = data[:, 0].astype(np.int64), data[:, 1].astype(np.int64)
    ulab = log.user_labels if log.user_labels is not None else np.arange(log.num_users)
    ilab = log.item_labels if log.item_labels is not None else np.arange(log.num_items)
    table = np.full((log.num_users, log.num_items), np.nan)
    u_pos = np.searchsorted(ulab, users).clip(0, len(ulab) - 1)
    i_pos = np.searchsorted(ilab, items).clip(0, len(ilab) - 1)
    keep = (ulab[u_pos] == users) & (ilab[i_pos] == items)
    table[u_pos[keep], i_pos[keep]] = data[keep, 2]
    if np.isnan(table).any():
        raise UsageError("ground truth does not cover every (user, item) pair in the data")
    return table


def _variants(text: str, model) -> list[Variant]:
    if text == "auto":
        return [Variant.CT if model.mode == "ct" else Variant.HCR]
    try:
        return [Variant(v.strip().upper()) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"unknown variant: {exc}") from None


def cmd_evaluate(args) -> int:
    log = read_log(args.data)
    split = chronological_split(log, args.train_fraction)
    model = load_checkpoint(args.checkpoint, split.num_users, split.num_items)
    truth = load_ground_truth(args.ground_truth, log) if args.ground_truth else None
    variants = _variants(args.variant, model)
    out = _out_dir(args.out)

    report = EvalReport()
    for variant in variants:
        scorer = model
        if variant is Variant.ORACLE:
            if truth is None:
                raise UsageError("ORACLE needs --ground-truth")
            scorer = TableScorer(truth)
        report.extend(evaluate_split(scorer, split, variant, tuple(args.k)))
        if args.groups:
            report.extend(group_analysis(scorer, split, variant, tuple(args.k), GroupSpec()))
        if truth is not None:
            report.fidelity[variant.value] = model_fidelity(scorer, truth, split, variant)

    if args.write_rankings:
        ulab = log.user_labels if log.user_labels is not None else np.arange(log.num_users)
        ilab = log.item_labels if log.item_labels is not None else np.arange(log.num_items)
        train_items = split.train_items()
        for variant in variants:
            scorer = TableScorer(truth) if variant is Variant.ORACLE else model
            ranked = rank_users(scorer, train_items, variant, max(args.k))
            lines = ["user_id,rank,item_id,score"]
            for u, rl in ranked.items():
                lines.extend(f"{ulab[u]},{r},{ilab[i]},{x:.9g}"
                             for r, (i, x) in enumerate(zip(rl.items.tolist(), rl.scores.tolist()), start=1))
            _write(out / f"rankings_{variant.value}.csv", "\n".join(lines) + "\n")
    _write(out / "report.txt", report.to_text())
    _write(out / "report.csv", report.to_csv())
    from .plotting import plot_metrics

    plot_metrics(report, out / "report.png")
    print(report.to_text(), end="")
    return EXIT_OK


# ablate

def _group_table(result: AblationResult, k: int) -> dict[str, str]:
    """Figure-ready CSVs: user activity, held-out subsets and like/click-ratio groups."""
    reports = [result.groups[s] for s in sorted(result.groups)]

    def mean(metric, variant, split, group):
        vals = []
        for rep in reports:
            try:
                vals.append(rep.get(metric, variant, split, group, k))
            except KeyError:
                pass
        return float(np.mean(vals)) if vals else float("nan")

    def rel(a, b):
        return (a - b) / b if b else float("nan")

    def drop(a, base):
        return (base - a) / base if base else float("nan")

    users = [f"group,hcr_recall@{k},ct_recall@{k},relative_improvement"]
    for g in ("active", "inactive"):
        h, c = mean("recall", "HCR", "test", g), mean("recall", "CT", "test", g)
        users.append(f"{g},{h:.6f},{c:.6f},{rel(h, c):.6f}")

    n_sub = max((int(r[3][6:]) for rep in reports for r in rep.rows if r[3].startswith("chrono")), default=0)
    chrono = [f"subset,hcr_recall@{k},ct_recall@{k},relative_improvement,hcr_drop,ct_drop"]
    first = {v: mean("recall", v, "heldout", "chrono1") for v in ("HCR", "CT")}
    for s in range(1, n_sub + 1):
        h, c = mean("recall", "HCR", "heldout", f"chrono{s}"), mean("recall", "CT", "heldout", f"chrono{s}")
        chrono.append(f"{s},{h:.6f},{c:.6f},{rel(h, c):.6f},"
                      f"{drop(h, first['HCR']):.6f},{drop(c, first['CT']):.6f}")

    ratio = [f"group,hcr_norm_recall@{k},ct_norm_recall@{k}"]
    for g in ("ratio_high", "ratio_low"):
        ratio.append(f"{g},{mean('norm_recall', 'HCR', 'test', g):.6f},{mean('norm_recall', 'CT', 'test', g):.6f}")

    fid = ["variant,mean_fidelity,std_fidelity"]
    for label, _, _ in ABLATION_ROWS:
        f = result.fidelity(label)
        fid.append(f"{label},{f.mean():.6f},{f.std():.6f}")
    return {"fig_user_groups.csv": users, "fig_chrono_subsets.csv": chrono,
            "fig_like_click_ratio.csv": ratio, "fig_ablation_fidelity.csv": fid}


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    for name in (cfg.hcr_run, cfg.ns_run, cfg.ct_run):
        cfg.run(name)
    out = _out_dir(args.out or cfg.out)
    with_groups = cfg.with_groups or args.emit_gnuplot_data
    result = AblationResult(ks=tuple(cfg.ks))
    manifest = dict(command="ablate", config_sha256=cfg.digest, seeds=list(cfg.seeds),
                    completed_seeds=[], status="running", checkpoints=[], reports=[], figures=[])
    _manifest(out, **manifest)
    for seed in cfg.seeds:
        try:
            rows, histories, groups = ablate_seed(cfg, seed, with_groups)
        except Exception:
            manifest["status"] = f"failed at seed {seed}"
            _manifest(out, **manifest)
            raise
        result.table[seed], result.histories[seed] = rows, histories
        if groups is not None:
            result.groups[seed] = groups
        manifest["completed_seeds"].append(seed)
        _manifest(out, **manifest)
        print(f"seed {seed}: " + " ".join(f"{lab}={rows[lab]['fidelity']:.3f}" for lab, _, _ in ABLATION_ROWS),
              flush=True)

    reports = [_write(out / "ablation.txt", result.to_text()).name,
               _write(out / "ablation.csv", result.to_csv()).name]
    if result.groups:
        merged = EvalReport()
        for seed in sorted(result.groups):
            for row in result.groups[seed].rows:
                merged.add(row[0], row[1], f"seed{seed}.{row[2]}", row[3], row[4], row[5])
        reports.append(_write(out / "groups.csv", merged.to_csv()).name)

    from .plotting import plot_ablation, plot_groups, plot_histories

    figures = [plot_ablation(result, out / "ablation.png").name,
               plot_histories(result.histories[cfg.seeds[0]], out / "training_curves.png").name]
    if result.groups:
        figures.append(plot_groups([result.groups[s] for s in sorted(result.groups)], max(cfg.ks),
                                   out / "groups.png").name)
    if args.emit_gnuplot_data:
        gdir = _out_dir(out / "gnuplot")
        for name, lines in _group_table(result, max(cfg.ks)).items():
            reports.append(str(_write(gdir / name, "\n".join(lines) + "\n").relative_to(out)))

    manifest.update(status="ok", reports=reports, figures=figures)
    _manifest(out, **manifest)
    print(result.to_text(), end="")
    return EXIT_OK


# oracle-check

def cmd_oracle_check(args) -> int:
    dims = args.dims
    if len(dims) != 4:
        raise UsageError("--dims takes four integers: U,I,V,M")
    n_users, n_items, n_conf, n_med = dims
    if min(dims) < 1 or max(n_users, n_items, n_med) > MAX_DIM or n_conf > MAX_CONFOUNDER:
        raise UsageError(f"--dims out of range: U, I, M in [1, {MAX_DIM}], V in [1, {MAX_CONFOUNDER}]")
    if args.seeds < 0:
        raise UsageError("--seeds must be >= 0")
    if args.seeds == 0:
        print("warning: --seeds 0, nothing to check", file=sys.stderr)
        return EXIT_OK
    weighting = "uniform" if args.inject_fault else "marginal"
    report = check_identities(args.seeds, tuple(dims), seed=args.seed, item_weighting=weighting)
    print(f"models={report.n_models} dims(U,I,V,M)={','.join(map(str, dims))}"
          + (" fault=uniform-item-weighting" if args.inject_fault else ""))
    print(f"frontdoor_max_abs_error={report.frontdoor_error:.3e}")
    print(f"mediator_adjustment_max_abs_error={report.backdoor_error:.3e}")
    print(f"collider_max_abs_error={report.collider_error:.3e}")
    print(f"joint_mass_max_abs_error={report.mass_error:.3e}")
    print(f"worst={report.worst:.3e} tolerance={args.tolerance:.1e}")
    ok = report.worst <= args.tolerance
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hcr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hcr {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a confounded log and its ground truth")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train one configured run on an interaction log")
    t.add_argument("config")
    t.add_argument("--run", required=True, help="name of a [run.<name>] section")
    t.add_argument("--data", required=True, help="interaction CSV")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="ranking metrics (and causal fidelity) for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--variant", default="auto",
                   help="comma list of " + ", ".join(v.value for v in Variant) + " (default: by checkpoint mode)")
    e.add_argument("--k", type=_int_list, default=[50, 100])
    e.add_argument("--groups", action="store_true", help="add user, chronological and item-ratio groups")
    e.add_argument("--ground-truth")
    e.add_argument("--train-fraction", type=float, default=0.7)
    e.add_argument("--write-rankings", action="store_true",
                   help="also write top-K lists as user_id,rank,item_id,score (original ids)")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="HCR variants, HCR-NS and CT over the configured seeds")
    a.add_argument("config")
    a.add_argument("--out")
    a.add_argument("--emit-gnuplot-data", action="store_true", help="also write figure-ready CSVs")
    a.set_defaults(func=cmd_ablate)

    o = sub.add_parser("oracle-check", help="verify the identification identities by enumeration")
    o.add_argument("--seeds", type=int, default=100, help="number of random models")
    o.add_argument("--dims", type=_int_list, default=[4, 5, 3, 4], help="U,I,V,M")
    o.add_argument("--tolerance", type=float, default=1e-10)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--inject-fault", action="store_true", help="drop the P(i') weighting")
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, LogFormatError, CheckpointError, VariantError,
            TrainingDiverged, ValueError, OSError) as exc:
        print(f"hcr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
