"""Report figures (PNG, Agg backend) written next to the text/CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"HCR": "#1f77b4", "CT": "#d62728"}
RC = {"font.size": 9, "axes.spines.top": False, "axes.spines.right": False, "legend.frameon": False}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # no version/date metadata so re-runs give identical files
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_ablation(result, path) -> Path:
    """Mean causal fidelity per variant, one dot per seed."""
    from .experiment import ABLATION_ROWS

    labels = [label for label, _, _ in ABLATION_ROWS]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        means = [result.fidelity(lab).mean() for lab in labels]
        ax.bar(range(len(labels)), means, color=[COLORS.get(lab, "#7f7f7f") for lab in labels], alpha=0.8)
        for x, lab in enumerate(labels):
            vals = result.fidelity(lab)
            ax.plot(np.full(len(vals), x), vals, "k.", ms=4)
        ax.set_xticks(range(len(labels)), labels)
        ax.set_ylabel("causal fidelity (Spearman)")
        ax.set_ylim(min(0.0, min(means) - 0.05), 1.0)
        return _save(fig, path)


def plot_histories(histories: dict, path) -> Path:
    """Training loss and validation NDCG per epoch for each named run."""
    with plt.rc_context(RC):
        fig, (ax_loss, ax_ndcg) = plt.subplots(1, 2, figsize=(7, 3))
        for name, hist in histories.items():
            if not hist.per_epoch:
                continue
            epochs, loss, metric = zip(*hist.per_epoch)
            line, = ax_loss.plot(epochs, loss, label=name)
            ax_ndcg.plot(epochs, metric, color=line.get_color())
            if hist.best_epoch is not None:
                ax_ndcg.axvline(hist.best_epoch, color=line.get_color(), ls=":", lw=0.8)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_ndcg.set_xlabel("epoch")
        ax_ndcg.set_ylabel(f"validation NDCG@{next(iter(histories.values())).eval_k}")
        ax_loss.legend()
        return _save(fig, path)


def plot_metrics(report, path) -> Path:
    """Grouped bars of every (split, group, metric@K) row, one bar per variant."""
    keys = list(dict.fromkeys((s, g, m, k) for m, _, s, g, k, _ in report.rows))
    variants = list(dict.fromkeys(r[1] for r in report.rows))
    values = {(r[1], r[2], r[3], r[0], r[4]): r[5] for r in report.rows}
    width = 0.8 / max(1, len(variants))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(5, 0.35 * len(keys) + 2), 3.4))
        for j, v in enumerate(variants):
            ys = [values.get((v, s, g, m, k), np.nan) for s, g, m, k in keys]
            ax.bar(np.arange(len(keys)) + j * width, ys, width, label=v, color=COLORS.get(v))
        ax.set_xticks(np.arange(len(keys)) + 0.4 - width / 2,
                      [f"{s}.{g}\n{m}@{k}" for s, g, m, k in keys], rotation=90, fontsize=6)
        ax.legend()
        return _save(fig, path)


def plot_groups(reports: list, k: int, path) -> Path:
    """HCR vs CT on user-activity, chronological and like/click-ratio groups (means over reports)."""
    panels = (
        ("user activity: recall", "recall", [("test", "active"), ("test", "inactive")]),
        ("held-out subsets: recall", "recall", None),
        ("like/click ratio: norm. recall", "norm_recall", [("test", "ratio_high"), ("test", "ratio_low")]),
    )
    chrono = sorted({(r[2], r[3]) for rep in reports for r in rep.rows if r[3].startswith("chrono")},
                    key=lambda sg: int(sg[1][6:]))
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 3, figsize=(9, 3))
        for ax, (title, metric, groups) in zip(axes, panels):
            groups = chrono if groups is None else groups
            for j, variant in enumerate(("HCR", "CT")):
                ys = [_mean_row(reports, metric, variant, s, g, k) for s, g in groups]
                ax.bar(np.arange(len(groups)) + 0.4 * j, ys, 0.4, label=variant, color=COLORS[variant])
            ax.set_xticks(np.arange(len(groups)) + 0.2, [g for _, g in groups])
            ax.set_title(f"{title}@{k}")
        axes[0].legend(loc="lower left")
        return _save(fig, path)


def _mean_row(reports, metric, variant, split, group, k) -> float:
    vals = []
    for rep in reports:
        try:
            vals.append(rep.get(metric, variant, split, group, k))
        except KeyError:
            pass
    return float(np.mean(vals)) if vals else np.nan
