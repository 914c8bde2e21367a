"""Top-K ranking metrics, group analyses and causal fidelity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import DatasetSplit
from .inference import Variant, rank_users, score_matrix

METRICS = ("recall", "ndcg", "norm_recall")


def recall_at_k(ranked, relevant, k: int) -> float:
    """Fraction of ``relevant`` found in the first ``k`` ranked items."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    top = _items(ranked)[:k]
    return sum(1 for i in top if i in relevant) / len(relevant)


def ndcg_at_k(ranked, relevant, k: int) -> float:
    """Binary-gain NDCG with a 1/log2(p+1) discount (p is 1-indexed)."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    top = _items(ranked)[:k]
    dcg = sum(1.0 / math.log2(p + 2) for p, i in enumerate(top) if i in relevant)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(k, len(relevant))))
    return dcg / idcg


def normalized_recall(ranked, relevant, group, k: int) -> float:
    """Recall restricted to ``group`` divided by the group's share of the top-K list.

    Returns 0 when the top-K list holds no group items.
    """
    group = set(group)
    top = _items(ranked)[:k]
    share = sum(1 for i in top if i in group) / k
    if share == 0:
        return 0.0
    return recall_at_k(ranked, set(relevant) & group, k) / share


def _items(ranked) -> list:
    items = getattr(ranked, "items", ranked)
    return items.tolist() if isinstance(items, np.ndarray) else list(items)


@dataclass
class EvalReport:
    """Flat metric records plus optional causal fidelity per variant."""

    rows: list[tuple[str, str, str, str, int, float]] = field(default_factory=list)
    fidelity: dict[str, float] = field(default_factory=dict)

    def add(self, metric: str, variant: str, split: str, group: str, k: int, value: float):
        self.rows.append((metric, variant, split, group, int(k), float(value)))

    def extend(self, other: "EvalReport"):
        self.rows.extend(other.rows)
        self.fidelity.update(other.fidelity)

    def get(self, metric, variant, split, group, k) -> float:
        for row in self.rows:
            if row[:5] == (metric, variant, split, group, k):
                return row[5]
        raise KeyError((metric, variant, split, group, k))

    def to_text(self) -> str:
        """``split.group.metric@K = value`` lines in one ``# variant=...`` block per variant."""
        lines = []
        variants = list(dict.fromkeys([r[1] for r in self.rows] + list(self.fidelity)))
        for variant in variants:
            lines.append(f"# variant={variant}")
            lines.extend(f"{split}.{group}.{metric}@{k} = {value:.6f}"
                         for metric, v, split, group, k, value in self.rows if v == variant)
            if variant in self.fidelity:
                lines.append(f"fidelity.all.spearman = {self.fidelity[variant]:.6f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["metric,variant,split,group,k,value"]
        lines.extend(f"{m},{v},{s},{g},{k},{x:.6f}" for m, v, s, g, k, x in self.rows)
        lines.extend(f"spearman,{v},fidelity,all,0,{x:.6f}" for v, x in self.fidelity.items())
        return "\n".join(lines) + "\n"


@dataclass
class GroupSpec:
    active_fraction: float = 0.4
    high_ratio_fraction: float = 1.0 / 3.0
    num_chrono_subsets: int = 4

    def validate(self):
        if not 0 < self.active_fraction < 1 or not 0 < self.high_ratio_fraction < 1:
            raise ValueError("group fractions must lie in (0, 1)")
        if self.num_chrono_subsets < 1:
            raise ValueError("num_chrono_subsets must be >= 1")


def _clamp_k(k: int, num_candidates: int) -> int:
    return max(1, min(k, num_candidates))


def _user_metrics(ranked, relevant, k, group=None):
    """(recall, ndcg, normalized recall) for one user, or None if nothing to score."""
    rel = set(relevant) if group is None else set(relevant) & group
    if not rel:
        return None
    if group is None:
        r = recall_at_k(ranked, rel, k)
        return r, ndcg_at_k(ranked, rel, k), r * k / min(k, len(ranked))
    return recall_at_k(ranked, rel, k), ndcg_at_k(ranked, rel, k), normalized_recall(ranked, rel, group, k)


def _aggregate(report, variant, split, group_name, ranked, targets, k, item_group=None):
    values = []
    for u, relevant in targets.items():
        if u not in ranked:
            continue
        m = _user_metrics(ranked[u], relevant, k, item_group)
        if m is not None:
            values.append(m)
    if not values:
        return 0
    means = np.mean(values, axis=0)
    for name, value in zip(METRICS, means):
        report.add(name, variant, split, group_name, k, value)
    return len(values)


def _ranked_lists(model, split, variant, ks):
    """Top lists for users with candidates plus the smallest per-user candidate count.

    Users who saw every item in training have nothing to rank (and no
    held-out likes) and are skipped.
    """
    train_items = split.train_items()
    n_cand = np.array([split.num_items - len(t) for t in train_items])
    users = np.flatnonzero(n_cand > 0)
    if users.size == 0:
        raise ValueError("no user has candidate items")
    ranked = rank_users(model, train_items, variant, _clamp_k(max(ks), int(n_cand.max())), users=users)
    return ranked, int(n_cand[users].min())


def evaluate_split(model, split: DatasetSplit, variant=Variant.HCR, ks=(50, 100)) -> EvalReport:
    """Recall/NDCG@K on validation and test, averaged over users with held-out likes.

    K is clamped to the smallest per-user candidate count.
    """
    variant = Variant(variant)
    ranked, n_cand = _ranked_lists(model, split, variant, ks)
    report = EvalReport()
    evaluated = 0
    for k in ks:
        kk = _clamp_k(k, n_cand)
        for split_name, targets in (("validation", split.validation), ("test", split.test)):
            evaluated += _aggregate(report, variant.value, split_name, "all", ranked, targets, kk)
    if evaluated == 0:
        raise ValueError("no evaluable users")
    return report


def validation_ndcg(model, split: DatasetSplit, variant=Variant.HCR, k: int = 50) -> float:
    """Early-stopping criterion: mean validation NDCG@K."""
    ranked, n_cand = _ranked_lists(model, split, variant, (k,))
    kk = _clamp_k(k, n_cand)
    values = [ndcg_at_k(ranked[u], rel, kk) for u, rel in split.validation.items() if rel]
    if not values:
        raise ValueError("no users with validation likes")
    return float(np.mean(values))


def active_users(split: DatasetSplit, fraction: float) -> np.ndarray:
    """Top ``ceil(fraction * N)`` users by train click count, ties by user index."""
    tr = split.train
    counts = np.bincount(tr.users[tr.clicks == 1], minlength=tr.num_users)
    order = np.lexsort((np.arange(tr.num_users), -counts))
    return np.sort(order[:math.ceil(fraction * tr.num_users)])


def like_click_ratio_groups(split: DatasetSplit, high_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Items sorted by smoothed train like/click ratio; (high, low) groups."""
    tr = split.train
    clicks = np.bincount(tr.items[tr.clicks == 1], minlength=tr.num_items)
    likes = np.bincount(tr.items[tr.likes == 1], minlength=tr.num_items)
    ratio = (likes + 1.0) / (clicks + 2.0)
    order = np.lexsort((np.arange(tr.num_items), -ratio))
    n_high = math.ceil(high_fraction * tr.num_items)
    return np.sort(order[:n_high]), np.sort(order[n_high:])


def chronological_subsets(split: DatasetSplit, n_subsets: int) -> list[dict[int, tuple]]:
    """Each user's held-out likes (validation then test, in time order) cut into ``n_subsets``."""
    subsets = [dict() for _ in range(n_subsets)]
    for u in sorted(set(split.validation) | set(split.test)):
        items = list(split.validation.get(u, ())) + list(split.test.get(u, ()))
        for s, part in enumerate(np.array_split(np.array(items, dtype=np.int64), n_subsets)):
            if len(part):
                subsets[s][u] = tuple(part.tolist())
    return subsets


def group_analysis(model, split: DatasetSplit, variant=Variant.HCR, ks=(50, 100),
                   groups: GroupSpec | None = None) -> EvalReport:
    """User-activity, chronological and like/click-ratio breakdowns on held-out likes.

    Empty groups are omitted from the report.
    """
    groups = groups or GroupSpec()
    groups.validate()
    variant = Variant(variant)
    ranked, n_cand = _ranked_lists(model, split, variant, ks)
    active = set(active_users(split, groups.active_fraction).tolist())
    high, low = (set(g.tolist()) for g in like_click_ratio_groups(split, groups.high_ratio_fraction))
    chrono = chronological_subsets(split, groups.num_chrono_subsets)

    report = EvalReport()
    for k in ks:
        kk = _clamp_k(k, n_cand)
        test = split.test
        _aggregate(report, variant.value, "test", "active", ranked,
                   {u: r for u, r in test.items() if u in active}, kk)
        _aggregate(report, variant.value, "test", "inactive", ranked,
                   {u: r for u, r in test.items() if u not in active}, kk)
        for s, targets in enumerate(chrono, start=1):
            _aggregate(report, variant.value, "heldout", f"chrono{s}", ranked, targets, kk)
        _aggregate(report, variant.value, "test", "ratio_high", ranked, test, kk, item_group=high)
        _aggregate(report, variant.value, "test", "ratio_low", ranked, test, kk, item_group=low)
    return report


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    return float(ra @ rb / denom) if denom > 0 else 0.0


def causal_fidelity(scores: np.ndarray, truth: np.ndarray, candidates: list[np.ndarray]) -> float:
    """Mean per-user Spearman correlation between ``scores`` and ``truth`` rows.

    ``candidates[u]`` are the item indices compared for user ``u``.
    """
    values = []
    for u, cand in enumerate(candidates):
        cand = np.asarray(cand)
        if cand.size < 3:
            raise ValueError(f"user {u} has fewer than 3 candidate items")
        values.append(spearman(scores[u, cand], truth[u, cand]))
    return float(np.mean(values))


def candidate_items(split: DatasetSplit) -> list[np.ndarray]:
    """Per-user items outside the training interactions."""
    out = []
    for seen in split.train_items():
        mask = np.ones(split.num_items, dtype=bool)
        mask[seen] = False
        out.append(np.flatnonzero(mask))
    return out


def model_fidelity(model, truth: np.ndarray, split: DatasetSplit, variant=Variant.HCR) -> float:
    return causal_fidelity(score_matrix(model, variant), truth, candidate_items(split))
