import math

import numpy as np
import pytest

from hcr.core import DatasetSplit, chronological_split, parse_interaction_log
from hcr.evaluation import (EvalReport, GroupSpec, active_users, candidate_items, causal_fidelity,
                            chronological_subsets, evaluate_split, group_analysis, like_click_ratio_groups,
                            model_fidelity, ndcg_at_k, normalized_recall, recall_at_k, spearman)
from hcr.inference import RankedList, TableScorer
from hcr.simulator import WorldSpec, build_world, simulate_log, true_interventional

from helpers import brute_ndcg, brute_recall


def test_ndcg_hand_value():
    assert abs(ndcg_at_k(["B", "A", "C"], {"A"}, 3) - 1 / math.log2(3)) <= 1e-12
    assert ndcg_at_k([3, 1, 2], {3}, 3) == 1.0


def test_recall_examples():
    assert recall_at_k([1, 2, 3], {1, 2}, 3) == 1.0
    assert recall_at_k([1, 5, 6], {1, 2}, 3) == 0.5
    with pytest.raises(ValueError):
        recall_at_k([1], set(), 1)
    with pytest.raises(ValueError):
        ndcg_at_k([1], set(), 1)


def test_metrics_match_brute_force(rng):
    for _ in range(100):
        ranking = rng.permutation(50).tolist()
        relevant = set(rng.choice(50, size=rng.integers(1, 10), replace=False).tolist())
        k = int(rng.integers(1, 60))
        assert recall_at_k(ranking, relevant, k) == brute_recall(ranking, relevant, k)
        assert ndcg_at_k(ranking, relevant, k) == brute_ndcg(ranking, relevant, k)


def test_ranked_list_input():
    rl = RankedList(0, np.array([4, 2, 9]), np.array([0.9, 0.5, 0.1]))
    assert recall_at_k(rl, {2}, 2) == 1.0


def test_normalized_recall_hand_case():
    # six items, top-4 = [0, 1, 2, 3]; group G = {0, 4, 5}; relevant = {0, 4}
    ranked = [0, 1, 2, 3, 4, 5]
    # recall within G: 1 of {0, 4} -> 0.5; share of G in top-4: 1/4
    assert normalized_recall(ranked, {0, 4}, {0, 4, 5}, 4) == pytest.approx(2.0)
    assert normalized_recall(ranked, {4}, {4, 5}, 4) == 0.0


def test_metrics_invariant_under_monotone_transform(small_world, small_split):
    truth = true_interventional(small_world)
    a = evaluate_split(TableScorer(truth), small_split, "ORACLE", (5, 10))
    b = evaluate_split(TableScorer(np.log(truth) * 3 + 1), small_split, "ORACLE", (5, 10))
    assert a.rows == b.rows


def test_recall_is_one_when_k_covers_catalog(small_world, small_split):
    report = evaluate_split(TableScorer(true_interventional(small_world)), small_split, "ORACLE", (1000,))
    assert {r[4] for r in report.rows} == {small_split.num_items - max(len(t) for t in small_split.train_items())}
    assert all(r[5] == 1.0 for r in report.rows if r[0] == "recall")


def test_oracle_beats_random_scorer():
    spec = WorldSpec(num_users=60, num_items=80, impressions_per_user=60)
    for seed in range(1, 6):
        world = build_world(spec, seed)
        split = chronological_split(simulate_log(world, seed), 0.7)
        truth = true_interventional(world)
        noise = np.random.default_rng(seed).random(truth.shape)
        good = evaluate_split(TableScorer(truth), split, "ORACLE", (20,)).get("ndcg", "ORACLE", "test", "all", 20)
        bad = evaluate_split(TableScorer(noise), split, "ORACLE", (20,)).get("ndcg", "ORACLE", "test", "all", 20)
        assert good > bad


def _split(rows, frac):
    return chronological_split(parse_interaction_log("\n".join(",".join(map(str, r)) for r in rows)), frac)


def test_active_users_tie_break():
    rows = [(u, 0, u, 1, 0) for u in range(5)] + [(u, 1, 5 + u, 1, 1) for u in range(5)]
    split = _split(rows, 0.5)
    assert active_users(split, 0.4).tolist() == [0, 1]


def test_active_users_by_clicks():
    rows = [(0, 0, 0, 1, 0), (1, 0, 1, 1, 0), (1, 1, 2, 1, 0), (2, 0, 3, 0, 0), (2, 1, 4, 0, 0),
            (2, 2, 5, 0, 0), (0, 3, 6, 1, 1)]
    split = _split(rows, 0.8)
    # train clicks: user 0 -> 1, user 1 -> 2, user 2 -> 0
    assert active_users(split, 0.4).tolist() == [0, 1]
    assert active_users(split, 0.2).tolist() == [1]


def test_chronological_subsets_size_one():
    split = DatasetSplit(parse_interaction_log("0,0,0,1,0"), {0: (5, 6)}, {0: (7, 8)})
    subsets = chronological_subsets(split, 4)
    assert [s[0] for s in subsets] == [(5,), (6,), (7,), (8,)]


def test_chronological_subsets_drop_empty():
    split = DatasetSplit(parse_interaction_log("0,0,0,1,0\n1,0,1,1,0"), {0: (5, 6), 1: (3,)}, {0: (7,)})
    subsets = chronological_subsets(split, 4)
    assert subsets[0] == {0: (5,), 1: (3,)}
    assert 1 not in subsets[1] and 0 not in subsets[3]


def test_ratio_groups_one_to_two(small_split):
    high, low = like_click_ratio_groups(small_split, 1 / 3)
    assert len(high) == math.ceil(small_split.num_items / 3)
    assert len(high) + len(low) == small_split.num_items
    tr = small_split.train
    clicks = np.bincount(tr.items[tr.clicks == 1], minlength=tr.num_items)
    likes = np.bincount(tr.items[tr.likes == 1], minlength=tr.num_items)
    ratio = (likes + 1) / (clicks + 2)
    assert ratio[high].min() >= ratio[low].max()


def test_group_recall_weighted_mean_equals_overall(small_world, small_split):
    scorer = TableScorer(true_interventional(small_world))
    overall = evaluate_split(scorer, small_split, "ORACLE", (10,))
    groups = group_analysis(scorer, small_split, "ORACLE", (10,), GroupSpec())
    active = set(active_users(small_split, 0.4).tolist())
    n_act = sum(1 for u in small_split.test if u in active)
    n_in = len(small_split.test) - n_act
    weighted = (groups.get("recall", "ORACLE", "test", "active", 10) * n_act
                + groups.get("recall", "ORACLE", "test", "inactive", 10) * n_in) / (n_act + n_in)
    assert weighted == pytest.approx(overall.get("recall", "ORACLE", "test", "all", 10), abs=1e-12)
    names = {(r[2], r[3]) for r in groups.rows}
    assert names == {("test", "active"), ("test", "inactive"), ("test", "ratio_high"), ("test", "ratio_low"),
                     ("heldout", "chrono1"), ("heldout", "chrono2"), ("heldout", "chrono3"),
                     ("heldout", "chrono4")}


def test_group_spec_validation():
    with pytest.raises(ValueError):
        GroupSpec(active_fraction=1.0).validate()
    with pytest.raises(ValueError):
        GroupSpec(num_chrono_subsets=0).validate()


def test_causal_fidelity_extremes(small_world, small_split):
    truth = true_interventional(small_world)
    assert model_fidelity(TableScorer(truth), truth, small_split, "ORACLE") == pytest.approx(1.0)
    assert model_fidelity(TableScorer(1 - truth), truth, small_split, "ORACLE") == pytest.approx(-1.0)
    cands = candidate_items(small_split)
    seen = small_split.train_items()
    assert all(not set(c.tolist()) & set(s.tolist()) for c, s in zip(cands, seen))
    with pytest.raises(ValueError):
        causal_fidelity(truth[:1], truth[:1], [np.array([0, 1])])


def test_spearman_matches_scipy(rng):
    from scipy.stats import spearmanr

    a, b = rng.random(30), rng.random(30)
    a[3] = a[4]
    assert spearman(a, b) == pytest.approx(spearmanr(a, b).statistic, abs=1e-12)


def test_report_formats():
    rep = EvalReport()
    rep.add("recall", "HCR", "test", "all", 50, 0.5)
    rep.add("ndcg", "HCR", "test", "all", 50, 0.25)
    rep.fidelity["HCR"] = 0.75
    assert rep.to_text().splitlines() == ["# variant=HCR", "test.all.recall@50 = 0.500000",
                                          "test.all.ndcg@50 = 0.250000", "fidelity.all.spearman = 0.750000"]
    csv = rep.to_csv().splitlines()
    assert csv[0] == "metric,variant,split,group,k,value"
    assert csv[1] == "recall,HCR,test,all,50,0.500000"
    with pytest.raises(KeyError):
        rep.get("recall", "HCR", "validation", "all", 50)


def test_no_evaluable_users():
    split = DatasetSplit(parse_interaction_log("0,0,0,1,0\n0,1,1,1,0"))
    with pytest.raises(ValueError):
        evaluate_split(TableScorer(np.ones((1, 2))), split, "ORACLE", (1,))
