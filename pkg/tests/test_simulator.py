from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit

from hcr.simulator import (WorldSpec, build_world, confounder_contrast, observational_like_rate,
                           simulate_log, true_interventional)


def test_spec_validation():
    with pytest.raises(ValueError):
        build_world(WorldSpec(confounder_prior=(0.6, 0.5)), 0)
    with pytest.raises(ValueError):
        build_world(WorldSpec(confounder_cardinality=3), 0)
    with pytest.raises(ValueError):
        build_world(WorldSpec(exposure_strength=-1.0), 0)


def test_zero_strength_features_ignore_confounder(small_spec):
    spec = replace(small_spec, confounder_item_strength=0.0, confounder_like_strength=0.0)
    a = build_world(spec, 5)
    b = build_world(replace(spec, confounder_prior=(0.2, 0.8)), 5)
    assert not np.array_equal(a.item_confounder, b.item_confounder)
    np.testing.assert_array_equal(a.item_feature, b.item_feature)


def test_build_is_deterministic(small_spec):
    a, b = build_world(small_spec, 9), build_world(small_spec, 9)
    for name in ("user_preference", "item_confounder", "item_feature", "item_exposure"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.item_feature, build_world(small_spec, 10).item_feature)


def test_default_confounder_frequency():
    world = build_world(WorldSpec(), 1)
    assert world.item_confounder.max() < 2
    assert abs(np.mean(world.item_confounder == 1) - 0.5) <= 0.06


def test_feature_scale_matches_contract():
    world = build_world(WorldSpec(num_users=2000, embed_dim=4), 0)
    # user preferences are N(0, 1/d) per coordinate
    assert abs(world.user_preference.var() - 0.25) < 0.02


def test_contrast():
    np.testing.assert_array_equal(confounder_contrast(2), [-1.0, 1.0])
    c = confounder_contrast(4)
    assert abs(c.mean()) < 1e-15 and c.min() == -1.0 and c.max() == 1.0


def test_log_structure(small_world, small_spec):
    log = simulate_log(small_world, 1)
    assert len(log) == small_spec.num_users * small_spec.impressions_per_user
    assert not np.any((log.clicks == 0) & (log.likes == 1))
    np.testing.assert_array_equal(log.timestamps, np.arange(len(log)))
    for u in range(small_spec.num_users):
        items = log.items[log.users == u]
        assert len(np.unique(items)) == len(items) == small_spec.impressions_per_user


def test_log_is_deterministic(small_world):
    assert simulate_log(small_world, 4).same_records(simulate_log(small_world, 4))


def test_too_many_impressions(small_spec):
    world = build_world(replace(small_spec, impressions_per_user=small_spec.num_items + 1), 0)
    with pytest.raises(ValueError):
        simulate_log(world, 0)


def _like_rate_by_confounder(spec, seed=1):
    world = build_world(spec, seed)
    log = simulate_log(world, seed)
    v = world.item_confounder[log.items]
    clicked = log.clicks == 1
    return [log.likes[clicked & (v == k)].mean() for k in (0, 1)]


def test_confounding_shows_in_like_rates():
    low, high = _like_rate_by_confounder(WorldSpec())
    assert high > low
    low0, high0 = _like_rate_by_confounder(replace(WorldSpec(), confounder_like_strength=0.0))
    assert abs(high0 - low0) < 0.05


def test_unconfounded_truth_equals_observational():
    world = build_world(replace(WorldSpec(), confounder_like_strength=0.0), 2)
    p_do, p_obs = true_interventional(world), observational_like_rate(world)
    assert np.max(np.abs(p_do - p_obs)) <= 1e-12
    click = world.click_probability()
    np.testing.assert_allclose(p_do, click * expit(world.affinity() + world.spec.like_bias), rtol=0, atol=1e-15)
    # independent of the prior when the confounder is cut off
    other = replace(world, spec=replace(world.spec, confounder_prior=(0.9, 0.1)))
    np.testing.assert_allclose(true_interventional(other), p_do, rtol=0, atol=1e-15)


def test_prior_label_swap_symmetry():
    world = build_world(WorldSpec(num_users=20, num_items=30), 4)
    swapped = replace(world, item_confounder=1 - world.item_confounder)
    np.testing.assert_allclose(true_interventional(swapped), true_interventional(world), atol=1e-15)


def test_interventional_matches_monte_carlo():
    world = build_world(WorldSpec(), 1)
    spec = world.spec
    rng = np.random.default_rng(0)
    n = 10 ** 6
    v = rng.choice(2, size=n, p=spec.confounder_prior)
    s = world.affinity()[0, 0]
    p_click = world.click_probability()[0, 0]
    c = rng.random(n) < p_click
    l = c & (rng.random(n) < expit(s + spec.confounder_like_strength * confounder_contrast(2)[v] + spec.like_bias))
    se = np.sqrt(l.mean() * (1 - l.mean()) / n)
    assert abs(l.mean() - true_interventional(world, 0, 0)) < 3 * se


def test_observational_exceeds_interventional_for_positive_confounder():
    world = build_world(WorldSpec(), 1)
    pos = np.flatnonzero(world.item_confounder == 1)
    neg = np.flatnonzero(world.item_confounder == 0)
    p_do, p_obs = true_interventional(world), observational_like_rate(world)
    assert np.all(p_obs[:, pos] > p_do[:, pos])
    assert np.all(p_obs[:, neg] < p_do[:, neg])
    gap = float(np.mean(np.abs(p_obs - p_do)))
    assert round(gap, 6) > 0


def test_point_queries_match_matrix(small_world):
    full = true_interventional(small_world)
    assert true_interventional(small_world, 3, 7) == full[3, 7]
    np.testing.assert_array_equal(true_interventional(small_world, 3), full[3])
    np.testing.assert_array_equal(observational_like_rate(small_world, i=5), observational_like_rate(small_world)[:, 5])
    assert np.all((full >= 0) & (full <= 1))


def test_ranking_gap_exists():
    world = build_world(WorldSpec(), 1)
    order_do = np.argsort(-true_interventional(world), axis=1, kind="stable")
    order_obs = np.argsort(-observational_like_rate(world), axis=1, kind="stable")
    assert np.any(order_do != order_obs)
