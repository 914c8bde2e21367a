import numpy as np
import pytest
from scipy.special import expit

from hcr.model import (FLAG_CT, FLAG_EXPOSURE, FLAG_SHARE, CheckpointError, HcrModel, batch_loss, bce,
                       click_matrix, forward_click, forward_h, forward_h1, forward_h2, h1_matrix, h2_matrix,
                       integrate_features, load_checkpoint, loss_gradients, save_checkpoint)

from helpers import finite_difference_error, random_batches, random_model


def test_integrate_features():
    model = random_model()
    model.params["item_base"][2] = 1.0
    np.testing.assert_array_equal(integrate_features(model, 1, 2), model.params["user_base"][1])
    model.params["user_base"][0] = 0.0
    assert not integrate_features(model, 0, 3).any()
    p = model.params
    np.testing.assert_array_equal(integrate_features(model, 3, 4),
                                  [p["user_base"][3][k] * p["item_base"][4][k] for k in range(4)])


def test_zero_parameter_outputs():
    model = HcrModel(3, 4, 2)
    assert forward_click(model, 0, 1) == 0.5
    assert forward_h1(model, 0, 1) == 0.5
    assert forward_h2(model, 0, 1) == 0.5
    assert forward_h(model, 0, 1, 1) == 0.25
    assert forward_click(HcrModel(3, 4, 2, exposure_factor=True), 0, 1) == 0.25


def test_heads_match_recomputation():
    model = random_model(seed=3, share=False)
    p = model.params
    for u, i in [(0, 0), (4, 6), (2, 3)]:
        z = p["user_base"][u] * p["item_base"][i]
        click = expit(float(np.dot(p["click_w"], z)) + p["click_b"][0]) * expit(p["exposure_w"][0] * p["item_exposure"][i])
        zl = p["user_base_like"][u] * p["item_base_like"][i]
        h1 = expit(float(np.dot(p["h1_w"], zl)) + p["h1_b"][0])
        h2 = expit(float(np.dot(p["h2_user"][u], p["h2_item"][i])) + p["h2_b"][0])
        assert forward_click(model, u, i) == pytest.approx(click, abs=1e-12)
        assert forward_h1(model, u, i) == pytest.approx(h1, abs=1e-12)
        assert forward_h2(model, u, i) == pytest.approx(h2, abs=1e-12)
        assert forward_h(model, u, i, 1) == pytest.approx(h1 * h2, abs=1e-12)
        assert forward_h(model, u, i, 0) == 0.0


def test_h1_sign_flip():
    model = random_model(seed=1)
    model.params["h1_b"][:] = 0.0
    a = forward_h1(model, 1, 2)
    model.params["h1_w"] *= -1
    assert forward_h1(model, 1, 2) == pytest.approx(1 - a, abs=1e-15)


def test_h2_ignores_base_tables():
    model = random_model(seed=2)
    before = h2_matrix(model)
    model.params["user_base"] += 5.0
    model.params["item_base"] -= 3.0
    np.testing.assert_array_equal(h2_matrix(model), before)


def test_matrices_match_pointwise():
    model = random_model(seed=4, share=False)
    uu, ii = np.meshgrid(np.arange(5), np.arange(7), indexing="ij")
    np.testing.assert_allclose(click_matrix(model), forward_click(model, uu, ii), atol=1e-14)
    np.testing.assert_allclose(h1_matrix(model), forward_h1(model, uu, ii), atol=1e-14)
    np.testing.assert_allclose(h2_matrix(model, [1, 3]), forward_h2(model, uu, ii)[[1, 3]], atol=1e-14)


def test_bce_clamps():
    loss, d = bce(np.array([0.0, 1.0, 0.3]), np.array([1.0, 0.0, 1.0]))
    assert np.all(np.isfinite(loss)) and loss[0] == pytest.approx(-np.log(1e-7))
    assert d[0] == 0.0 and d[1] == 0.0
    assert d[2] == pytest.approx(-1 / 0.3)


@pytest.mark.parametrize("share,exposure,mode", [
    (True, True, "hcr"), (False, True, "hcr"), (True, False, "hcr"), (True, True, "ct")])
def test_gradients_match_finite_differences(share, exposure, mode):
    rng = np.random.default_rng(21)
    for seed in range(3):
        model = random_model(seed, share, exposure, mode, scale=0.5)
        cb, lb = random_batches(rng, model)
        assert finite_difference_error(model, cb, lb, beta=2.0) < 1e-4


def test_loss_matches_forward_evaluation():
    rng = np.random.default_rng(0)
    model = random_model(seed=5)
    cb, lb = random_batches(rng, model)
    loss, _ = loss_gradients(model, cb, lb, 3.0)
    assert loss == pytest.approx(batch_loss(model, cb, lb, 3.0), abs=1e-12)


def test_beta_zero_leaves_like_heads_untouched_when_unshared():
    rng = np.random.default_rng(1)
    model = random_model(seed=6, share=False)
    cb, lb = random_batches(rng, model)
    _, grads = loss_gradients(model, cb, lb, beta=0.0)
    for name in ("h1_w", "h1_b", "h2_user", "h2_item", "h2_b", "user_base_like", "item_base_like"):
        assert not grads[name].any(), name


def test_task_parameter_sets():
    rng = np.random.default_rng(2)
    shared = random_model(seed=7, share=True)
    cb, lb = random_batches(rng, shared)
    _, g_click = loss_gradients(shared, cb, (lb[0], lb[1], lb[2]), beta=0.0)
    _, g_both = loss_gradients(shared, cb, lb, beta=1.0)
    # the like task adds to the shared base tables
    assert not np.allclose(g_click["user_base"], g_both["user_base"])

    unshared = random_model(seed=7, share=False)
    _, g_ns0 = loss_gradients(unshared, cb, lb, beta=0.0)
    _, g_ns1 = loss_gradients(unshared, cb, lb, beta=1.0)
    np.testing.assert_array_equal(g_ns0["user_base"], g_ns1["user_base"])
    np.testing.assert_array_equal(g_ns0["item_base"], g_ns1["item_base"])


def test_perfect_fit_loss_near_zero():
    model = HcrModel(1, 1, 2)
    model.params["click_b"][:] = 30.0
    model.params["h1_b"][:] = 30.0
    model.params["h2_b"][:] = 30.0
    loss, _ = loss_gradients(model, ([0], [0], [1.0]), ([0], [0], [1.0]), 1.0)
    assert loss < 1e-6


def test_ct_mode_ignores_click_task_and_beta():
    rng = np.random.default_rng(3)
    model = random_model(seed=8, mode="ct")
    cb, lb = random_batches(rng, model)
    a, ga = loss_gradients(model, cb, lb, beta=1.0)
    b, gb = loss_gradients(model, None, lb, beta=5.0)
    assert a == b
    for name in ga:
        np.testing.assert_array_equal(ga[name], gb[name])
    assert not ga["click_w"].any() and not ga["h1_w"].any()


def test_empty_batch_rejected():
    model = random_model()
    empty = (np.array([], int), np.array([], int), np.array([]))
    with pytest.raises(ValueError):
        loss_gradients(model, empty, ([0], [0], [1.0]))


def test_checkpoint_round_trip(tmp_path):
    for share, exposure, mode in [(True, True, "hcr"), (False, False, "hcr"), (True, False, "ct")]:
        model = random_model(seed=9, share=share, exposure=exposure, mode=mode)
        path = tmp_path / f"m{share}{exposure}{mode}.hcr1"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        assert blob[:4] == b"HCR1"
        flags = int.from_bytes(blob[28:36], "little")
        assert flags == (FLAG_SHARE * share) | (FLAG_EXPOSURE * exposure) | (FLAG_CT * (mode == "ct"))
        again = load_checkpoint(path, 5, 7)
        assert (again.share_embeddings, again.exposure_factor, again.mode) == (share, exposure, mode)
        for name in model.params:
            np.testing.assert_array_equal(again.params[name], model.params[name])


def test_checkpoint_validation(tmp_path):
    model = random_model()
    path = tmp_path / "m.hcr1"
    save_checkpoint(model, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, num_users=6)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, num_items=3)
    bad = tmp_path / "bad.hcr1"
    bad.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    bad.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
