"""Model/batch factories and reference implementations shared by the test modules."""

import math

import numpy as np

from hcr.model import HcrModel, batch_loss, loss_gradients


def random_model(seed=0, share=True, exposure=True, mode="hcr", users=5, items=7, dim=4, scale=1.0):
    model = HcrModel.initialize(users, items, dim, seed=seed, share_embeddings=share,
                                exposure_factor=exposure, mode=mode)
    for v in model.params.values():
        v *= scale / (0.1 / np.sqrt(dim))
    return model


def random_batches(rng, model, n=8):
    u = rng.integers(0, model.num_users, n)
    i = rng.integers(0, model.num_items, n)
    c = rng.integers(0, 2, n).astype(float)
    lu = rng.integers(0, model.num_users, n)
    li = rng.integers(0, model.num_items, n)
    l = rng.integers(0, 2, n).astype(float)
    return (u, i, c), (lu, li, l)


def finite_difference_error(model, click_batch, like_batch, beta, step=1e-5):
    """Worst relative error between analytic and central-difference partials."""
    _, grads = loss_gradients(model, click_batch, like_batch, beta)
    worst = 0.0
    for name, value in model.params.items():
        flat = value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = batch_loss(model, click_batch, like_batch, beta)
            flat[k] = orig - step
            down = batch_loss(model, click_batch, like_batch, beta)
            flat[k] = orig
            fd = (up - down) / (2 * step)
            an = grads[name].reshape(-1)[k]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, err)
    return worst


def brute_recall(ranking, relevant, k):
    hits = 0
    for item in ranking[:k]:
        if item in relevant:
            hits += 1
    return hits / len(relevant)


def brute_ndcg(ranking, relevant, k):
    dcg = 0.0
    for pos in range(1, min(k, len(ranking)) + 1):
        if ranking[pos - 1] in relevant:
            dcg += 1.0 / math.log2(pos + 1)
    idcg = 0.0
    for pos in range(1, min(k, len(relevant)) + 1):
        idcg += 1.0 / math.log2(pos + 1)
    return dcg / idcg
