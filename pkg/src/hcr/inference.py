"""Deconfounded scoring variants and all-ranking recommendation lists."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import (HcrModel, click_matrix, forward_click, forward_h1, forward_h2, h1_matrix,
                    h2_matrix)


class Variant(str, Enum):
    HCR = "HCR"
    HCR_FULL = "HCR_FULL"
    HCR_T = "HCR_T"
    HCR_S1 = "HCR_S1"
    HCR_S2 = "HCR_S2"
    CT = "CT"
    ORACLE = "ORACLE"


class VariantError(ValueError):
    """The scoring variant cannot be applied to this model."""


@dataclass
class TableScorer:
    """Fixed ``[num_users, num_items]`` score table standing in for a model.

    Used to plug ground-truth probabilities (or any precomputed scores) into
    the ranking and evaluation code.
    """

    table: np.ndarray

    @property
    def num_users(self) -> int:
        return self.table.shape[0]

    @property
    def num_items(self) -> int:
        return self.table.shape[1]


def _check(model, variant: Variant) -> Variant:
    variant = Variant(variant)
    if isinstance(model, TableScorer):
        return variant
    if variant is Variant.ORACLE:
        raise VariantError("ORACLE scores come from a ground-truth table, not a trained model")
    if model.mode == "ct" and variant is not Variant.CT:
        raise VariantError(f"{variant.value} needs an HCR-trained model; this checkpoint is CT")
    if model.mode == "hcr" and variant is Variant.CT:
        raise VariantError("CT scores need a CT-trained model")
    return variant


def score(model, u, i, variant=Variant.HCR):
    variant = _check(model, variant)
    if isinstance(model, TableScorer):
        return model.table[u, i]
    if variant is Variant.HCR:
        return forward_click(model, u, i) * forward_h1(model, u, i)
    if variant is Variant.HCR_T:
        return forward_click(model, u, i) * forward_h1(model, u, i) * forward_h2(model, u, i)
    if variant is Variant.HCR_S1:
        return forward_click(model, u, i)
    if variant is Variant.HCR_S2:
        return forward_h1(model, u, i)
    if variant is Variant.CT:
        return forward_h2(model, u, i)
    if variant is Variant.HCR_FULL:
        return score_full(model, u, i, np.arange(model.num_items))
    raise VariantError(f"unsupported variant {variant}")


def score_full(model: HcrModel, u, i, item_universe, item_prior=None):
    """Front-door sum over the mediator m = (c, z) and the reference items i'.

    Only ``m = (c, z(u, i))`` carries mass; the ``c = 0`` term vanishes
    because the like model is zero without a click. ``item_prior`` defaults
    to uniform over ``item_universe``.
    """
    universe = np.asarray(item_universe)
    if universe.size == 0:
        raise ValueError("empty item universe")
    prior = np.full(universe.size, 1.0 / universe.size) if item_prior is None else np.asarray(item_prior, float)
    if prior.shape != universe.shape or abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError("item_prior must be a probability vector over the universe")
    u = np.asarray(u)
    p_click = forward_click(model, u, i)
    h1 = forward_h1(model, u, i)  # mediator value z(u, i) fixed across i'
    h2_ref = forward_h2(model, u[..., None], universe)  # [..., |universe|]
    s_u = h2_ref @ prior
    total = 0.0
    for c, f_m in ((0, 1.0 - p_click), (1, p_click)):
        h_ref = c * h1 * s_u
        total = total + f_m * h_ref
    return total


def score_matrix(model, variant=Variant.HCR, users=None, item_prior=None) -> np.ndarray:
    """Scores for every item, one row per user in ``users`` (default all)."""
    variant = _check(model, variant)
    if isinstance(model, TableScorer):
        return model.table if users is None else model.table[users]
    if variant is Variant.HCR:
        return click_matrix(model, users) * h1_matrix(model, users)
    if variant is Variant.HCR_T:
        return click_matrix(model, users) * h1_matrix(model, users) * h2_matrix(model, users)
    if variant is Variant.HCR_S1:
        return click_matrix(model, users)
    if variant is Variant.HCR_S2:
        return h1_matrix(model, users)
    if variant is Variant.CT:
        return h2_matrix(model, users)
    if variant is Variant.HCR_FULL:
        prior = np.full(model.num_items, 1.0 / model.num_items) if item_prior is None else item_prior
        s_u = h2_matrix(model, users) @ prior
        return click_matrix(model, users) * h1_matrix(model, users) * s_u[:, None]
    raise VariantError(f"unsupported variant {variant}")


def smoothed_click_prior(log) -> np.ndarray:
    """Train click frequency per item with +1 smoothing, normalised."""
    counts = np.bincount(log.items[log.clicks == 1], minlength=log.num_items) + 1.0
    return counts / counts.sum()


@dataclass
class RankedList:
    user: int
    items: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.items)


def top_k(scores: np.ndarray, exclude, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` items by descending score, ties by ascending item index."""
    if k < 1:
        raise ValueError("K must be >= 1")
    mask = np.ones(len(scores), dtype=bool)
    mask[np.asarray(exclude, dtype=np.int64)] = False
    candidates = np.flatnonzero(mask)
    if candidates.size == 0:
        raise ValueError("no candidate items to rank")
    cand_scores = scores[candidates]
    order = np.lexsort((candidates, -cand_scores))[:k]
    return candidates[order], cand_scores[order]


def rank_all(model, u: int, train_items, variant=Variant.HCR, k: int = 50) -> RankedList:
    """All-ranking list for one user over items absent from ``train_items``."""
    row = score_matrix(model, variant, users=np.array([u]))[0]
    items, scores = top_k(row, list(train_items), k)
    return RankedList(int(u), items, scores)


def rank_users(model, train_items: list[np.ndarray], variant=Variant.HCR, k: int = 50,
               users=None, chunk: int = 512) -> dict[int, RankedList]:
    """``rank_all`` for many users, scoring in row blocks."""
    users = np.arange(model.num_users) if users is None else np.asarray(users)
    out = {}
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        mat = score_matrix(model, variant, users=block)
        for row, u in zip(mat, block):
            items, scores = top_k(row, train_items[u], k)
            out[int(u)] = RankedList(int(u), items, scores)
    return out
