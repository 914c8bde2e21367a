"""Confounded click/like world with exact interventional ground truth.

Structural equations (V hidden, discrete)::

    v_i   ~ Categorical(prior)
    x_i   = base_i + gamma_I * direction(v_i) + noise
    s_ui  = affinity_scale * <p_u, x_i>
    c     ~ Bernoulli(sigmoid(s_ui + exposure_strength * e_i + click_bias))
    l | c ~ Bernoulli(c * sigmoid(s_ui + gamma_L * contrast(v_i) + like_bias))

V reaches L directly and C only through the item features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import InteractionLog


@dataclass
class WorldSpec:
    num_users: int = 200
    num_items: int = 300
    embed_dim: int = 4
    confounder_cardinality: int = 2
    confounder_prior: tuple[float, ...] = (0.5, 0.5)
    confounder_item_strength: float = 0.5
    confounder_like_strength: float = 2.0
    click_bias: float = 3.0
    like_bias: float = 0.0
    exposure_strength: float = 2.0
    noise_scale: float = 0.1
    impressions_per_user: int = 250
    affinity_scale: float = 8.0

    def validate(self) -> None:
        prior = np.asarray(self.confounder_prior, dtype=float)
        if self.confounder_cardinality < 2:
            raise ValueError("confounder_cardinality must be >= 2")
        if prior.shape != (self.confounder_cardinality,):
            raise ValueError("confounder_prior length must equal confounder_cardinality")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-12:
            raise ValueError("confounder_prior must be a probability vector")
        if self.num_users < 1 or self.num_items < 1 or self.embed_dim < 1:
            raise ValueError("sizes must be positive")
        if self.exposure_strength < 0 or self.noise_scale < 0:
            raise ValueError("exposure_strength and noise_scale must be >= 0")
        if self.impressions_per_user < 1:
            raise ValueError("impressions_per_user must be >= 1")


def confounder_contrast(cardinality: int) -> np.ndarray:
    """Per-category like-logit shift: equally spaced in [-1, 1], mean zero."""
    return np.linspace(-1.0, 1.0, cardinality)


@dataclass
class SyntheticWorld:
    spec: WorldSpec
    user_preference: np.ndarray
    item_confounder: np.ndarray
    item_base: np.ndarray
    item_feature: np.ndarray
    item_exposure: np.ndarray
    confounder_direction: np.ndarray = field(repr=False)

    def affinity(self) -> np.ndarray:
        """``s[u, i]``, the user-item match logit shared by click and like."""
        return self.spec.affinity_scale * (self.user_preference @ self.item_feature.T)

    def click_probability(self) -> np.ndarray:
        s = self.spec
        return expit(self.affinity() + s.exposure_strength * self.item_exposure[None, :] + s.click_bias)


def build_world(spec: WorldSpec, seed: int) -> SyntheticWorld:
    spec.validate()
    # one stream per component: changing the confounder prior re-draws v_i only
    pref_rng, base_rng, conf_rng, dir_rng, noise_rng, expo_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6))
    d = spec.embed_dim
    scale = 1.0 / np.sqrt(d)
    user_preference = pref_rng.standard_normal((spec.num_users, d)) * scale
    item_base = base_rng.standard_normal((spec.num_items, d)) * scale
    item_confounder = conf_rng.choice(spec.confounder_cardinality, size=spec.num_items,
                                      p=np.asarray(spec.confounder_prior, dtype=float))
    directions = dir_rng.standard_normal((spec.confounder_cardinality, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    noise = noise_rng.standard_normal((spec.num_items, d)) * spec.noise_scale * scale
    item_feature = item_base + spec.confounder_item_strength * directions[item_confounder] + noise
    item_exposure = expo_rng.standard_normal(spec.num_items)
    return SyntheticWorld(spec, user_preference, item_confounder, item_base,
                          item_feature, item_exposure, directions)


def simulate_log(world: SyntheticWorld, seed: int) -> InteractionLog:
    """Sample impressions and cascaded click -> like feedback.

    Impressions are generated round-robin over users (the k-th impression of
    every user precedes the (k+1)-th of any user) and the generation order is
    the timestamp, so a chronological cut keeps every user in training.
    """
    spec = world.spec
    n_imp = spec.impressions_per_user
    if n_imp > spec.num_items:
        raise ValueError("impressions_per_user exceeds num_items")
    rng = np.random.default_rng(seed)
    U = spec.num_users
    shown = np.empty((U, n_imp), dtype=np.int64)
    for u in range(U):
        shown[u] = rng.choice(spec.num_items, size=n_imp, replace=False)

    users = np.repeat(np.arange(U)[None, :], n_imp, axis=0).ravel()
    items = shown.T.ravel()
    s = spec.affinity_scale * np.einsum("nd,nd->n", world.user_preference[users], world.item_feature[items])
    p_click = expit(s + spec.exposure_strength * world.item_exposure[items] + spec.click_bias)
    contrast = confounder_contrast(spec.confounder_cardinality)[world.item_confounder[items]]
    p_like = expit(s + spec.confounder_like_strength * contrast + spec.like_bias)
    clicks = (rng.random(len(users)) < p_click).astype(np.int8)
    likes = ((rng.random(len(users)) < p_like) & (clicks == 1)).astype(np.int8)
    return InteractionLog(users, items, np.arange(len(users)), clicks, likes,
                          spec.num_users, spec.num_items)


def _select(table: np.ndarray, u, i):
    rows = slice(None) if u is None else u
    cols = slice(None) if i is None else i
    return table[rows, cols]


def _like_logit_base(world: SyntheticWorld) -> np.ndarray:
    return world.affinity() + world.spec.like_bias


def true_interventional(world: SyntheticWorld, u=None, i=None):
    """P(l=1 | u, do(i)): the confounder is averaged under its prior.

    Omitting ``u`` or ``i`` selects every user or item; with neither the full
    ``[num_users, num_items]`` matrix is returned.
    """
    spec = world.spec
    prior = np.asarray(spec.confounder_prior, dtype=float)
    contrast = confounder_contrast(spec.confounder_cardinality)
    base = _like_logit_base(world)
    like = sum(p * expit(base + spec.confounder_like_strength * c) for p, c in zip(prior, contrast))
    out = world.click_probability() * like
    return _select(out, u, i)


def observational_like_rate(world: SyntheticWorld, u=None, i=None):
    """Like probability under the item's realised confounder value."""
    spec = world.spec
    contrast = confounder_contrast(spec.confounder_cardinality)[world.item_confounder]
    like = expit(_like_logit_base(world) + spec.confounder_like_strength * contrast[None, :])
    out = world.click_probability() * like
    return _select(out, u, i)
