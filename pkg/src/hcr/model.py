"""Logistic dot-product scorer heads and their analytic gradients.

Heads (``z = user_base[u] * item_base[i]``)::

    click(u, i) = sigmoid(<click_w, z> + click_b) [* sigmoid(exposure_w * item_exposure[i])]
    h1(u, i)    = sigmoid(<h1_w, z_like> + h1_b)
    h2(u, i)    = sigmoid(<h2_user[u], h2_item[i]> + h2_b)

``z_like`` is ``z`` when embeddings are shared, otherwise it is built from a
second pair of base tables owned by the like task. ``h2`` never reads the
base tables.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

EPS = 1e-7
MAGIC = b"HCR1"

FLAG_SHARE = 1
FLAG_EXPOSURE = 2
FLAG_CT = 4


class CheckpointError(ValueError):
    pass


def param_shapes(num_users: int, num_items: int, dim: int, share_embeddings: bool) -> dict[str, tuple]:
    shapes = {
        "user_base": (num_users, dim),
        "item_base": (num_items, dim),
        "click_w": (dim,),
        "click_b": (1,),
        "h1_w": (dim,),
        "h1_b": (1,),
        "h2_user": (num_users, dim),
        "h2_item": (num_items, dim),
        "h2_b": (1,),
        "exposure_w": (1,),
        "item_exposure": (num_items,),
    }
    if not share_embeddings:
        shapes["user_base_like"] = (num_users, dim)
        shapes["item_base_like"] = (num_items, dim)
    return shapes



@dataclass
class HcrModel:
    num_users: int
    num_items: int
    dim: int
    share_embeddings: bool = True
    exposure_factor: bool = False
    mode: str = "hcr"
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("hcr", "ct"):
            raise ValueError(f"unknown model mode {self.mode!r}")
        shapes = param_shapes(self.num_users, self.num_items, self.dim, self.share_embeddings)
        if not self.params:
            self.params = {name: np.zeros(shape) for name, shape in shapes.items()}
        if list(self.params) != list(shapes):
            raise ValueError("parameter names do not match the model layout")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    @classmethod
    def initialize(cls, num_users: int, num_items: int, dim: int, seed: int, **kwargs) -> "HcrModel":
        """Every parameter i.i.d. normal with standard deviation 0.1/sqrt(dim)."""
        model = cls(num_users, num_items, dim, **kwargs)
        rng = np.random.default_rng(seed)
        scale = 0.1 / np.sqrt(dim)
        for name, value in model.params.items():
            model.params[name] = rng.standard_normal(value.shape) * scale
        return model

    def copy(self) -> "HcrModel":
        return HcrModel(self.num_users, self.num_items, self.dim, self.share_embeddings,
                        self.exposure_factor, self.mode,
                        {k: v.copy() for k, v in self.params.items()})

    @property
    def like_tables(self) -> tuple[str, str]:
        if self.share_embeddings:
            return "user_base", "item_base"
        return "user_base_like", "item_base_like"

    @property
    def flags(self) -> int:
        return ((FLAG_SHARE if self.share_embeddings else 0)
                | (FLAG_EXPOSURE if self.exposure_factor else 0)
                | (FLAG_CT if self.mode == "ct" else 0))


def integrate_features(model: HcrModel, u, i, task: str = "click") -> np.ndarray:
    p = model.params
    if task == "click":
        return p["user_base"][u] * p["item_base"][i]
    ut, it = model.like_tables
    return p[ut][u] * p[it][i]


def _click_parts(model: HcrModel, u, i):
    p = model.params
    z = integrate_features(model, u, i, "click")
    s_main = expit(z @ p["click_w"] + p["click_b"][0])
    if model.exposure_factor:
        s_expo = expit(p["exposure_w"][0] * p["item_exposure"][i])
    else:
        s_expo = np.ones_like(s_main)
    return z, s_main, s_expo


def forward_click(model: HcrModel, u, i):
    """Estimated P(c=1 | u, i, z(u, i))."""
    _, s_main, s_expo = _click_parts(model, u, i)
    return s_main * s_expo


def forward_h1(model: HcrModel, u, i):
    p = model.params
    return expit(integrate_features(model, u, i, "like") @ p["h1_w"] + p["h1_b"][0])


def forward_h2(model: HcrModel, u, i):
    p = model.params
    return expit(np.sum(p["h2_user"][u] * p["h2_item"][i], axis=-1) + p["h2_b"][0])


def forward_h(model: HcrModel, u, i, c):
    """Like probability given the mediator: zero without a click."""
    c = np.asarray(c)
    return np.where(c == 1, forward_h1(model, u, i) * forward_h2(model, u, i), 0.0)


# full [users x items] score matrices; used by ranking, not by training

def click_matrix(model: HcrModel, users=None) -> np.ndarray:
    p = model.params
    ub = p["user_base"] if users is None else p["user_base"][users]
    out = expit((ub * p["click_w"]) @ p["item_base"].T + p["click_b"][0])
    if model.exposure_factor:
        out = out * expit(p["exposure_w"][0] * p["item_exposure"])[None, :]
    return out


def h1_matrix(model: HcrModel, users=None) -> np.ndarray:
    p = model.params
    ut, it = model.like_tables
    ub = p[ut] if users is None else p[ut][users]
    return expit((ub * p["h1_w"]) @ p[it].T + p["h1_b"][0])


def h2_matrix(model: HcrModel, users=None) -> np.ndarray:
    p = model.params
    qu = p["h2_user"] if users is None else p["h2_user"][users]
    return expit(qu @ p["h2_item"].T + p["h2_b"][0])


def bce(prob: np.ndarray, label: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-record binary cross-entropy and its derivative w.r.t. ``prob``.

    Probabilities are clamped to [EPS, 1-EPS]; the derivative is zero where
    the clamp is active.
    """
    q = np.clip(prob, EPS, 1.0 - EPS)
    loss = -(label * np.log(q) + (1 - label) * np.log1p(-q))
    dq = (q - label) / (q * (1.0 - q))
    dq = np.where((prob > EPS) & (prob < 1.0 - EPS), dq, 0.0)
    return loss, dq


def _add_rows(grad: np.ndarray, index, rows: np.ndarray) -> None:
    np.add.at(grad, index, rows)


def _click_term(model, grads, users, items, labels, weight):
    p = model.params
    z, s_main, s_expo = _click_parts(model, users, items)
    prob = s_main * s_expo
    loss, dprob = bce(prob, labels)
    n = len(labels)
    g = dprob * weight / n
    ga = g * prob * (1.0 - s_main)  # d/d click logit
    grads["click_w"] += ga @ z
    grads["click_b"][0] += ga.sum()
    _add_rows(grads["user_base"], users, ga[:, None] * p["click_w"] * p["item_base"][items])
    _add_rows(grads["item_base"], items, ga[:, None] * p["click_w"] * p["user_base"][users])
    if model.exposure_factor:
        ge = g * prob * (1.0 - s_expo)  # d/d exposure logit
        grads["exposure_w"][0] += ge @ p["item_exposure"][items]
        _add_rows(grads["item_exposure"], items, ge * p["exposure_w"][0])
    return weight * loss.mean()


def _like_term(model, grads, users, items, labels, weight, heads=("h1", "h2")):
    p = model.params
    ut, it = model.like_tables
    z = integrate_features(model, users, items, "like")
    s1 = expit(z @ p["h1_w"] + p["h1_b"][0]) if "h1" in heads else np.ones(len(users))
    s2 = forward_h2(model, users, items)
    prob = s1 * s2
    loss, dprob = bce(prob, labels)
    g = dprob * weight / len(labels)
    if "h1" in heads:
        g1 = g * prob * (1.0 - s1)
        grads["h1_w"] += g1 @ z
        grads["h1_b"][0] += g1.sum()
        _add_rows(grads[ut], users, g1[:, None] * p["h1_w"] * p[it][items])
        _add_rows(grads[it], items, g1[:, None] * p["h1_w"] * p[ut][users])
    g2 = g * prob * (1.0 - s2)
    grads["h2_b"][0] += g2.sum()
    _add_rows(grads["h2_user"], users, g2[:, None] * p["h2_item"][items])
    _add_rows(grads["h2_item"], items, g2[:, None] * p["h2_user"][users])
    return weight * loss.mean()


def zero_gradients(model: HcrModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def loss_gradients(model: HcrModel, click_batch, like_batch, beta: float = 1.0):
    """Multi-task loss and exact gradients.

    ``click_batch`` and ``like_batch`` are ``(users, items, labels)`` arrays;
    the like batch holds clicked records only. The loss is
    ``mean BCE(click, c) + beta * mean BCE(h1 * h2, l)``. In ``ct`` mode only
    ``mean BCE(h2, l)`` over the like batch is used and ``click_batch``/``beta``
    are ignored.
    """
    grads = zero_gradients(model)
    if model.mode == "ct":
        u, i, l = (np.asarray(a) for a in like_batch)
        if len(l) == 0:
            raise ValueError("empty like batch")
        return _like_term(model, grads, u, i, l.astype(float), 1.0, heads=("h2",)), grads

    cu, ci, c = (np.asarray(a) for a in click_batch)
    lu, li, l = (np.asarray(a) for a in like_batch)
    if len(c) == 0 or len(l) == 0:
        raise ValueError("empty batch")
    loss = _click_term(model, grads, cu, ci, c.astype(float), 1.0)
    loss += _like_term(model, grads, lu, li, l.astype(float), beta)
    return float(loss), grads


def batch_loss(model: HcrModel, click_batch, like_batch, beta: float = 1.0) -> float:
    """Loss value only, evaluated by plain forward passes (no gradient code)."""
    lu, li, l = (np.asarray(a) for a in like_batch)
    if model.mode == "ct":
        return float(bce(forward_h2(model, lu, li), l)[0].mean())
    cu, ci, c = (np.asarray(a) for a in click_batch)
    click = bce(forward_click(model, cu, ci), c)[0].mean()
    like = bce(forward_h1(model, lu, li) * forward_h2(model, lu, li), l)[0].mean()
    return float(click + beta * like)


def save_checkpoint(model: HcrModel, path) -> None:
    """``HCR1`` + four little-endian int64 (users, items, dim, flags) + float64 tensors."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4q", model.num_users, model.num_items, model.dim, model.flags))
        for value in model.params.values():
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path, num_users: int | None = None, num_items: int | None = None) -> HcrModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("not an HCR1 checkpoint")
    if len(blob) < 36:
        raise CheckpointError("truncated checkpoint header")
    nu, ni, dim, flags = struct.unpack("<4q", blob[4:36])
    if nu <= 0 or ni <= 0 or dim <= 0 or flags & ~(FLAG_SHARE | FLAG_EXPOSURE | FLAG_CT):
        raise CheckpointError("invalid checkpoint dimensions or flags")
    if num_users is not None and nu != num_users:
        raise CheckpointError(f"checkpoint has {nu} users, data has {num_users}")
    if num_items is not None and ni != num_items:
        raise CheckpointError(f"checkpoint has {ni} items, data has {num_items}")
    shapes = param_shapes(nu, ni, dim, bool(flags & FLAG_SHARE))
    expected = 36 + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(blob) != expected:
        raise CheckpointError(f"checkpoint size {len(blob)} does not match dims (expected {expected})")
    params, offset = {}, 36
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        params[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape).astype(float)
        offset += 8 * n
    return HcrModel(nu, ni, dim, bool(flags & FLAG_SHARE), bool(flags & FLAG_EXPOSURE),
                    "ct" if flags & FLAG_CT else "hcr", params)
