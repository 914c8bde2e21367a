"""Exact enumeration of small discrete models over (U, V, I, M, L).

The graph is fixed: U -> M, I -> M, V -> I, V -> L, M -> L, U -> L with V
hidden. Everything here is plain probability-table arithmetic so the
front-door identities can be checked to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DIM = 8
MAX_CONFOUNDER = 4
POSITIVITY_FLOOR = 1e-3


class PositivityError(ValueError):
    """A conditional needed by an adjustment formula has zero mass."""


def _clamp_rows(table: np.ndarray) -> np.ndarray:
    if np.all(table >= POSITIVITY_FLOOR):
        return table
    table = np.maximum(table, POSITIVITY_FLOOR)
    return table / table.sum(axis=-1, keepdims=True)


@dataclass
class TabularSCM:
    """Probability tables; ``p_l[u, m, v]`` is P(l=1 | u, m, v).

    Rows of ``p_i_given_v`` ([v, i]) and ``p_m_given_ui`` ([u, i, m]) are
    clamped to at least ``POSITIVITY_FLOOR`` and renormalised.
    """

    p_u: np.ndarray
    p_v: np.ndarray
    p_i_given_v: np.ndarray
    p_m_given_ui: np.ndarray
    p_l: np.ndarray

    def __post_init__(self):
        self.p_u = np.asarray(self.p_u, dtype=float)
        self.p_v = np.asarray(self.p_v, dtype=float)
        self.p_i_given_v = _clamp_rows(np.asarray(self.p_i_given_v, dtype=float))
        self.p_m_given_ui = _clamp_rows(np.asarray(self.p_m_given_ui, dtype=float))
        self.p_l = np.asarray(self.p_l, dtype=float)

        nu, nv, ni, nm = self.dims
        if max(nu, ni, nm) > MAX_DIM or nv > MAX_CONFOUNDER:
            raise ValueError(f"dimensions capped at {MAX_DIM} (U, I, M) and {MAX_CONFOUNDER} (V)")
        if self.p_i_given_v.shape != (nv, ni):
            raise ValueError("p_i_given_v must have shape [V, I]")
        if self.p_m_given_ui.shape != (nu, ni, nm):
            raise ValueError("p_m_given_ui must have shape [U, I, M]")
        if self.p_l.shape != (nu, nm, nv):
            raise ValueError("p_l must have shape [U, M, V]")
        for name in ("p_u", "p_v", "p_i_given_v", "p_m_given_ui"):
            t = getattr(self, name)
            if np.any(t < 0) or np.any(np.abs(t.sum(axis=-1) - 1.0) > 1e-12):
                raise ValueError(f"{name} rows must be probability vectors")
        if np.any(self.p_l < 0) or np.any(self.p_l > 1):
            raise ValueError("p_l entries must lie in [0, 1]")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(|U|, |V|, |I|, |M|)"""
        return (len(self.p_u), len(self.p_v), self.p_m_given_ui.shape[1], self.p_m_given_ui.shape[2])


def random_scm(rng: np.random.Generator, n_users=3, n_items=4, n_confounders=2, n_mediators=3,
               confounded=True) -> TabularSCM:
    """Draw every row as normalised i.i.d. exponential weights.

    ``confounded=False`` makes the like table independent of v.
    """

    def rows(*shape):
        w = rng.exponential(size=shape) + 1e-2
        return w / w.sum(axis=-1, keepdims=True)

    p_l = rng.uniform(0.02, 0.98, size=(n_users, n_mediators, n_confounders))
    if not confounded:
        p_l = np.repeat(p_l[:, :, :1], n_confounders, axis=2)
    return TabularSCM(
        p_u=rows(n_users),
        p_v=rows(n_confounders),
        p_i_given_v=rows(n_confounders, n_items),
        p_m_given_ui=rows(n_users, n_items, n_mediators),
        p_l=p_l,
    )


def enumerate_joint(scm: TabularSCM) -> np.ndarray:
    """Observational joint ``J[u, v, i, m, l]``."""
    like = np.stack([1.0 - scm.p_l, scm.p_l], axis=-1)  # [u, m, v, l]
    return np.einsum(
        "u,v,vi,uim,umvl->uviml",
        scm.p_u, scm.p_v, scm.p_i_given_v, scm.p_m_given_ui, like,
    )


def do_probability(scm: TabularSCM, u: int, i: int) -> float:
    """P(l=1 | u, do(i)) by truncated factorisation (uses the hidden tables)."""
    return float(np.einsum("v,m,mv->", scm.p_v, scm.p_m_given_ui[u, i], scm.p_l[u]))


def do_probability_monte_carlo(scm: TabularSCM, u: int, i: int, n: int,
                               rng: np.random.Generator) -> tuple[float, float]:
    """Sample the mutilated model with I forced to ``i``; returns (mean, standard error)."""
    v = rng.choice(len(scm.p_v), size=n, p=scm.p_v)
    m = rng.choice(scm.p_m_given_ui.shape[2], size=n, p=scm.p_m_given_ui[u, i])
    l = rng.random(n) < scm.p_l[u, m, v]
    mean = l.mean()
    return float(mean), float(np.sqrt(mean * (1 - mean) / n))


def _safe_divide(num: np.ndarray, den: np.ndarray, what: str) -> np.ndarray:
    if np.any(den <= 0):
        raise PositivityError(f"zero denominator in {what}")
    return num / den


def observational_conditionals(joint: np.ndarray) -> dict[str, np.ndarray]:
    """Conditionals computable from the observed margin over (u, i, m, l)."""
    obs = joint.sum(axis=1)  # hide v -> [u, i, m, l]
    p_uim = obs.sum(axis=3)
    p_ui = p_uim.sum(axis=2)
    return {
        "p_i": obs.sum(axis=(0, 2, 3)),
        "p_m_given_ui": _safe_divide(p_uim, p_ui[:, :, None], "P(m|u,i)"),
        "p_l_given_uim": _safe_divide(obs[..., 1], p_uim, "P(l|u,i,m)"),
        "p_l_given_ui": _safe_divide(obs[..., 1].sum(axis=2), p_ui, "P(l|u,i)"),
    }


def frontdoor_estimate(scm: TabularSCM, u: int, i: int, item_weighting: str = "marginal",
                       joint: np.ndarray | None = None) -> float:
    """sum_m P(m|u,i) sum_i' P(l=1|u,i',m) P(i'), from observational quantities only.

    ``item_weighting="uniform"`` replaces P(i') with 1/|I| and exists only so
    verification tooling can confirm a broken estimator is caught.
    """
    obs = observational_conditionals(enumerate_joint(scm) if joint is None else joint)
    p_i = obs["p_i"]
    if item_weighting == "uniform":
        p_i = np.full_like(p_i, 1.0 / len(p_i))
    elif item_weighting != "marginal":
        raise ValueError(f"unknown item_weighting {item_weighting!r}")
    mediator_effect = np.einsum("jm,j->m", obs["p_l_given_uim"][u], p_i)
    return float(obs["p_m_given_ui"][u, i] @ mediator_effect)


def backdoor_mediator_effect(scm: TabularSCM, u: int, m: int,
                             joint: np.ndarray | None = None) -> tuple[float, float]:
    """Both sides of sum_v P(v) P(l|u,m,v) = sum_i P(l|u,i,m) P(i)."""
    left = float(scm.p_v @ scm.p_l[u, m])
    obs = observational_conditionals(enumerate_joint(scm) if joint is None else joint)
    right = float(obs["p_l_given_uim"][u, :, m] @ obs["p_i"])
    return left, right


def naive_conditional(scm: TabularSCM, u: int, i: int, joint: np.ndarray | None = None) -> float:
    """P(l=1 | u, i), the correlational quantity."""
    obs = observational_conditionals(enumerate_joint(scm) if joint is None else joint)
    return float(obs["p_l_given_ui"][u, i])


@dataclass
class IdentityReport:
    n_models: int
    frontdoor_error: float = 0.0
    backdoor_error: float = 0.0
    collider_error: float = 0.0
    mass_error: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.frontdoor_error, self.backdoor_error, self.collider_error, self.mass_error)


def check_identities(n_models: int, dims=(3, 4, 2, 3), seed: int = 0,
                     item_weighting: str = "marginal") -> IdentityReport:
    """Sweep seeded random models; record the worst absolute error of each identity.

    ``dims`` is (|U|, |I|, |V|, |M|).
    """
    n_users, n_items, n_conf, n_med = dims
    report = IdentityReport(n_models)
    for k in range(n_models):
        rng = np.random.default_rng([seed, k])
        scm = random_scm(rng, n_users, n_items, n_conf, n_med)
        joint = enumerate_joint(scm)
        obs = observational_conditionals(joint)
        report.mass_error = max(report.mass_error, abs(joint.sum() - 1.0))
        report.collider_error = max(report.collider_error,
                                    float(np.abs(obs["p_m_given_ui"] - scm.p_m_given_ui).max()))
        for u in range(n_users):
            for i in range(n_items):
                fd = frontdoor_estimate(scm, u, i, item_weighting, joint=joint)
                report.frontdoor_error = max(report.frontdoor_error, abs(fd - do_probability(scm, u, i)))
            for m in range(n_med):
                left, right = backdoor_mediator_effect(scm, u, m, joint=joint)
                report.backdoor_error = max(report.backdoor_error, abs(left - right))
    return report
