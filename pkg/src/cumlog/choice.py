"""Logit route choice plus KL divergence and entropy on products of simplices.

All functions take the per-OD block layout from an :class:`~cumlog.network.Incidence`
(or anything exposing ``od_start``).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "FLUSH_BELOW",
    "logit",
    "kl_divergence",
    "kl_divergence_per_od",
    "entropy",
    "kl_projection_identity_check",
    "check_valuation",
]

FLUSH_BELOW = 1e-300


def _blocks(inc):
    start = inc.od_start
    return start[:-1], np.diff(start)


def check_valuation(s, inc) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (int(inc.od_start[-1]),):
        raise ValueError(f"valuation has shape {s.shape}, expected ({int(inc.od_start[-1])},)")
    if np.isnan(s).any():
        raise ValueError("valuation contains NaN")
    if np.isneginf(s).any():
        raise ValueError("valuation contains -inf")
    return s


def logit(s, r: float, inc) -> np.ndarray:
    """Per-OD logit probabilities ``exp(-r s_k) / sum_{k' in K_w} exp(-r s_k')``.

    The per-OD minimum is subtracted before exponentiating, which leaves the
    result unchanged because logit only depends on valuation differences.
    Entries equal to ``+inf`` get probability zero; probabilities below
    ``FLUSH_BELOW`` are flushed to exact zero.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    s = check_valuation(s, inc)
    first, sizes = _blocks(inc)
    smin = np.minimum.reduceat(s, first)
    if np.isinf(smin).any():
        w = int(np.flatnonzero(np.isinf(smin))[0])
        raise ValueError(f"OD {w} has no acceptable route (all valuations infinite)")
    z = np.exp(-r * (s - np.repeat(smin, sizes)))
    p = z / np.repeat(np.add.reduceat(z, first), sizes)
    p[p < FLUSH_BELOW] = 0.0
    return p


def _xlogy_ratio(p, q):
    # p*(ln p - ln q) with 0*ln0 = 0 and +inf where p>0=q
    out = np.zeros_like(p)
    pos = p > 0
    with np.errstate(divide="ignore"):
        out[pos] = p[pos] * (np.log(p[pos]) - np.log(q[pos]))
    return out


def kl_divergence_per_od(p, q, inc) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    first, _ = _blocks(inc)
    return np.add.reduceat(_xlogy_ratio(p, q), first)


def kl_divergence(p, q, inc) -> float:
    """``D(p, q) = sum_w sum_k p_k (ln p_k - ln q_k)``; ``+inf`` iff supp(p) is not inside supp(q)."""
    return float(kl_divergence_per_od(p, q, inc).sum())


def entropy(p, demands, inc) -> float:
    """Demand-weighted entropy ``-sum_w d_w sum_k p_k ln p_k`` (natural log)."""
    p = np.asarray(p, dtype=float)
    first, _ = _blocks(inc)
    plogp = np.zeros_like(p)
    pos = p > 0
    plogp[pos] = p[pos] * np.log(p[pos])
    return float(-(np.asarray(demands, dtype=float) * np.add.reduceat(plogp, first)).sum())


def kl_projection_identity_check(s, r: float, inc, atol: float = 1e-12) -> bool:
    """Compare logit with the normalised gradient of the entropy conjugate.

    The KL-projection form of logit is ``exp(-r s_w - 1) / ||exp(-r s_w - 1)||_1``;
    it is evaluated here without any stabilisation so it stays independent of
    :func:`logit`. Only finite ``r s`` small enough not to overflow is meaningful.
    """
    s = check_valuation(s, inc)
    first, sizes = _blocks(inc)
    with np.errstate(over="ignore"):
        g = np.exp(-r * s - 1.0)
    norm = np.add.reduceat(g, first)
    direct = g / np.repeat(norm, sizes)
    return bool(np.allclose(direct, logit(s, r, inc), rtol=0.0, atol=atol))
