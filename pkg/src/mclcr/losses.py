"""Supervised contrastive and binary cross-entropy objectives, plus ACC / AUC."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from .tensor import Tensor

CLIP = 1e-7


class DegenerateBatchError(ValueError):
    """A batch in which some anchor has no positive or no negative partner."""


def supcon_loss(z: Tensor, labels, tau: float = 0.1, denominator: str = "negatives",
                reduction: str = "sum") -> Tensor:
    """Supervised contrastive loss summed (or averaged) over anchors.

    For anchor i with same-class partners P(i) (i excluded) and other-class
    samples N(i):

        L_i = -1/|P(i)| * sum_{p in P(i)} log( exp(z_i.z_p / tau) / sum_{n in N(i)} exp(z_i.z_n / tau) )

    ``denominator="all"`` sums the denominator over every sample except the
    anchor instead of negatives only. ``reduction="mean"`` divides the sum by
    the batch size.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    y = np.asarray(labels).reshape(-1)
    B = y.size
    if z.shape[0] != B:
        raise T.ShapeError(f"supcon_loss: {z.shape[0]} embeddings for {B} labels")
    same = y[:, None] == y[None, :]
    pos = same & ~np.eye(B, dtype=bool)
    neg = ~same
    if not pos.any(axis=1).all() or not neg.any(axis=1).all():
        raise DegenerateBatchError("every anchor needs at least one positive and one negative in the batch")
    if denominator == "negatives":
        den_mask = neg
    elif denominator == "all":
        den_mask = ~np.eye(B, dtype=bool)
    else:
        raise ValueError(f"unknown supcon denominator {denominator!r}")
    sim = T.matmul(z, T.swap_last(z)) / tau
    lse = T.masked_logsumexp(sim, den_mask)  # (B,)
    pos_mean = T.tsum(sim * (pos / pos.sum(axis=1, keepdims=True)), axis=1)
    if reduction == "sum":
        return T.tsum(lse - pos_mean)
    if reduction == "mean":
        return T.mean(lse - pos_mean)
    raise ValueError(f"unknown supcon reduction {reduction!r}")


def ce_loss(probs: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of fake-probabilities, clipped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=np.float64).reshape(probs.shape)
    p = T.clip(probs, CLIP, 1.0 - CLIP)
    return -T.mean(y * T.log(p) + (1.0 - y) * T.log(1.0 - p))


def ce_loss_logits(logits: Tensor, labels) -> Tensor:
    """The clipped cross-entropy of ``sigmoid(logits)`` with a gradient that survives the clip.

    The value equals ``ce_loss(sigmoid(logits))``. The backward pass is the exact
    logistic gradient ``(sigmoid(a) - y) / N``, so it agrees with ``ce_loss`` wherever
    the probability lies inside the clip range and stays nonzero where it does not.
    """
    a = logits.data
    y = np.asarray(labels, dtype=np.float64).reshape(a.shape)
    s = T.sigmoid(Tensor(a)).data
    prob = np.clip(s, CLIP, 1.0 - CLIP)
    value = -np.mean(y * np.log(prob) + (1.0 - y) * np.log(1.0 - prob))
    resid = (s - y) / a.size
    return T._make(np.asarray(value), "ce_logits", (logits,), lambda g: (g * resid,))


def combined_loss(l_sc, l_ce, alpha: float = 0.5):
    """alpha * L_sc + (1 - alpha) * L_ce; alpha = 0 returns ``l_ce`` itself."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return l_ce
    if alpha == 1.0:
        return l_sc
    return alpha * l_sc + (1.0 - alpha) * l_ce


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size == 0:
        raise ValueError("accuracy of an empty score set")
    return float(np.mean((s >= threshold) == (y == 1)))


def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney pair statistic, ties counted one half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    fake, real = s[y == 1], s[y == 0]
    if fake.size == 0 or real.size == 0:
        raise ValueError("AUC needs both real and fake samples")
    # rank-sum form of the pair count; average ranks give ties weight 1/2
    r = rankdata(np.concatenate([real, fake]))
    u = r[real.size:].sum() - fake.size * (fake.size + 1) / 2.0
    return float(u / (fake.size * real.size))
