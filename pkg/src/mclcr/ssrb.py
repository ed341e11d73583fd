"""Shallow style representations: Gram matrices of early feature maps."""

from __future__ import annotations

from . import tensor as T
from .backbone import BackboneActivations
from .tensor import Tensor


def gram(feature_map: Tensor) -> Tensor:
    """Uncentered channel Gram matrix ``V V^T`` of an H x W x C map (batch axis optional).

    Returns C x C (or B x C x C).
    """
    c = feature_map.shape[-1]
    lead = feature_map.shape[:-3]
    v = T.reshape(feature_map, lead + (-1, c))  # (..., HW, C)
    return T.matmul(T.swap_last(v), v)


def ssrb_forward(feature_map: Tensor) -> Tensor:
    """Row means of the Gram matrix: one style value per channel."""
    return T.mean(gram(feature_map), axis=-1)


def multi_scale_ssrb(acts: BackboneActivations) -> tuple[Tensor, Tensor, Tensor]:
    return ssrb_forward(acts.b1), ssrb_forward(acts.b2), ssrb_forward(acts.b3)
