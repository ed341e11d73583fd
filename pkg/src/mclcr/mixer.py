"""Two-layer MLP-Mixer over frequency tokens."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def init_mixer(rng: np.random.Generator, N: int, D: int, prefix: str, layers: int = 2,
               hidden_tokens: int | None = None, hidden_channels: int | None = None) -> dict[str, np.ndarray]:
    ht = hidden_tokens or N
    hc = hidden_channels or D
    p = {}
    for i in range(layers):
        lp = f"{prefix}.layer{i}"
        for ln in ("ln_tok", "ln_ch"):
            p[f"{lp}.{ln}.g"] = np.ones(D)
            p[f"{lp}.{ln}.b"] = np.zeros(D)
        p[f"{lp}.w1"] = rng.normal(0.0, np.sqrt(1.0 / N), (N, ht))
        p[f"{lp}.b1"] = np.zeros(ht)
        p[f"{lp}.w2"] = rng.normal(0.0, np.sqrt(1.0 / ht), (ht, N))
        p[f"{lp}.b2"] = np.zeros(N)
        p[f"{lp}.w3"] = rng.normal(0.0, np.sqrt(1.0 / D), (D, hc))
        p[f"{lp}.b3"] = np.zeros(hc)
        p[f"{lp}.w4"] = rng.normal(0.0, np.sqrt(1.0 / hc), (hc, D))
        p[f"{lp}.b4"] = np.zeros(D)
    p[f"{prefix}.ln_out.g"] = np.ones(D)
    p[f"{prefix}.ln_out.b"] = np.zeros(D)
    return p


def token_mixing(t: Tensor, params: dict[str, Tensor], lp: str) -> Tensor:
    """U = T + (GELU(LN(T)^T W1) W2)^T: one shared N -> N map per channel."""
    y = T.swap_last(T.layer_norm(t, params[f"{lp}.ln_tok.g"], params[f"{lp}.ln_tok.b"]))
    y = T.gelu(T.matmul(y, params[f"{lp}.w1"]) + params[f"{lp}.b1"])
    y = T.matmul(y, params[f"{lp}.w2"]) + params[f"{lp}.b2"]
    return t + T.swap_last(y)


def channel_mixing(u: Tensor, params: dict[str, Tensor], lp: str) -> Tensor:
    """Y = U + GELU(LN(U) W3) W4: one shared D -> D map per patch."""
    y = T.layer_norm(u, params[f"{lp}.ln_ch.g"], params[f"{lp}.ln_ch.b"])
    y = T.gelu(T.matmul(y, params[f"{lp}.w3"]) + params[f"{lp}.b3"])
    return u + T.matmul(y, params[f"{lp}.w4"]) + params[f"{lp}.b4"]


def mixer_layer(t: Tensor, params: dict[str, Tensor], lp: str) -> Tensor:
    n, d = t.shape[-2:]
    if params[f"{lp}.w1"].shape[0] != n or params[f"{lp}.w3"].shape[0] != d:
        raise T.ShapeError(f"mixer layer {lp}: tokens {t.shape} do not match weights "
                           f"w1 {params[f'{lp}.w1'].shape}, w3 {params[f'{lp}.w3'].shape}")
    return channel_mixing(token_mixing(t, params, lp), params, lp)


def freq_feature(tokens: Tensor, params: dict[str, Tensor], prefix: str, layers: int = 2) -> Tensor:
    """GAP(LN(Mixer(tokens))) -> one D-vector per sample."""
    x = tokens
    for i in range(layers):
        x = mixer_layer(x, params, f"{prefix}.layer{i}")
    x = T.layer_norm(x, params[f"{prefix}.ln_out.g"], params[f"{prefix}.ln_out.b"])
    return T.global_avg_pool(x, batched=x.ndim == 3)
