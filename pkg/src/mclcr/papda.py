"""Patch-wise amplitude / phase dual attention.

Patch spectra are flattened and linearly embedded with a learned position
table. Two cross-attention exchanges then couple the streams: phase tokens
query amplitude keys/values to refine the amplitude embedding, and amplitude
tokens query phase keys/values to refine the phase embedding. Each direction
has its own layer norms and projections, and each output keeps a residual
connection to its own embedding.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

STREAMS = ("amp", "phase")


def init_embedding(rng: np.random.Generator, in_dim: int, D: int, N: int, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.w": rng.normal(0.0, np.sqrt(1.0 / in_dim), (in_dim, D)),
        f"{prefix}.b": np.zeros(D),
        f"{prefix}.pos": rng.normal(0.0, 0.02, (N, D)),
    }


def init_attention(rng: np.random.Generator, D: int, prefix: str) -> dict[str, np.ndarray]:
    p = {}
    for ln in ("ln_q", "ln_kv"):
        p[f"{prefix}.{ln}.g"] = np.ones(D)
        p[f"{prefix}.{ln}.b"] = np.zeros(D)
    for w in ("q", "k", "v", "o"):
        p[f"{prefix}.w{w}"] = rng.normal(0.0, np.sqrt(1.0 / D), (D, D))
        p[f"{prefix}.b{w}"] = np.zeros(D)
    return p


def init_papda(rng: np.random.Generator, P: int, D: int, N: int) -> dict[str, np.ndarray]:
    params = {}
    for s in STREAMS:
        params.update(init_embedding(rng, P * P, D, N, f"embed.{s}"))
    for s in STREAMS:
        params.update(init_attention(rng, D, f"papda.{s}"))
    return params


def embed_spectra(spectra: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """(..., N, P, P) or (..., N, P*P) spectra -> (..., N, D) tokens."""
    w, b, pos = params[f"{prefix}.w"], params[f"{prefix}.b"], params[f"{prefix}.pos"]
    if spectra.ndim >= 3 and spectra.shape[-1] != w.shape[0]:
        spectra = T.reshape(spectra, spectra.shape[:-2] + (-1,))
    if spectra.shape[-1] != w.shape[0] or spectra.shape[-2] != pos.shape[0]:
        raise T.ShapeError(f"embed_spectra: spectra {spectra.shape} vs projection {w.shape} and positions {pos.shape}")
    return T.matmul(spectra, w) + b + pos


def _split_heads(x: Tensor, heads: int) -> Tensor:
    lead, (n, D) = x.shape[:-2], x.shape[-2:]
    k = len(lead)
    x = T.reshape(x, lead + (n, heads, D // heads))
    return T.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))


def _merge_heads(x: Tensor) -> Tensor:
    lead, (h, n, d) = x.shape[:-3], x.shape[-3:]
    k = len(lead)
    x = T.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))
    return T.reshape(x, lead + (n, h * d))


def cross_attention(q_src: Tensor, kv_src: Tensor, params: dict[str, Tensor], prefix: str,
                    heads: int = 4, scale: str = "sqrt_d", return_weights: bool = False):
    """Multi-head attention with queries from ``q_src`` and keys/values from ``kv_src``.

    Both sources are layer-normalised first. ``scale`` chooses the logit
    divisor: ``sqrt_d`` (per-head width) or ``sqrt_D`` (full embedding width).
    """
    if q_src.shape != kv_src.shape:
        raise T.ShapeError(f"cross_attention: query source {q_src.shape} vs key/value source {kv_src.shape}")
    D = q_src.shape[-1]
    if D % heads:
        raise ValueError(f"embedding dim {D} is not divisible by {heads} heads")
    p = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    q_in = T.layer_norm(q_src, p("ln_q.g"), p("ln_q.b"))
    kv_in = T.layer_norm(kv_src, p("ln_kv.g"), p("ln_kv.b"))
    q = _split_heads(T.matmul(q_in, p("wq")) + p("bq"), heads)
    k = _split_heads(T.matmul(kv_in, p("wk")) + p("bk"), heads)
    v = _split_heads(T.matmul(kv_in, p("wv")) + p("bv"), heads)
    if scale == "sqrt_d":
        div = np.sqrt(D // heads)
    elif scale == "sqrt_D":
        div = np.sqrt(D)
    else:
        raise ValueError(f"unknown attention scale {scale!r}")
    weights = T.softmax(T.matmul(q, T.swap_last(k)) / div)
    out = T.matmul(_merge_heads(T.matmul(weights, v)), p("wo")) + p("bo")
    return (out, weights) if return_weights else out


def papda_forward(e_as: Tensor, e_ps: Tensor, params: dict[str, Tensor], heads: int = 4,
                  scale: str = "sqrt_d") -> tuple[Tensor, Tensor]:
    """Amplitude tokens AT and phase tokens PT from the two embeddings."""
    at = e_as + cross_attention(e_ps, e_as, params, "papda.amp", heads, scale)
    pt = e_ps + cross_attention(e_as, e_ps, params, "papda.phase", heads, scale)
    return at, pt
