"""Graph temporal attention encoder.

Each layer runs multi-head self-attention across turbines at every slot
(spatial) and across slots for every turbine (temporal) in parallel, then
fuses the two with a linear map and a sigmoid. Hidden states are laid out
as (batch, slots, candidates, hidden).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ParameterStore, Tensor, concat, masked_add, matmul, softmax


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 3
    hidden_dim: int = 128
    n_heads: int = 8
    scale_by_head_dim: bool = False  # default divides scores by sqrt(hidden_dim)
    residual: bool = False
    layer_norm: bool = False

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.hidden_dim % self.n_heads:
            raise ValueError("hidden_dim must be divisible by n_heads")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads

    @property
    def score_scale(self) -> float:
        return math.sqrt(self.head_dim if self.scale_by_head_dim else self.hidden_dim)


def uniform_init(rng: np.random.Generator, shape, hidden_dim: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(hidden_dim)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(store: ParameterStore, config: EncoderConfig, n_features: int, rng: np.random.Generator) -> None:
    D = config.hidden_dim
    store.add("embed.weight", uniform_init(rng, (n_features, D), D))
    store.add("embed.bias", np.zeros(D))
    for layer in range(config.n_layers):
        for branch in ("spatial", "temporal"):
            for w in ("wq", "wk", "wv"):
                store.add(f"layer{layer}.{branch}.{w}", uniform_init(rng, (D, D), D))
        store.add(f"layer{layer}.integrate.weight", uniform_init(rng, (2 * D, D), D))


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., n, D) -> (..., heads, n, D / heads)."""
    *lead, n, d = x.shape
    return x.reshape(*lead, n, n_heads, d // n_heads).swapaxes(-3, -2)


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, n, d) -> (..., n, heads * d)."""
    *lead, h, n, d = x.shape
    return x.swapaxes(-3, -2).reshape(*lead, n, h * d)


def multi_head_attention(
    queries: Tensor,
    keys_values: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    n_heads: int,
    score_scale: float,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention with per-head projections and concatenated heads.

    Returns the attended values (..., nq, D) and the weights (..., heads, nq, nk).
    ``mask`` is additive over the key axis, broadcastable to (..., nk).
    """
    q = split_heads(matmul(queries, wq), n_heads)
    k = split_heads(matmul(keys_values, wk), n_heads)
    v = split_heads(matmul(keys_values, wv), n_heads)
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / score_scale)
    if mask is not None:
        mask = np.asarray(mask)
        scores = masked_add(scores, mask.reshape(mask.shape[:-1] + (1, 1, mask.shape[-1])))
    weights = softmax(scores)
    return merge_heads(matmul(weights, v)), weights


def input_embedding(features, store: ParameterStore) -> Tensor:
    """Affine map of [cost | one-hot location] rows to the hidden width."""
    x = features if isinstance(features, Tensor) else Tensor(features)
    return matmul(x, store["embed.weight"]) + store["embed.bias"]


def spatial_attention(H: Tensor, store: ParameterStore, layer: int, config: EncoderConfig, record=None) -> Tensor:
    """Self-attention across candidates at each slot; H is (..., slots, n, D)."""
    p = f"layer{layer}.spatial."
    out, weights = multi_head_attention(
        H, H, store[p + "wq"], store[p + "wk"], store[p + "wv"], config.n_heads, config.score_scale
    )
    if record is not None:
        record.append(("spatial", layer, weights.data))
    return out


def temporal_attention(H: Tensor, store: ParameterStore, layer: int, config: EncoderConfig, record=None) -> Tensor:
    """Self-attention across slots for each candidate (past and future, unmasked)."""
    p = f"layer{layer}.temporal."
    Ht = H.swapaxes(-3, -2)
    out, weights = multi_head_attention(
        Ht, Ht, store[p + "wq"], store[p + "wk"], store[p + "wv"], config.n_heads, config.score_scale
    )
    if record is not None:
        record.append(("temporal", layer, weights.data))
    return out.swapaxes(-3, -2)


def integrate(HS: Tensor, HT: Tensor, weight: Tensor) -> Tensor:
    if HS.shape != HT.shape:
        raise ValueError(f"spatial {HS.shape} and temporal {HT.shape} outputs differ in shape")
    return matmul(concat([HS, HT], axis=-1), weight).sigmoid()


def _layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + eps).pow(-0.5)


def encode(features, store: ParameterStore, config: EncoderConfig, record=None) -> Tensor:
    """Full encoder pass.

    ``features`` is (slots, n, F) or (batch, slots, n, F). Pass a list as
    ``record`` to collect every attention weight tensor.
    """
    H = input_embedding(features, store)
    for layer in range(config.n_layers):
        HS = spatial_attention(H, store, layer, config, record)
        HT = temporal_attention(H, store, layer, config, record)
        out = integrate(HS, HT, store[f"layer{layer}.integrate.weight"])
        if config.residual:
            out = out + H
        if config.layer_norm:
            out = _layer_norm(out)
        H = out
    return H
