"""Transformer building blocks shared by the encoders and the fusion core.

All blocks operate on (tokens x dim) Tensors with pre-norm residual
wiring. Parameters live in a ParamStore under a caller-chosen prefix.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .params import ParamStore

INIT_STD = 0.02


def init_linear(store: ParamStore, prefix: str, d_in: int, d_out: int,
                rng: np.random.Generator) -> None:
    store.add(f"{prefix}.w", rng.normal(0.0, INIT_STD, size=(d_in, d_out)))
    store.add(f"{prefix}.b", np.zeros((1, d_out)))


def linear(store: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, store[f"{prefix}.w"]), store[f"{prefix}.b"])


def init_layer_norm(store: ParamStore, prefix: str, dim: int) -> None:
    store.add(f"{prefix}.gain", np.ones((1, dim)))
    store.add(f"{prefix}.bias", np.zeros((1, dim)))


def layer_norm(store: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x, store[f"{prefix}.gain"], store[f"{prefix}.bias"])


def init_attention(store: ParamStore, prefix: str, dim: int,
                   rng: np.random.Generator) -> None:
    for name in ("wq", "wk", "wv", "wo"):
        init_linear(store, f"{prefix}.{name}", dim, dim, rng)


def multi_head_attention(store: ParamStore, prefix: str, x: Tensor, heads: int,
                         weights_sink: list | None = None) -> Tensor:
    """Self-attention over one token sequence; heads split the width."""
    dim = x.shape[1]
    if dim % heads != 0:
        raise DimensionError(f"dim {dim} not divisible by heads {heads}")
    q = linear(store, f"{prefix}.wq", x)
    k = linear(store, f"{prefix}.wk", x)
    v = linear(store, f"{prefix}.wv", x)
    hd = dim // heads
    outs = []
    for h in range(heads):
        lo, hi = h * hd, (h + 1) * hd
        outs.append(ad.scaled_dot_attention(
            ad.slice_cols(q, lo, hi), ad.slice_cols(k, lo, hi),
            ad.slice_cols(v, lo, hi), weights_sink=weights_sink))
    merged = outs[0] if heads == 1 else ad.concat_cols(*outs)
    return linear(store, f"{prefix}.wo", merged)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "gelu":
        return ad.gelu(x)
    if kind == "relu":
        return ad.relu(x)
    raise ContractError(f"unknown activation {kind!r}")


def init_transformer_block(store: ParamStore, prefix: str, dim: int,
                           mlp_ratio: float, rng: np.random.Generator) -> None:
    hidden = int(round(dim * mlp_ratio))
    init_layer_norm(store, f"{prefix}.ln1", dim)
    init_attention(store, f"{prefix}.attn", dim, rng)
    init_layer_norm(store, f"{prefix}.ln2", dim)
    init_linear(store, f"{prefix}.mlp1", dim, hidden, rng)
    init_linear(store, f"{prefix}.mlp2", hidden, dim, rng)


def transformer_block(store: ParamStore, prefix: str, x: Tensor, heads: int,
                      act: str = "gelu", weights_sink: list | None = None) -> Tensor:
    """Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x))."""
    attn = multi_head_attention(store, f"{prefix}.attn", layer_norm(store, f"{prefix}.ln1", x),
                                heads, weights_sink=weights_sink)
    x = ad.add(x, attn)
    h = linear(store, f"{prefix}.mlp1", layer_norm(store, f"{prefix}.ln2", x))
    h = linear(store, f"{prefix}.mlp2", activation(h, act))
    return ad.add(x, h)


def init_attention_only_block(store: ParamStore, prefix: str, dim: int,
                              rng: np.random.Generator) -> None:
    init_layer_norm(store, f"{prefix}.ln", dim)
    init_attention(store, f"{prefix}.attn", dim, rng)


def attention_only_block(store: ParamStore, prefix: str, x: Tensor, heads: int,
                         weights_sink: list | None = None) -> Tensor:
    """Pre-norm residual self-attention without an MLP."""
    attn = multi_head_attention(store, f"{prefix}.attn",
                                layer_norm(store, f"{prefix}.ln", x),
                                heads, weights_sink=weights_sink)
    return ad.add(x, attn)
