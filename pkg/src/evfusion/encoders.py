"""Patch-embedding vision/event encoders.

A frame is bilinearly resized to a square, cut into non-overlapping
patches, linearly projected, prefixed with a learned class token, and
given learned positional embeddings, then run through a stack of
pre-norm transformer blocks. The RGB and event branches own separate
parameter sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import blocks
from .autodiff import Tensor
from .errors import ContractError, NumericError
from .events import EventFrameSequence, VideoClip
from .params import ParamStore


@dataclass
class EncoderConfig:
    image_size: int = 32
    patch_size: int = 8
    dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    frozen: bool = True
    activation: str = "gelu"

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ContractError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.dim % self.heads != 0:
            raise ContractError(f"dim {self.dim} not divisible by heads {self.heads}")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def n_tokens(self) -> int:
        return self.n_patches + 1  # class token


@dataclass
class TokenSequence:
    tokens: Tensor
    modality: str  # vision | event | text

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]


def bilinear_resize(frame: np.ndarray, size: int) -> np.ndarray:
    """Resize (H, W, C) to (size, size, C) with bilinear sampling."""
    h, w = frame.shape[:2]
    if h == size and w == size:
        return frame.astype(np.float64)
    ys = (np.arange(size) + 0.5) * (h / size) - 0.5
    xs = (np.arange(size) + 0.5) * (w / size) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    f = frame.astype(np.float64)
    top = f[y0][:, x0] * (1 - wx) + f[y0][:, x1] * wx
    bot = f[y1][:, x0] * (1 - wx) + f[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def event_frame_to_rgb(frame: np.ndarray) -> np.ndarray:
    """Map a 2-channel (ON, OFF) count image to the 3-channel embedder input:
    [ON, OFF, mean(ON, OFF)]."""
    on, off = frame[0], frame[1]
    return np.stack([on, off, 0.5 * (on + off)], axis=2)


def init_encoder_params(store: ParamStore, prefix: str, cfg: EncoderConfig,
                        rng: np.random.Generator) -> None:
    patch_dim = 3 * cfg.patch_size**2
    blocks.init_linear(store, f"{prefix}.patch", patch_dim, cfg.dim, rng)
    store.add(f"{prefix}.cls", rng.normal(0.0, blocks.INIT_STD, size=(1, cfg.dim)))
    store.add(f"{prefix}.pos",
              rng.normal(0.0, blocks.INIT_STD, size=(cfg.n_tokens, cfg.dim)))
    for i in range(cfg.depth):
        blocks.init_transformer_block(store, f"{prefix}.block{i}", cfg.dim,
                                      cfg.mlp_ratio, rng)
    if cfg.frozen:
        store.freeze(prefix)


def patchify_embed(frame: np.ndarray, cfg: EncoderConfig, store: ParamStore,
                   prefix: str) -> TokenSequence:
    """Resize, patchify, project, prepend class token, add positions."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ContractError(f"expected (H, W, 3) frame, got {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise NumericError("patchify_embed: non-finite pixel values")
    img = bilinear_resize(frame, cfg.image_size)
    p = cfg.patch_size
    g = cfg.image_size // p
    patches = (img.reshape(g, p, g, p, 3)
                  .transpose(0, 2, 1, 3, 4)
                  .reshape(g * g, p * p * 3))
    embedded = blocks.linear(store, f"{prefix}.patch", Tensor(patches))
    with_cls = ad.concat_rows(store[f"{prefix}.cls"], embedded)
    tokens = ad.add(with_cls, store[f"{prefix}.pos"])
    return TokenSequence(tokens, "vision")


def encoder_forward(seq: TokenSequence, cfg: EncoderConfig, store: ParamStore,
                    prefix: str, weights_sink: list | None = None) -> TokenSequence:
    if seq.tokens.shape[1] != cfg.dim:
        raise ContractError(
            f"token width {seq.tokens.shape[1]} != encoder dim {cfg.dim}")
    x = seq.tokens
    for i in range(cfg.depth):
        x = blocks.transformer_block(store, f"{prefix}.block{i}", x, cfg.heads,
                                     act=cfg.activation, weights_sink=weights_sink)
    return TokenSequence(x, seq.modality)


def encode_frame(frame: np.ndarray, cfg: EncoderConfig, store: ParamStore,
                 prefix: str, modality: str,
                 weights_sink: list | None = None) -> TokenSequence:
    seq = patchify_embed(frame, cfg, store, prefix)
    seq.modality = modality
    return encoder_forward(seq, cfg, store, prefix, weights_sink=weights_sink)


def encode_clip(clip: VideoClip | EventFrameSequence, cfg: EncoderConfig,
                store: ParamStore, prefix: str,
                weights_sink: list | None = None) -> list[TokenSequence]:
    """Independently encode every frame of a clip."""
    if isinstance(clip, EventFrameSequence):
        frames = [event_frame_to_rgb(f) for f in clip.frames]
        modality = "event"
    else:
        frames = clip.frames
        modality = "vision"
    if not frames:
        raise ContractError("encode_clip: empty clip")
    return [encode_frame(f, cfg, store, prefix, modality, weights_sink=weights_sink)
            for f in frames]
