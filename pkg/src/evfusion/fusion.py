"""Fusion core: modality-text multimodal transformers, vision-event
self-attention fusion, text-query cross-attention, and the classifier.

The Model class bundles both encoders, the text branch, and the fusion
parameters, and exposes the full forward pass with ablation switches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import blocks
from .autodiff import Tensor
from .encoders import EncoderConfig, TokenSequence, encode_clip
from .errors import ContractError, DimensionError
from .events import Sample, stack_events
from .params import ParamStore
from .text import PromptTemplate, TextConfig, Vocabulary, encode_labels, render_prompt


@dataclass
class FusionConfig:
    dim: int = 64
    depth: int = 1          # blocks per multimodal transformer
    heads: int = 4
    mlp_ratio: float = 4.0
    activation: str = "gelu"


@dataclass
class AblationSwitches:
    sci: bool = True   # semantic text branch (off: learned free tokens)
    lvm: bool = True   # deep frozen encoders (off: shallow trainable)
    mt: bool = True    # multimodal transformers
    sa: bool = True    # vision-event self-attention fusion
    ca: bool = True    # text-query cross-attention

    def as_dict(self) -> dict[str, bool]:
        return {"sci": self.sci, "lvm": self.lvm, "mt": self.mt,
                "sa": self.sa, "ca": self.ca}


def _check_width(t: Tensor, dim: int, what: str) -> None:
    if t.shape[1] != dim:
        raise DimensionError(f"{what}: width {t.shape[1]} != fusion dim {dim}")


def init_fusion_params(store: ParamStore, prefix: str, cfg: FusionConfig,
                       n_classes: int, rng: np.random.Generator) -> None:
    for branch in ("mt_vt", "mt_et"):
        for i in range(cfg.depth):
            blocks.init_transformer_block(store, f"{prefix}.{branch}.block{i}",
                                          cfg.dim, cfg.mlp_ratio, rng)
    blocks.init_attention_only_block(store, f"{prefix}.sa_ve", cfg.dim, rng)
    for branch in ("ca_vt", "ca_et"):
        for name in ("wq", "wk", "wv"):
            blocks.init_linear(store, f"{prefix}.{branch}.{name}", cfg.dim, cfg.dim, rng)
    blocks.init_attention_only_block(store, f"{prefix}.final", cfg.dim, rng)
    blocks.init_linear(store, f"{prefix}.clf", cfg.dim, n_classes, rng)
    store.add(f"{prefix}.free_tokens",
              rng.normal(0.0, blocks.INIT_STD, size=(n_classes, cfg.dim)))


def multimodal_transformer(modality: TokenSequence, text: TokenSequence,
                           store: ParamStore, prefix: str, cfg: FusionConfig,
                           weights_sink: list | None = None
                           ) -> tuple[TokenSequence, TokenSequence]:
    """Joint self-attention over [modality; text]; split back afterwards."""
    _check_width(modality.tokens, cfg.dim, "multimodal_transformer modality")
    _check_width(text.tokens, cfg.dim, "multimodal_transformer text")
    x = ad.concat_rows(modality.tokens, text.tokens)
    for i in range(cfg.depth):
        x = blocks.transformer_block(store, f"{prefix}.block{i}", x, cfg.heads,
                                     act=cfg.activation, weights_sink=weights_sink)
    mod_out, text_out = ad.split_rows(x, modality.n_tokens)
    return (TokenSequence(mod_out, modality.modality),
            TokenSequence(text_out, "text"))


def fuse_vision_event(fv: TokenSequence, fe: TokenSequence, store: ParamStore,
                      prefix: str, cfg: FusionConfig,
                      weights_sink: list | None = None) -> TokenSequence:
    """Residual self-attention over the concatenated vision+event tokens.
    No positional encodings are added here, so the block is
    permutation-equivariant over its input rows."""
    _check_width(fv.tokens, cfg.dim, "fuse_vision_event vision")
    _check_width(fe.tokens, cfg.dim, "fuse_vision_event event")
    x = ad.concat_rows(fv.tokens, fe.tokens)
    out = blocks.attention_only_block(store, prefix, x, cfg.heads,
                                      weights_sink=weights_sink)
    return TokenSequence(out, "vision")


def cross_attention(text: TokenSequence, fused: TokenSequence, store: ParamStore,
                    prefix: str, cfg: FusionConfig,
                    weights_sink: list | None = None) -> TokenSequence:
    """Text tokens query the fused tokens; one output row per class,
    with a residual connection from the text query."""
    _check_width(text.tokens, cfg.dim, "cross_attention text")
    _check_width(fused.tokens, cfg.dim, "cross_attention fused")
    q = blocks.linear(store, f"{prefix}.wq", text.tokens)
    k = blocks.linear(store, f"{prefix}.wk", fused.tokens)
    v = blocks.linear(store, f"{prefix}.wv", fused.tokens)
    attended = ad.scaled_dot_attention(q, k, v, weights_sink=weights_sink)
    return TokenSequence(ad.add(text.tokens, attended), "text")


def classify(fused: TokenSequence, ca_vt: TokenSequence, ca_et: TokenSequence,
             store: ParamStore, prefix: str, cfg: FusionConfig,
             weights_sink: list | None = None) -> tuple[Tensor, Tensor]:
    """Concatenate the three streams, run the final self-attention block,
    mean-pool, and apply the single FC classifier.

    Returns (logits of shape (1, L), pooled pre-classifier feature)."""
    x = ad.concat_rows(fused.tokens, ca_vt.tokens, ca_et.tokens)
    x = blocks.attention_only_block(store, f"{prefix}.final", x, cfg.heads,
                                    weights_sink=weights_sink)
    pooled = ad.mean_rows(x)
    logits = blocks.linear(store, f"{prefix}.clf", pooled)
    return logits, pooled


@dataclass
class ModelConfig:
    rgb: EncoderConfig = field(default_factory=EncoderConfig)
    event: EncoderConfig = field(default_factory=EncoderConfig)
    text: TextConfig = field(default_factory=TextConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    labels: list[str] = field(default_factory=list)
    template: PromptTemplate = field(default_factory=lambda: PromptTemplate("NONE"))

    def __post_init__(self):
        dims = {self.rgb.dim, self.event.dim, self.text.dim, self.fusion.dim}
        if len(dims) != 1:
            raise ContractError(f"all branch widths must agree, got {dims}")
        if len(self.labels) < 2:
            raise ContractError("need at least 2 class labels")
        if len(set(self.labels)) != len(self.labels):
            raise ContractError("class labels must be distinct")

    @property
    def n_classes(self) -> int:
        return len(self.labels)


class Model:
    """All parameters plus the end-to-end forward pass."""

    def __init__(self, cfg: ModelConfig, seed: int):
        from .encoders import init_encoder_params
        from .text import init_text_params

        self.cfg = cfg
        prompts = [render_prompt(cfg.template, lb) for lb in cfg.labels]
        self.vocab = Vocabulary.build(prompts)
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        init_encoder_params(self.store, "rgb", cfg.rgb, rng)
        init_encoder_params(self.store, "event", cfg.event, rng)
        init_text_params(self.store, "text", cfg.text, self.vocab, rng)
        init_fusion_params(self.store, "fusion", cfg.fusion, cfg.n_classes, rng)

    # -- forward stages --------------------------------------------------

    def encode_sample(self, sample: Sample,
                      weights_sink: list | None = None) -> tuple[Tensor, Tensor]:
        """Encode a sample's RGB clip and stacked event frames; each branch's
        per-frame token sequences are concatenated along the token axis."""
        w, h = sample.events.resolution
        ev_frames = stack_events(sample.events, sample.clip.timestamps, (w, h))
        rgb_seqs = encode_clip(sample.clip, self.cfg.rgb, self.store, "rgb",
                               weights_sink=weights_sink)
        ev_seqs = encode_clip(ev_frames, self.cfg.event, self.store, "event",
                              weights_sink=weights_sink)
        fv = ad.concat_rows(*[s.tokens for s in rgb_seqs])
        fe = ad.concat_rows(*[s.tokens for s in ev_seqs])
        return fv, fe

    def text_tokens(self, switches: AblationSwitches,
                    weights_sink: list | None = None) -> Tensor:
        """Per-class text tokens; with sci off, semantics-free learned
        tokens of identical shape stand in."""
        if not switches.sci:
            return self.store["fusion.free_tokens"]
        return encode_labels(self.cfg.labels, self.cfg.template, self.cfg.text,
                             self.vocab, self.store, "text",
                             weights_sink=weights_sink).tokens

    def head(self, fv: Tensor, fe: Tensor, ft: Tensor,
             switches: AblationSwitches,
             weights_sink: list | None = None) -> tuple[Tensor, Tensor]:
        """Fusion stages from encoded tokens to (logits, pooled feature)."""
        cfg = self.cfg.fusion
        seq_v = TokenSequence(fv, "vision")
        seq_e = TokenSequence(fe, "event")
        seq_t = TokenSequence(ft, "text")

        if switches.mt:
            seq_v, text_vt = multimodal_transformer(
                seq_v, seq_t, self.store, "fusion.mt_vt", cfg, weights_sink)
            seq_e, text_et = multimodal_transformer(
                seq_e, seq_t, self.store, "fusion.mt_et", cfg, weights_sink)
        else:
            text_vt = text_et = seq_t

        if switches.sa:
            fused = fuse_vision_event(seq_v, seq_e, self.store, "fusion.sa_ve",
                                      cfg, weights_sink)
        else:
            fused = TokenSequence(ad.concat_rows(seq_v.tokens, seq_e.tokens),
                                  "vision")

        if switches.ca:
            ca_vt = cross_attention(text_vt, fused, self.store, "fusion.ca_vt",
                                    cfg, weights_sink)
            ca_et = cross_attention(text_et, fused, self.store, "fusion.ca_et",
                                    cfg, weights_sink)
        else:
            ca_vt, ca_et = text_vt, text_et

        return classify(fused, ca_vt, ca_et, self.store, "fusion", cfg,
                        weights_sink)

    def forward(self, sample: Sample, switches: AblationSwitches | None = None,
                weights_sink: list | None = None) -> Tensor:
        """Full pipeline: sample -> class logits of shape (1, L)."""
        switches = switches or AblationSwitches()
        fv, fe = self.encode_sample(sample, weights_sink)
        ft = self.text_tokens(switches, weights_sink)
        logits, _ = self.head(fv, fe, ft, switches, weights_sink)
        return logits
