"""Prompt rendering and the per-class text encoding branch.

Each class label is rendered into a sentence via a template, tokenized
against a word-level vocabulary built from the closed label set, run
through a small transformer, mean-pooled over non-PAD positions, and
projected to the fusion width — producing one text token per class.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import blocks
from .autodiff import Tensor
from .encoders import TokenSequence
from .errors import ContractError
from .params import ParamStore

NONE_TEMPLATE = "NONE"
PAD, UNK = 0, 1

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


@dataclass(frozen=True)
class PromptTemplate:
    template: str

    def __post_init__(self):
        if self.template != NONE_TEMPLATE and self.template.count("{}") != 1:
            raise ContractError(
                f"template must contain exactly one {{}} placeholder: {self.template!r}")

    @property
    def is_none(self) -> bool:
        return self.template == NONE_TEMPLATE


def render_prompt(tpl: PromptTemplate, label: str) -> str:
    """Substitute the label into the template; NONE yields the bare label."""
    if not label:
        raise ContractError("label must be non-empty")
    if tpl.is_none:
        return label
    return tpl.template.format(label)


def _words(text: str) -> list[str]:
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]

    @classmethod
    def build(cls, texts: list[str]) -> "Vocabulary":
        mapping = {"<pad>": PAD, "<unk>": UNK}
        for text in texts:
            for word in _words(text):
                if word not in mapping:
                    mapping[word] = len(mapping)
        return cls(mapping)

    def __len__(self):
        return len(self.token_to_id)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """Lowercase, strip punctuation, map words to ids, pad/truncate."""
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    ids = [vocab.token_to_id.get(w, UNK) for w in _words(text)][:max_len]
    return ids + [PAD] * (max_len - len(ids))


@dataclass
class TextConfig:
    dim: int = 64          # internal width and output (fusion) width
    depth: int = 1
    heads: int = 4
    mlp_ratio: float = 4.0
    max_len: int = 12
    activation: str = "gelu"
    frozen: bool = False


def init_text_params(store: ParamStore, prefix: str, cfg: TextConfig,
                     vocab: Vocabulary, rng: np.random.Generator) -> None:
    store.add(f"{prefix}.embed",
              rng.normal(0.0, blocks.INIT_STD, size=(len(vocab), cfg.dim)))
    store.add(f"{prefix}.pos",
              rng.normal(0.0, blocks.INIT_STD, size=(cfg.max_len, cfg.dim)))
    for i in range(cfg.depth):
        blocks.init_transformer_block(store, f"{prefix}.block{i}", cfg.dim,
                                      cfg.mlp_ratio, rng)
    blocks.init_linear(store, f"{prefix}.proj", cfg.dim, cfg.dim, rng)
    if cfg.frozen:
        store.freeze(prefix)


def encode_one_label(label: str, tpl: PromptTemplate, cfg: TextConfig,
                     vocab: Vocabulary, store: ParamStore, prefix: str,
                     weights_sink: list | None = None) -> Tensor:
    """One pooled (1 x dim) text token for a single class label."""
    ids = tokenize(render_prompt(tpl, label), vocab, cfg.max_len)
    real = [i for i in ids if i != PAD]
    n_real = len(real)
    if n_real == 0:
        raise ContractError(f"label {label!r} renders to no tokens")
    # PAD positions are masked out entirely: they enter neither the
    # attention nor the pooled mean, so extra padding cannot leak in
    x = ad.take_rows(store[f"{prefix}.embed"], real)
    x = ad.add(x, ad.slice_rows(store[f"{prefix}.pos"], 0, n_real))
    for i in range(cfg.depth):
        x = blocks.transformer_block(store, f"{prefix}.block{i}", x, cfg.heads,
                                     act=cfg.activation, weights_sink=weights_sink)
    pooled = ad.matmul(Tensor(np.full((1, n_real), 1.0 / n_real)), x)
    return blocks.linear(store, f"{prefix}.proj", pooled)


def encode_labels(labels: list[str], tpl: PromptTemplate, cfg: TextConfig,
                  vocab: Vocabulary, store: ParamStore, prefix: str,
                  weights_sink: list | None = None) -> TokenSequence:
    """Encode every class label into one token; row i = class i."""
    if len(labels) < 2:
        raise ContractError("need at least 2 labels")
    if len(set(labels)) != len(labels):
        raise ContractError("labels must be distinct")
    rows = [encode_one_label(lb, tpl, cfg, vocab, store, prefix,
                             weights_sink=weights_sink) for lb in labels]
    return TokenSequence(ad.concat_rows(*rows), "text")
