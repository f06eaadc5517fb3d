"""Compact transformer encoder shared by the text and label streams.

This is a from-scratch, desk-scale stand-in for a pretrained BERT: pre-norm
self-attention blocks with learned absolute position embeddings.  The forward
pass returns the CLS position's hidden state after *every* layer, because the
feature extractor consumes a concatenation of the last several layers rather
than just the top of the stack.  PAD positions are masked out of attention as
keys, so token ids sitting in the padded region can never influence the CLS
outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .corpus import PAD_ID


@dataclass
class EncoderConfig:
    num_layers: int = 10
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    vocab_size: int = 0  # 0 = fill from the dataset at model-build time
    max_input_len: int = 512
    n_text_layers: int | None = None  # default: min(8, num_layers)
    n_label_extra: int | None = None  # default: min(2, num_layers - text_layers)

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.text_layers < 1 or self.text_layers > self.num_layers:
            raise ValueError("n_text_layers must be in 1..num_layers")
        if self.label_extra < 0:
            raise ValueError("n_label_extra must be >= 0")
        if self.text_layers + self.label_extra > self.num_layers:
            raise ValueError("n_text_layers + n_label_extra exceeds num_layers")

    # None in the raw fields means "derive from num_layers"; keeping the raw
    # value unresolved lets a serialized config survive a later num_layers edit.
    @property
    def text_layers(self) -> int:
        return self.n_text_layers if self.n_text_layers is not None else min(8, self.num_layers)

    @property
    def label_extra(self) -> int:
        if self.n_label_extra is not None:
            return self.n_label_extra
        return min(2, self.num_layers - self.text_layers)

    @property
    def n_label_layers(self) -> int:
        return self.text_layers + self.label_extra

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "vocab_size": self.vocab_size,
            "max_input_len": self.max_input_len,
            "n_text_layers": self.n_text_layers,
            "n_label_extra": self.n_label_extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, hidden_dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = hidden_dim // num_heads
        self.qkv = nn.Linear(hidden_dim, 3 * hidden_dim)
        self.out = nn.Linear(hidden_dim, hidden_dim)
        self.last_weights: Tensor | None = None  # populated when keep_weights

    def forward(self, x: Tensor, mask: Tensor, keep_weights: bool = False) -> Tensor:
        b, t, h = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        # mask: (b, t) True = real token; masked keys get zero attention
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        if keep_weights:
            self.last_weights = weights.detach()
        ctx = (weights @ v).transpose(1, 2).reshape(b, t, h)
        return self.out(ctx)


class EncoderLayer(nn.Module):
    """Pre-norm block: x + attn(LN(x)), then x + ffn(LN(x))."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.hidden_dim)
        self.attn = MultiHeadSelfAttention(cfg.hidden_dim, cfg.num_heads)
        self.ln2 = nn.LayerNorm(cfg.hidden_dim)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.hidden_dim, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.hidden_dim),
        )

    def forward(self, x: Tensor, mask: Tensor, keep_weights: bool = False) -> Tensor:
        x = x + self.attn(self.ln1(x), mask, keep_weights=keep_weights)
        return x + self.ffn(self.ln2(x))


class TransformerEncoder(nn.Module):
    """Returns the per-layer CLS states, shape (batch, num_layers, hidden)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        if cfg.vocab_size < 3:
            raise ValueError(f"vocab_size must cover the reserved ids, got {cfg.vocab_size}")
        self.cfg = cfg
        self.token_emb = nn.Embedding(cfg.vocab_size, cfg.hidden_dim)
        self.pos_emb = nn.Embedding(cfg.max_input_len, cfg.hidden_dim)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.keep_attention = False
        self.attention_weights: list[Tensor] = []
        nn.init.normal_(self.token_emb.weight, std=0.02)
        nn.init.normal_(self.pos_emb.weight, std=0.02)

    def forward(self, tokens: Tensor, mask: Tensor | None = None) -> Tensor:
        squeeze = tokens.dim() == 1
        if squeeze:
            tokens = tokens.unsqueeze(0)
            if mask is not None:
                mask = mask.unsqueeze(0)
        if tokens.dtype != torch.long:
            tokens = tokens.long()
        b, t = tokens.shape
        if t > self.cfg.max_input_len:
            raise ValueError(f"sequence length {t} exceeds max_input_len {self.cfg.max_input_len}")
        max_id = int(tokens.max())
        if max_id >= self.cfg.vocab_size:
            raise ValueError(f"token id {max_id} out of range for vocab_size {self.cfg.vocab_size}")
        if mask is None:
            mask = tokens != PAD_ID
        mask = mask.bool()

        positions = torch.arange(t, device=tokens.device)
        x = self.token_emb(tokens) + self.pos_emb(positions)[None, :, :]
        cls_rows = []
        if self.keep_attention:
            self.attention_weights = []
        for layer in self.layers:
            x = layer(x, mask, keep_weights=self.keep_attention)
            if self.keep_attention:
                self.attention_weights.append(layer.attn.last_weights)
            cls_rows.append(x[:, 0, :])
        out = torch.stack(cls_rows, dim=1)  # (b, num_layers, hidden)
        return out.squeeze(0) if squeeze else out


def concat_cls(cls: Tensor, n_layers: int) -> Tensor:
    """Concatenate the last ``n_layers`` CLS rows, deepest layer last.

    Accepts (num_layers, H) or batched (B, num_layers, H) input.
    """
    total = cls.shape[-2]
    if n_layers > total:
        raise ValueError(f"asked for {n_layers} layers but only {total} available")
    tail = cls[..., total - n_layers:, :]
    return tail.reshape(*cls.shape[:-2], n_layers * cls.shape[-1])
