"""Shared network pieces: positional encoding, encoder stacks, small-weight init."""
from __future__ import annotations

import math

import torch
from torch import nn


class SinusoidalPositionalEncoding(nn.Module):
    """Fixed sine/cosine position table added to token embeddings."""

    def __init__(self, d_model: int, max_len: int):
        super().__init__()
        position = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
        div_term = torch.exp(
            torch.arange(0, d_model, 2, dtype=torch.float32) * (-math.log(10000.0) / d_model)
        )
        table = torch.zeros(max_len, d_model)
        table[:, 0::2] = torch.sin(position * div_term)
        table[:, 1::2] = torch.cos(position * div_term[: d_model // 2])
        # recomputed at construction, so keep it out of checkpoints
        self.register_buffer("table", table, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.table[: x.shape[1]].to(x.dtype)


def encoder_stack(d_model: int, n_heads: int, ffn_hidden: int, n_layers: int) -> nn.ModuleList:
    """Post-norm encoder layers: self-attention, add&norm, feed-forward, add&norm."""
    return nn.ModuleList(
        nn.TransformerEncoderLayer(
            d_model=d_model,
            nhead=n_heads,
            dim_feedforward=ffn_hidden,
            dropout=0.0,
            batch_first=True,
            norm_first=False,
        )
        for _ in range(n_layers)
    )


def run_encoder(layers: nn.ModuleList, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
    for layer in layers:
        x = layer(x, src_key_padding_mask=pad_mask)
    return x


def masked_mean(x: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor:
    """Mean over time, ignoring masked positions. x: B x T x D, pad_mask: B x T (True = pad)."""
    if pad_mask is None:
        return x.mean(dim=1)
    keep = (~pad_mask).to(x.dtype).unsqueeze(-1)
    return (x * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)


def init_small(module: nn.Module, std: float = 0.02) -> nn.Module:
    """Small-scale Gaussian init so fresh heads start near-uniform."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, std=std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, std=std)
        elif isinstance(m, nn.MultiheadAttention):
            if m.in_proj_weight is not None:
                nn.init.normal_(m.in_proj_weight, std=std)
            if m.in_proj_bias is not None:
                nn.init.zeros_(m.in_proj_bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return module
