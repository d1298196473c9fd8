"""Dual-head discriminator: an authenticity score and a category distribution,
computed from one-hot or relaxed continuous sentence rows."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .layers import SinusoidalPositionalEncoding, encoder_stack, init_small, run_encoder


@dataclass
class DiscriminatorConfig:
    vocab_size: int
    n_categories: int
    max_len: int
    embed_dim: int = 64
    n_encoder_layers: int = 2
    n_attn_heads: int = 2
    attn_hidden: int = 64
    ffn_hidden: int = 256
    gradient_penalty: float = 0.0   # weight; 0 disables the optional penalty term

    def validate(self) -> None:
        dims = (
            self.vocab_size, self.n_categories, self.max_len, self.embed_dim,
            self.n_encoder_layers, self.n_attn_heads, self.attn_hidden, self.ffn_hidden,
        )
        if any(d < 1 for d in dims):
            raise ValueError("all discriminator dimensions must be >= 1")
        if self.attn_hidden % self.n_attn_heads:
            raise ValueError("attn_hidden must be divisible by n_attn_heads")
        if self.attn_hidden != self.embed_dim:
            raise ValueError("attn_hidden must equal embed_dim (attention runs at embedding width)")
        if self.gradient_penalty < 0:
            raise ValueError("gradient_penalty weight must be >= 0")


@dataclass
class DiscriminatorOutput:
    d_real: torch.Tensor   # B, sigmoid authenticity scores
    d_cls: torch.Tensor    # B x k, rows on the probability simplex


class Discriminator(nn.Module):
    """Word embedding as a bias-free linear map, encoder stack, mean pool, two heads."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config
        self.embedding = nn.Embedding(c.vocab_size, c.embed_dim)
        self.positional = SinusoidalPositionalEncoding(c.embed_dim, c.max_len)
        self.layers = encoder_stack(c.embed_dim, c.n_attn_heads, c.ffn_hidden, c.n_encoder_layers)
        self.real_head = nn.Linear(c.embed_dim, 1)
        self.cls_head = nn.Linear(c.embed_dim, c.n_categories)
        init_small(self)

    def embed_continuous(self, x: torch.Tensor) -> torch.Tensor:
        """Multiply probability rows with the embedding table; exact lookup on one-hot rows."""
        if (x < 0).any():
            raise ValueError("sentence rows must be non-negative")
        return x @ self.embedding.weight.to(x.dtype)

    def _heads(self, h: torch.Tensor) -> DiscriminatorOutput:
        h = self.positional(h)
        h = run_encoder(self.layers, h)
        pooled = h.mean(dim=1)
        d_real = torch.sigmoid(self.real_head(pooled)).squeeze(-1)
        d_cls = F.softmax(self.cls_head(pooled), dim=-1)
        return DiscriminatorOutput(d_real=d_real, d_cls=d_cls)

    def discriminate(self, x: torch.Tensor) -> DiscriminatorOutput:
        """x: B x T x V one-hot or relaxed rows."""
        return self._heads(self.embed_continuous(x))

    def discriminate_ids(self, ids: torch.Tensor) -> DiscriminatorOutput:
        """Discrete path through table lookup; identical computation for one-hot inputs."""
        return self._heads(self.embedding(ids))

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        return self.discriminate(x)


def gradient_penalty(
    disc: Discriminator,
    real: torch.Tensor,
    fake: torch.Tensor,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Unit-gradient-norm penalty on random interpolates of real and fake rows."""
    eps = torch.rand(real.shape[0], 1, 1, generator=generator, dtype=real.dtype)
    mixed = (eps * real + (1.0 - eps) * fake).detach().requires_grad_(True)
    score = disc.discriminate(mixed).d_real.sum()
    (grad,) = torch.autograd.grad(score, mixed, create_graph=True)
    norms = grad.flatten(1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()
