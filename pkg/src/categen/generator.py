"""Sequence-to-sequence generator: feature encoder, category encoder, and a
relational-memory decoder emitting temperature-relaxed word distributions."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .corpus import BOS_ID, PAD_ID, Batch
from .layers import SinusoidalPositionalEncoding, encoder_stack, init_small, masked_mean, run_encoder

GUMBEL_EPS = 1e-10


@dataclass
class GeneratorConfig:
    vocab_size: int
    n_categories: int
    max_len: int
    embed_dim: int = 64
    cat_embed_dim: int = 32
    n_encoder_layers: int = 2
    n_attn_heads: int = 2
    attn_hidden: int = 64
    ffn_hidden: int = 256
    rmc_slots: int = 2
    rmc_heads: int = 2
    rmc_head_size: int = 256
    noise_dim: int = 64

    @property
    def slot_dim(self) -> int:
        return self.rmc_heads * self.rmc_head_size

    def validate(self) -> None:
        dims = (
            self.vocab_size, self.n_categories, self.max_len, self.embed_dim,
            self.cat_embed_dim, self.n_encoder_layers, self.n_attn_heads,
            self.attn_hidden, self.ffn_hidden, self.rmc_slots, self.rmc_heads,
            self.rmc_head_size, self.noise_dim,
        )
        if any(d < 1 for d in dims):
            raise ValueError("all generator dimensions must be >= 1")
        if self.attn_hidden % self.n_attn_heads:
            raise ValueError("attn_hidden must be divisible by n_attn_heads")
        if self.attn_hidden != self.embed_dim:
            raise ValueError("attn_hidden must equal embed_dim (attention runs at embedding width)")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the four special tokens")
        if self.max_len < 3:
            raise ValueError("max_len must be >= 3")


@dataclass
class TemperatureSchedule:
    """Inverse temperature for the relaxed output; grows toward near-discrete rows."""

    kind: str = "exponential"
    start: float = 1.0
    end: float = 100.0
    horizon: int = 1

    def validate(self) -> None:
        if self.kind not in ("constant", "exponential"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.start <= 0 or self.end <= 0:
            raise ValueError("inverse temperature must stay positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def beta_at(self, step: int) -> float:
        self.validate()
        if self.kind == "constant":
            return self.start
        frac = min(max(step, 0), self.horizon) / self.horizon
        return self.start * (self.end / self.start) ** frac


@dataclass
class GenerationContext:
    """Conditioning for one generated batch: source sentences, target categories, noise."""

    src: Batch
    categories: torch.Tensor   # B, long, values < n_categories
    noise: torch.Tensor        # B x noise_dim

    @property
    def size(self) -> int:
        return self.src.size


def sample_gumbel(
    shape,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
    device=None,
) -> torch.Tensor:
    """g = -log(-log(U)) with U clamped away from both endpoints of (0, 1)."""
    u = torch.rand(shape, generator=generator, dtype=dtype, device=device)
    u = u.clamp(GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return -torch.log(-torch.log(u))


def gumbel_softmax(logits: torch.Tensor, beta: float, noise: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax of beta * (logits + noise); differentiable in the logits."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not torch.isfinite(logits).all():
        raise ValueError("logits must be finite")
    return F.softmax(beta * (logits + noise), dim=-1)


class RelationalMemory(nn.Module):
    """Multi-slot memory updated by attention over [slots; projected input] with
    LSTM-style input/forget gating."""

    def __init__(self, input_dim: int, slots: int, heads: int, head_size: int):
        super().__init__()
        self.slots = slots
        self.slot_dim = heads * head_size
        self.input_proj = nn.Linear(input_dim, self.slot_dim)
        self.attention = nn.MultiheadAttention(self.slot_dim, heads, batch_first=True)
        self.norm_attn = nn.LayerNorm(self.slot_dim)
        self.mlp = nn.Sequential(
            nn.Linear(self.slot_dim, self.slot_dim),
            nn.ReLU(),
            nn.Linear(self.slot_dim, self.slot_dim),
        )
        self.norm_mlp = nn.LayerNorm(self.slot_dim)
        self.gate_input = nn.Linear(self.slot_dim, 2 * self.slot_dim)
        self.gate_memory = nn.Linear(self.slot_dim, 2 * self.slot_dim, bias=False)

    def step(self, memory: torch.Tensor, inputs: torch.Tensor) -> torch.Tensor:
        """memory: B x slots x slot_dim, inputs: B x input_dim -> next memory."""
        x = self.input_proj(inputs).unsqueeze(1)
        keys = torch.cat([memory, x], dim=1)
        attended, _ = self.attention(memory, keys, keys, need_weights=False)
        candidate = self.norm_attn(memory + attended)
        candidate = self.norm_mlp(candidate + self.mlp(candidate))
        gates = self.gate_input(x) + self.gate_memory(torch.tanh(memory))
        input_gate, forget_gate = gates.chunk(2, dim=-1)
        return torch.sigmoid(forget_gate) * memory + torch.sigmoid(input_gate) * torch.tanh(candidate)


class Generator(nn.Module):
    """Conditioned decoder over a shared word-embedding table.

    The same embedding weights serve three paths: the feature encoder's token
    embedding, discrete token feedback, and relaxed-row feedback (row times table).
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config
        self.embedding = nn.Embedding(c.vocab_size, c.embed_dim)
        self.positional = SinusoidalPositionalEncoding(c.embed_dim, c.max_len)
        self.feat_layers = encoder_stack(c.embed_dim, c.n_attn_heads, c.ffn_hidden, c.n_encoder_layers)
        self.cat_embedding = nn.Embedding(c.n_categories, c.cat_embed_dim)
        self.memory_proj = nn.Linear(c.noise_dim, c.rmc_slots * c.slot_dim)
        self.memory_bias = nn.Parameter(torch.zeros(c.rmc_slots, c.slot_dim))
        self.rmc = RelationalMemory(2 * c.embed_dim + c.cat_embed_dim, c.rmc_slots, c.rmc_heads, c.rmc_head_size)
        self.out_proj = nn.Linear(c.rmc_slots * c.slot_dim, c.vocab_size)
        init_small(self)
        with torch.no_grad():
            self.memory_bias.normal_(std=0.02)

    # --- encoders -----------------------------------------------------------

    def feat_encode(self, src_ids: torch.Tensor) -> torch.Tensor:
        """Encode conditioned sentences into one vector each, ignoring PAD positions."""
        pad_mask = src_ids.eq(PAD_ID)
        h = self.positional(self.embedding(src_ids))
        h = run_encoder(self.feat_layers, h, pad_mask)
        return masked_mean(h, pad_mask)

    def cat_encode(self, categories: torch.Tensor) -> torch.Tensor:
        categories = torch.as_tensor(categories, dtype=torch.long)
        if categories.numel() and int(categories.max()) >= self.config.n_categories:
            raise ValueError(f"category id out of range [0, {self.config.n_categories})")
        if categories.numel() and int(categories.min()) < 0:
            raise ValueError("category ids must be non-negative")
        return self.cat_embedding(categories)

    # --- decoder ------------------------------------------------------------

    def init_state(self, noise: torch.Tensor) -> torch.Tensor:
        """Project noise to the memory slots and add the learned per-slot bias."""
        c = self.config
        memory = self.memory_proj(noise).view(-1, c.rmc_slots, c.slot_dim)
        return memory + self.memory_bias

    def rmc_step(self, memory: torch.Tensor, step_input: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """One decode step: new memory plus unnormalized output logits over the vocabulary."""
        next_memory = self.rmc.step(memory, step_input)
        logits = self.out_proj(next_memory.flatten(1))
        return next_memory, logits

    def _conditioning(self, ctx: GenerationContext) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        feat = self.feat_encode(ctx.src.ids)
        cat = self.cat_encode(ctx.categories)
        memory = self.init_state(ctx.noise.to(feat.dtype))
        return feat, cat, memory

    def _bos_embedding(self, batch_size: int, dtype: torch.dtype) -> torch.Tensor:
        return self.embedding.weight[BOS_ID].to(dtype).unsqueeze(0).expand(batch_size, -1)

    def generate_relaxed(
        self,
        ctx: GenerationContext,
        beta: float,
        gumbel_noise: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Emit max_len relaxed rows; each feeds back as its soft embedding.

        `gumbel_noise` (B x T x V) can be supplied to pin the randomness, e.g.
        for gradient checks; otherwise it is drawn internally.
        """
        feat, cat, memory = self._conditioning(ctx)
        batch = ctx.size
        prev = self._bos_embedding(batch, feat.dtype)
        rows = []
        for t in range(self.config.max_len):
            memory, logits = self.rmc_step(memory, torch.cat([feat, prev, cat], dim=-1))
            if gumbel_noise is None:
                g = sample_gumbel(logits.shape, generator=generator, dtype=logits.dtype)
            else:
                g = gumbel_noise[:, t].to(logits.dtype)
            row = gumbel_softmax(logits, beta, g)
            prev = row @ self.embedding.weight
            rows.append(row)
        return torch.stack(rows, dim=1)

    def generate_discrete(
        self,
        ctx: GenerationContext,
        mode: str = "sample",
        generator: torch.Generator | None = None,
        return_log_probs: bool = False,
    ):
        """Commit a hard token per step (multinomial or argmax) and feed it back.

        With `return_log_probs`, also returns log softmax(o_t)[chosen] per step.
        """
        if mode not in ("sample", "argmax"):
            raise ValueError(f"unknown mode {mode!r}")
        with torch.no_grad():
            feat, cat, memory = self._conditioning(ctx)
            batch = ctx.size
            prev = self._bos_embedding(batch, feat.dtype)
            ids, log_probs = [], []
            for _ in range(self.config.max_len):
                memory, logits = self.rmc_step(memory, torch.cat([feat, prev, cat], dim=-1))
                log_p = F.log_softmax(logits, dim=-1)
                if mode == "sample":
                    chosen = torch.multinomial(log_p.exp(), 1, generator=generator).squeeze(-1)
                else:
                    chosen = logits.argmax(dim=-1)
                ids.append(chosen)
                log_probs.append(log_p.gather(-1, chosen.unsqueeze(-1)).squeeze(-1))
                prev = self.embedding(chosen)
            ids = torch.stack(ids, dim=1)
            if return_log_probs:
                return ids, torch.stack(log_probs, dim=1)
            return ids

    def teacher_forced_logits(
        self,
        target_ids: torch.Tensor,
        src_ids: torch.Tensor,
        categories: torch.Tensor,
        noise: torch.Tensor,
    ) -> torch.Tensor:
        """Next-word logits with ground-truth feedback: B x (T-1) x V."""
        feat = self.feat_encode(src_ids)
        cat = self.cat_encode(categories)
        memory = self.init_state(noise.to(feat.dtype))
        prev_embeds = self.embedding(target_ids[:, :-1])
        logits = []
        for t in range(target_ids.shape[1] - 1):
            memory, step_logits = self.rmc_step(memory, torch.cat([feat, prev_embeds[:, t], cat], dim=-1))
            logits.append(step_logits)
        return torch.stack(logits, dim=1)
