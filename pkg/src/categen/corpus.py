"""Tokenized corpora: vocabulary, encoding, padding, one-hot views and batching."""
from __future__ import annotations

import collections
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"

SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


class CorpusError(ValueError):
    """Raised for malformed corpus files or inconsistent category sets."""


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional token/id map. Ids 0..3 are reserved for the special tokens."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < self.size:
            raise ValueError(f"token id {token_id} outside vocabulary of size {self.size}")
        return self.id_to_token[token_id]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def save(self, path: str | Path) -> None:
        """One token per line; the first four lines are the fixed special tokens."""
        lines = list(self.id_to_token)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != SPECIAL_TOKENS:
            raise CorpusError(f"{path}: vocabulary file must start with the special-token header")
        return cls.from_tokens(lines[4:])

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        id_to_token = SPECIAL_TOKENS + tuple(tokens)
        token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
        if len(token_to_id) != len(id_to_token):
            raise CorpusError("duplicate token in vocabulary")
        return cls(token_to_id=token_to_id, id_to_token=id_to_token)


def build_vocabulary(sentences: Sequence[Sequence[str]], min_freq: int = 1) -> Vocabulary:
    """Assign ids >= 4 by descending frequency, ties broken lexicographically."""
    if not sentences:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = collections.Counter()
    for tokens in sentences:
        counts.update(tokens)
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary.from_tokens(kept)


class LabeledSentence(NamedTuple):
    tokens: tuple[str, ...]
    category: int


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> list[int]:
    """[BOS, ids..., EOS, PAD...] of exactly max_len entries; EOS is always present."""
    if max_len < 3:
        raise ValueError("max_len must be >= 3 to fit BOS, one token and EOS")
    body = [vocab.lookup(tok) for tok in tokens[: max_len - 2]]
    ids = [BOS_ID] + body + [EOS_ID]
    ids.extend([PAD_ID] * (max_len - len(ids)))
    return ids


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    """Strip BOS, stop at the first EOS, drop PAD."""
    tokens = []
    for token_id in ids:
        token_id = int(token_id)
        if not 0 <= token_id < vocab.size:
            raise ValueError(f"token id {token_id} outside vocabulary of size {vocab.size}")
        if token_id == EOS_ID:
            break
        if token_id in (BOS_ID, PAD_ID):
            continue
        tokens.append(vocab.id_to_token[token_id])
    return tokens


def one_hot(ids: torch.Tensor, num_classes: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Exact basis-vector rows over the trailing dimension."""
    ids = torch.as_tensor(ids)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= num_classes):
        raise ValueError(f"ids must lie in [0, {num_classes})")
    return torch.nn.functional.one_hot(ids.long(), num_classes).to(dtype)


@dataclass
class Batch:
    """PAD-right-padded id matrix with per-row categories and true lengths."""

    ids: torch.Tensor          # B x T, long
    categories: torch.Tensor   # B, long
    lengths: torch.Tensor      # B, long

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def max_len(self) -> int:
        return self.ids.shape[1]

    def pad_mask(self) -> torch.Tensor:
        return self.ids.eq(PAD_ID)

    def one_hot(self, vocab_size: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return one_hot(self.ids, vocab_size, dtype)


def make_batch(sentences: Sequence[LabeledSentence], vocab: Vocabulary, max_len: int) -> Batch:
    ids = torch.tensor([encode(s.tokens, vocab, max_len) for s in sentences], dtype=torch.long)
    categories = torch.tensor([s.category for s in sentences], dtype=torch.long)
    lengths = torch.tensor([min(len(s.tokens) + 2, max_len) for s in sentences], dtype=torch.long)
    return Batch(ids=ids, categories=categories, lengths=lengths)


@dataclass
class Dataset:
    """Train/valid/test splits sharing one vocabulary built from the training split."""

    train: list[LabeledSentence]
    valid: list[LabeledSentence]
    test: list[LabeledSentence]
    n_categories: int
    max_len: int
    vocab: Vocabulary = field(repr=False)

    def split(self, name: str) -> list[LabeledSentence]:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}") from None


def _read_split(path: str | Path) -> list[LabeledSentence]:
    sentences = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        head, sep, body = line.partition("\t")
        if not sep:
            raise CorpusError(f"{path}:{lineno}: expected '<category><TAB><tokens>'")
        try:
            category = int(head)
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: category {head!r} is not an integer") from None
        if category < 0:
            raise CorpusError(f"{path}:{lineno}: category must be non-negative")
        tokens = tuple(body.split())
        if not tokens:
            raise CorpusError(f"{path}:{lineno}: empty sentence")
        sentences.append(LabeledSentence(tokens=tokens, category=category))
    if not sentences:
        raise CorpusError(f"{path}: no sentences")
    return sentences


def load_dataset(train_path, valid_path, test_path, max_len: int, min_freq: int = 1) -> Dataset:
    """Load the three splits; the vocabulary comes from the training split only."""
    train = _read_split(train_path)
    valid = _read_split(valid_path)
    test = _read_split(test_path)
    seen = {s.category for split in (train, valid, test) for s in split}
    n_categories = max(seen) + 1
    missing = set(range(n_categories)) - seen
    if missing:
        raise CorpusError(f"category ids have gaps: {sorted(missing)} never occur")
    if n_categories < 2:
        raise CorpusError("conditional generation needs at least 2 categories")
    vocab = build_vocabulary([s.tokens for s in train], min_freq=min_freq)
    return Dataset(
        train=train,
        valid=valid,
        test=test,
        n_categories=n_categories,
        max_len=max_len,
        vocab=vocab,
    )


def sample_batch(dataset: Dataset, split: str, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement; deterministic under a fixed rng."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    sentences = dataset.split(split)
    if not sentences:
        raise ValueError(f"split {split!r} is empty")
    idx = rng.integers(0, len(sentences), size=batch_size)
    return make_batch([sentences[i] for i in idx], dataset.vocab, dataset.max_len)
