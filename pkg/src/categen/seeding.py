"""Deterministic seed derivation: one root seed, stable per-purpose streams."""
from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(root_seed: int, label: str) -> int:
    """Stable 63-bit seed for a named consumer of the root seed."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def numpy_rng(root_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, label))


def torch_generator(root_seed: int, label: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(root_seed, label))
    return gen
