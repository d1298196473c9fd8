"""Single-file checkpoint archive: JSON metadata plus named raw arrays.

The format is byte-deterministic for identical contents, which is what lets
seeded runs produce identical checkpoint files. Arrays round-trip bit-exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

MAGIC = b"CATEGEN-CKPT"
VERSION = 1


def save_archive(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
             "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"version": VERSION, "meta": meta, "arrays": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(f"{len(header)}\n".encode())
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_archive(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.readline().rstrip(b"\n") != MAGIC:
            raise ValueError(f"{path}: not a checkpoint archive")
        header_len = int(fh.readline())
        header = json.loads(fh.read(header_len))
        if header["version"] != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
        body = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return header["meta"], arrays


def module_arrays(module: nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}/{name}": tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }


def load_module_arrays(module: nn.Module, arrays: dict[str, np.ndarray], prefix: str) -> None:
    state = {}
    head = f"{prefix}/"
    for name, arr in arrays.items():
        if name.startswith(head):
            state[name[len(head):]] = torch.from_numpy(arr.copy())
    module.load_state_dict(state)


def optimizer_arrays(optimizer: torch.optim.Optimizer, prefix: str) -> dict[str, np.ndarray]:
    """Flatten Adam moments (and step counters) into named arrays, by parameter index."""
    state_dict = optimizer.state_dict()
    out = {}
    for param_id, state in state_dict["state"].items():
        for key, value in state.items():
            tensor = value if torch.is_tensor(value) else torch.tensor(value)
            out[f"{prefix}/{param_id}/{key}"] = tensor.detach().cpu().numpy()
    return out


def load_optimizer_arrays(
    optimizer: torch.optim.Optimizer, arrays: dict[str, np.ndarray], prefix: str
) -> None:
    state_dict = optimizer.state_dict()
    state: dict[int, dict] = {}
    head = f"{prefix}/"
    for name, arr in arrays.items():
        if not name.startswith(head):
            continue
        param_id, key = name[len(head):].split("/", 1)
        state.setdefault(int(param_id), {})[key] = torch.from_numpy(arr.copy())
    state_dict["state"] = state
    optimizer.load_state_dict(state_dict)
