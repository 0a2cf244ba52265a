"""Checkpoints: a text manifest of ordered ``name shape`` lines next to a
binary file of concatenated tensor records, one per manifest line."""

from __future__ import annotations

import os

import numpy as np

from .errors import ContractError
from .tensor import load_tensors, save_tensors

MANIFEST_HEADER = "# rdcnet checkpoint v1"


def manifest_path(path) -> str:
    root, _ = os.path.splitext(str(path))
    return root + ".manifest"


def _shape_text(shape) -> str:
    return "x".join(str(s) for s in shape) if len(shape) else "scalar"


def _parse_shape(text) -> tuple:
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def save_checkpoint(network, path) -> None:
    state = network.state()
    save_tensors(path, [arr for _, arr in state])
    lines = [MANIFEST_HEADER] + [f"{name} {_shape_text(np.shape(arr))}" for name, arr in state]
    with open(manifest_path(path), "w") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path) -> list:
    """``[(name, shape)]`` from the manifest belonging to checkpoint ``path``."""
    entries = []
    with open(manifest_path(path)) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                name, shape = line.split()
                entries.append((name, _parse_shape(shape)))
            except ValueError:
                raise ContractError(f"{manifest_path(path)} line {lineno}: "
                                    f"malformed entry {line!r}") from None
    return entries


def load_checkpoint(network, path) -> None:
    """Restore ``network`` in place.

    Raises ``ValueError`` naming the first parameter whose name or shape
    differs between the manifest and the network.
    """
    entries = read_manifest(path)
    tensors = load_tensors(path)
    if len(tensors) != len(entries):
        raise ContractError(f"manifest lists {len(entries)} tensors, "
                            f"checkpoint holds {len(tensors)}")
    for (name, shape), t in zip(entries, tensors):
        if tuple(t.shape) != shape:
            raise ContractError(f"record for {name!r} has shape {t.shape}, manifest says {shape}")
    network.load_state([(name, t.data) for (name, _), t in zip(entries, tensors)])
