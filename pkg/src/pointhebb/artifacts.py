"""Versioned npz checkpoints and small CSV helpers shared by the stages."""

from __future__ import annotations

import csv
import json
from typing import Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file missing, wrong kind, or wrong format version."""


def save_checkpoint(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    header = {"format_version": FORMAT_VERSION, "kind": kind, **meta}
    np.savez(path, __meta__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path, expected_kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path) as data:
            if "__meta__" not in data:
                raise CheckpointError(f"{path}: not a checkpoint (no metadata)")
            meta = json.loads(bytes(data["__meta__"]).decode())
            arrays = {k: data[k] for k in data.files if k != "__meta__"}
    except FileNotFoundError:
        raise CheckpointError(f"{path}: checkpoint not found") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {meta.get('format_version')} != {FORMAT_VERSION}"
        )
    if meta.get("kind") != expected_kind:
        raise CheckpointError(f"{path}: kind {meta.get('kind')!r}, expected {expected_kind!r}")
    return meta, arrays


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
