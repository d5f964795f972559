"""Versioned checkpoint container: config, vocabularies and named
parameter arrays in one file that round-trips bitwise."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .model import GraphToSequenceModel, ModelConfig

MAGIC = b"SQL2TEXT-CKPT/1\n"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    config: dict
    src_tokens: list[str]
    tgt_tokens: list[str]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: GraphToSequenceModel) -> "ModelCheckpoint":
        return cls(
            config=model.config_dict(),
            src_tokens=list(model.src_vocab.tokens),
            tgt_tokens=list(model.tgt_vocab.tokens),
            arrays=model.store.state_arrays(),
        )


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    entries = []
    offset = 0
    for name, arr in ckpt.arrays.items():
        arr = np.ascontiguousarray(arr)
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": arr.nbytes,
            }
        )
        offset += arr.nbytes
    header = {
        "config": ckpt.config,
        "src_vocab": ckpt.src_tokens,
        "tgt_vocab": ckpt.tgt_tokens,
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(header_bytes):012d}\n".encode("ascii"))
        fh.write(header_bytes)
        for arr in ckpt.arrays.values():
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a recognized checkpoint (bad magic)")
    cursor = len(MAGIC)
    try:
        header_len = int(blob[cursor : cursor + 12])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header length") from exc
    cursor += 13  # 12 digits + newline
    try:
        header = json.loads(blob[cursor : cursor + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header JSON") from exc
    cursor += header_len
    payload = blob[cursor:]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']!r}")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=entry["dtype"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return ModelCheckpoint(
        config=header["config"],
        src_tokens=header["src_vocab"],
        tgt_tokens=header["tgt_vocab"],
        arrays=arrays,
    )


def restore_model(ckpt: ModelCheckpoint) -> GraphToSequenceModel:
    """Rebuild a model from a checkpoint; parameter shapes derived from the
    stored config must match the stored arrays exactly.

    The stored config may carry training-only keys; only the model's own
    fields are consumed here.
    """
    names = {f.name for f in dataclasses.fields(ModelConfig)}
    config = ModelConfig(**{k: v for k, v in ckpt.config.items() if k in names})
    model = GraphToSequenceModel(
        Vocabulary(list(ckpt.src_tokens)),
        Vocabulary(list(ckpt.tgt_tokens)),
        config,
    )
    try:
        model.store.load_arrays(ckpt.arrays)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint is inconsistent with its config: {exc}") from exc
    return model
