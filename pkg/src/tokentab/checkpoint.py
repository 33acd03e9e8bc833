"""Versioned binary checkpoint container.

Layout: 4-byte magic, little-endian uint32 format version, little-endian
uint64 header length, UTF-8 JSON header, then the raw float64
little-endian bytes of every parameter in header order. The header records
parameter names, shapes and frozen flags, the model configuration, and the
bound feature schema and normalization statistics when present. Identical
model state always serializes to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import NormalizationStats
from .model import InContextClassifier, ModelConfig
from .tokenizer import CategoricalTokenTable, Column, FeatureSchema, FeatureTokenizer
from .autodiff import Tensor

MAGIC = b"TTCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint of a supported version."""


def _schema_to_dict(schema: FeatureSchema) -> dict:
    return {
        "columns": [
            {"name": c.name, "kind": c.kind, "vocabulary": list(c.vocabulary)}
            for c in schema.columns
        ]
    }


def _schema_from_dict(obj: dict) -> FeatureSchema:
    return FeatureSchema(tuple(
        Column(c["name"], c["kind"], tuple(c["vocabulary"]))
        for c in obj["columns"]
    ))


@dataclass
class Checkpoint:
    kind: str
    model_config: dict
    table_sizes: tuple[int, ...]
    arrays: dict[str, np.ndarray]
    flags: dict[str, bool]
    schema: FeatureSchema | None
    stats: NormalizationStats | None
    label_names: tuple[str, ...] | None
    extra: dict


def save_checkpoint(path, model: InContextClassifier, kind: str,
                    schema: FeatureSchema | None = None,
                    stats: NormalizationStats | None = None,
                    label_names=None, extra: dict | None = None) -> None:
    named = model.named_tensors()
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "model_config": model.config.to_dict(),
        "table_sizes": list(model.tokenizer.table.sizes),
        "params": [
            {"name": n, "shape": list(t.shape), "requires_grad": t.requires_grad}
            for n, t in named
        ],
        "schema": _schema_to_dict(schema) if schema is not None else None,
        "stats": ({"means": list(stats.means), "stds": list(stats.stds)}
                  if stats is not None else None),
        "label_names": list(label_names) if label_names is not None else None,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    arrays: dict[str, np.ndarray] = {}
    flags: dict[str, bool] = {}
    pos = 16 + header_len
    for meta in header["params"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated parameter {meta['name']}")
        arr = np.frombuffer(blob[pos:pos + nbytes], dtype="<f8").reshape(shape)
        arrays[meta["name"]] = np.ascontiguousarray(arr, dtype=np.float64)
        flags[meta["name"]] = bool(meta["requires_grad"])
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    schema = (_schema_from_dict(header["schema"])
              if header.get("schema") is not None else None)
    stats = None
    if header.get("stats") is not None:
        stats = NormalizationStats(tuple(header["stats"]["means"]),
                                   tuple(header["stats"]["stds"]))
    label_names = (tuple(header["label_names"])
                   if header.get("label_names") is not None else None)
    return Checkpoint(
        kind=header["kind"],
        model_config=header["model_config"],
        table_sizes=tuple(header["table_sizes"]),
        arrays=arrays,
        flags=flags,
        schema=schema,
        stats=stats,
        label_names=label_names,
        extra=header.get("extra", {}),
    )


def rebuild_model(ckpt: Checkpoint) -> InContextClassifier:
    """Reconstruct the model with the stored parameters and frozen flags."""
    config = ModelConfig(**ckpt.model_config)
    w_num = Tensor(ckpt.arrays["tokenizer.w_num"].copy(),
                   requires_grad=ckpt.flags["tokenizer.w_num"])
    table = CategoricalTokenTable.create(ckpt.table_sizes, config.embed_dim,
                                         np.random.default_rng(0))
    table.weights.data[...] = ckpt.arrays["tokenizer.table"]
    table.weights.requires_grad = ckpt.flags["tokenizer.table"]
    identifiers = None
    if "tokenizer.identifiers" in ckpt.arrays:
        identifiers = Tensor(ckpt.arrays["tokenizer.identifiers"].copy(),
                             requires_grad=ckpt.flags["tokenizer.identifiers"])
    tokenizer = FeatureTokenizer(w_num, table, identifiers)
    model = InContextClassifier.create(config, tokenizer,
                                       np.random.default_rng(0))
    for name, t in model.backbone_tensors():
        t.data[...] = ckpt.arrays[name]
        t.requires_grad = ckpt.flags[name]
    return model
