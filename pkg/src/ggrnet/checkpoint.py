"""Self-describing versioned binary checkpoints.

Layout: 8-byte magic, little-endian uint32 format version, uint64 header
length, a canonical JSON header (model config, vocabulary, target +
normalizer, tensor manifest), then the raw little-endian float64 buffers in
manifest order. Serialization is canonical (sorted keys, no whitespace, no
timestamps), so save -> load -> save reproduces the file byte for byte.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Normalizer
from .errors import CheckpointError
from .model import ModelConfig, ModelParams

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

_MAGIC = b"GGRNETCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    vocabulary: list[str]
    normalizer: Normalizer
    target_property: str
    unit: str = ""

    @property
    def max_atom_count(self) -> int:
        return self.params.max_atom_count


def save_checkpoint(path, params: ModelParams, config: ModelConfig, vocabulary,
                    normalizer: Normalizer, target_property: str, unit: str = "") -> None:
    named = params.named()
    header = {
        "config": dataclasses.asdict(config),
        "vocabulary": list(vocabulary),
        "max_atom_count": params.max_atom_count,
        "target": {"property": target_property, "unit": unit,
                   "mean": normalizer.mean, "std": normalizer.std},
        "tensors": [{"name": name, "rows": t.rows, "cols": t.cols} for name, t in named],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 12 or raw[:len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = struct.unpack_from("<IQ", raw, len(_MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} "
                              f"(expected {FORMAT_VERSION})")
    body_start = len(_MAGIC) + 12
    try:
        header = json.loads(raw[body_start:body_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt header: {err}") from err

    try:
        config = ModelConfig(**header["config"])
        vocabulary = list(header["vocabulary"])
        target = header["target"]
        normalizer = Normalizer(mean=float(target["mean"]), std=float(target["std"]))
        manifest = header["tensors"]
    except (KeyError, TypeError) as err:
        raise CheckpointError(f"{path}: header is missing fields: {err}") from err

    tensors = {}
    offset = body_start + header_len
    for entry in manifest:
        name, rows, cols = entry["name"], int(entry["rows"]), int(entry["cols"])
        nbytes = rows * cols * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload at tensor '{name}'")
        values = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=offset)
        tensors[name] = ad.parameter(values.reshape(rows, cols), name)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after payload")

    params = _assemble_params(tensors, config, len(vocabulary),
                              int(header["max_atom_count"]), path)
    return Checkpoint(params=params, config=config, vocabulary=vocabulary,
                      normalizer=normalizer, target_property=str(target["property"]),
                      unit=str(target.get("unit", "")))


def _assemble_params(tensors: dict, config: ModelConfig, vocab_size: int,
                     max_atom_count: int, path) -> ModelParams:
    expected = {
        "atom_embedding": (vocab_size, config.atom_dim),
        "count_embedding": (max_atom_count, config.count_dim),
        "gate_weight": (config.hidden_dim, config.concat_dim),
        "gate_bias": (config.hidden_dim, 1),
        "candidate_weight": (config.hidden_dim, config.concat_dim),
        "candidate_bias": (config.hidden_dim, 1),
        "readout_w0": (config.mlp_dim, config.hidden_dim),
        "readout_b0": (config.mlp_dim, 1),
        "readout_w1": (config.mlp_dim, config.mlp_dim),
        "readout_b1": (config.mlp_dim, 1),
        "readout_w2": (1, config.mlp_dim),
        "readout_b2": (1, 1),
    }
    if set(tensors) != set(expected):
        raise CheckpointError(f"{path}: tensor set {sorted(tensors)} does not match "
                              f"expected {sorted(expected)}")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointError(f"{path}: tensor '{name}' has shape "
                                  f"{tensors[name].shape}, expected {shape}")
    return ModelParams(
        atom_embedding=tensors["atom_embedding"],
        count_embedding=tensors["count_embedding"],
        gate_weight=tensors["gate_weight"],
        gate_bias=tensors["gate_bias"],
        candidate_weight=tensors["candidate_weight"],
        candidate_bias=tensors["candidate_bias"],
        mlp=[(tensors[f"readout_w{i}"], tensors[f"readout_b{i}"]) for i in range(3)],
    )
