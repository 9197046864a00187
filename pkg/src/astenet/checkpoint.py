"""Checkpoint files: a plain-text header, then little-endian float32 payload.

Layout::

    ASTENET-CHECKPOINT
    format_version=1
    config.<field>=<value>            (ModelConfig)
    meta.<key>=<value>                (step, best_dev_f1, rng_state, schedule, ...)
    tensor <name> float32 <d0>x<d1>   (one per tensor, payload order)
    end_header
    <payload>

Tensor names are model parameter names, with ``adam.m/`` and ``adam.v/``
prefixes for the optimizer moments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .model import ModelConfig

MAGIC = "ASTENET-CHECKPOINT"
FORMAT_VERSION = 1
END = "end_header"


class CheckpointError(ValueError):
    """Unreadable checkpoint, or one that disagrees with the requested model."""


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    best_dev_f1: float = 0.0
    meta: dict[str, str] = field(default_factory=dict)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = list(self.params.items())
        out += [(f"adam.m/{k}", v) for k, v in self.adam_m.items()]
        out += [(f"adam.v/{k}", v) for k, v in self.adam_v.items()]
        return out


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_field(cfg_type, raw: str):
    if cfg_type in (bool, "bool"):
        if raw not in ("true", "false"):
            raise CheckpointError(f"bad boolean {raw!r}")
        return raw == "true"
    if cfg_type in (int, "int"):
        return int(raw)
    if cfg_type in (float, "float"):
        return float(raw)
    return raw


def to_bytes(ckpt: Checkpoint) -> bytes:
    lines = [MAGIC, f"format_version={FORMAT_VERSION}"]
    for f in fields(ModelConfig):
        lines.append(f"config.{f.name}={_fmt(getattr(ckpt.config, f.name))}")
    lines.append(f"meta.step={ckpt.step}")
    lines.append(f"meta.best_dev_f1={ckpt.best_dev_f1!r}")
    lines.append(f"meta.rng_state={json.dumps(ckpt.rng_state, sort_keys=True)}")
    for k, v in ckpt.meta.items():
        if "\n" in v or "=" in k:
            raise CheckpointError(f"meta entry {k!r} cannot be serialised")
        lines.append(f"meta.{k}={v}")
    payload = []
    for name, arr in ckpt.tensors():
        if " " in name:
            raise CheckpointError(f"tensor name {name!r} contains a space")
        shape = "x".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
        lines.append(f"tensor {name} float32 {shape}")
        payload.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    lines.append(END)
    return ("\n".join(lines) + "\n").encode("utf-8") + b"".join(payload)


def from_bytes(blob: bytes) -> Checkpoint:
    marker = ("\n" + END + "\n").encode()
    cut = blob.find(marker)
    if cut < 0 or not blob.startswith(MAGIC.encode()):
        raise CheckpointError("not a checkpoint file")
    header = blob[:cut].decode("utf-8").split("\n")
    payload = memoryview(blob)[cut + len(marker):]
    version = header[1].partition("=")[2]
    if header[1].partition("=")[0] != "format_version" or version != str(FORMAT_VERSION):
        raise CheckpointError(f"unsupported checkpoint format version {version!r}")
    cfg_types = {f.name: f.type for f in fields(ModelConfig)}
    cfg, meta, specs = {}, {}, []
    for line in header[2:]:
        if line.startswith("tensor "):
            _, name, dtype, shape = line.split(" ")
            if dtype != "float32":
                raise CheckpointError(f"unsupported dtype {dtype}")
            dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
            specs.append((name, dims))
            continue
        key, _, value = line.partition("=")
        group, _, name = key.partition(".")
        if group == "config":
            if name not in cfg_types:
                raise CheckpointError(f"unknown config key {name!r}")
            cfg[name] = _parse_field(cfg_types[name], value)
        elif group == "meta":
            meta[name] = value
        else:
            raise CheckpointError(f"unexpected header line {line!r}")
    offset = 0
    params, adam_m, adam_v = {}, {}, {}
    for name, dims in specs:
        count = int(np.prod(dims)) if dims else 1
        nbytes = 4 * count
        if offset + nbytes > len(payload):
            raise CheckpointError("payload shorter than the header declares")
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype="<f4").reshape(dims).copy()
        offset += nbytes
        if name.startswith("adam.m/"):
            adam_m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            adam_v[name[7:]] = arr
        else:
            params[name] = arr
    if offset != len(payload):
        raise CheckpointError("payload longer than the header declares")
    step = int(meta.pop("step", "0"))
    best = float(meta.pop("best_dev_f1", "0.0"))
    rng_state = json.loads(meta.pop("rng_state", "{}"))
    return Checkpoint(ModelConfig(**cfg), params, adam_m, adam_v, step, rng_state, best, meta)


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
