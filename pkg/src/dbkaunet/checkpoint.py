"""Binary checkpoint files.

Layout (little-endian)::

    magic      8 bytes  b"DBKAUNET"
    version    uint32
    header_len uint32
    header     JSON (network config, seed, epoch, best_f1, step, optimizer meta)
    n_entries  uint32
    entries    name_len uint16, name utf-8, dtype code uint8, ndim uint8,
               dims uint32 * ndim, raw array bytes

Entries hold every parameter and buffer by name plus the optimizer's first
and second moments as ``optim.m.<name>`` / ``optim.v.<name>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import AdamW, DBKAUNet, NetworkConfig

MAGIC = b"DBKAUNET"
FORMAT_VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
DTYPE_CODES = {(v.kind, v.itemsize): k for k, v in DTYPES.items()}


class CheckpointError(Exception):
    pass


class CheckpointMismatchError(CheckpointError):
    """The checkpoint's tensor table does not fit the model it is loaded into."""


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def model_state(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("optim.")}


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = DTYPE_CODES.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    raw_name = name.encode("utf-8")
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def write_checkpoint(path, config: dict, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    header = json.dumps({"config": config, **(meta or {})}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header,
             struct.pack("<I", len(tensors))]
    parts.extend(_pack_entry(k, v) for k, v in tensors.items())
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", buf, 8)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 16
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            dt = DTYPES[code]
            nbytes = dt.itemsize * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > len(buf):
                raise CheckpointError(f"truncated entry {name!r}")
            tensors[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    config = header.pop("config")
    return Checkpoint(config, tensors, header)


def save_checkpoint(path, model: DBKAUNet, optimizer: AdamW | None = None, **meta) -> Path:
    """Model parameters and buffers, optional optimizer moments, and run metadata."""
    state = model.state_dict()
    tensors = dict(state)
    info = dict(meta)
    if optimizer is not None:
        names = [n for n, _ in model.named_parameters()]
        if len(names) != len(optimizer.params):
            raise CheckpointError("optimizer does not track exactly the model's parameters")
        for name, m, v in zip(names, optimizer.m, optimizer.v):
            tensors[f"optim.m.{name}"] = m
            tensors[f"optim.v.{name}"] = v
        info["optimizer"] = optimizer.state()
    return write_checkpoint(path, model.cfg.to_dict(), tensors, info)


def load_checkpoint(path, model: DBKAUNet | None = None, optimizer: AdamW | None = None):
    """Restore a checkpoint; builds the model from the stored config when none is given.

    Returns ``(model, checkpoint)``.
    """
    ckpt = read_checkpoint(path)
    if model is None:
        model = DBKAUNet(NetworkConfig.from_dict(ckpt.config), seed=int(ckpt.meta.get("seed", 0)))
        dtypes = {a.dtype for a in ckpt.model_state.values() if a.dtype.kind == "f"}
        if dtypes == {np.dtype(np.float32)}:
            model.to(np.float32)
    try:
        model.load_state_dict(ckpt.model_state)
    except (KeyError, ValueError) as exc:
        raise CheckpointMismatchError(f"checkpoint {path} does not match the model: {exc}") from exc
    if optimizer is not None:
        if "optimizer" not in ckpt.meta:
            raise CheckpointError(f"checkpoint {path} carries no optimizer state")
        names = [n for n, _ in model.named_parameters()]
        try:
            m = [ckpt.tensors[f"optim.m.{n}"] for n in names]
            v = [ckpt.tensors[f"optim.v.{n}"] for n in names]
        except KeyError as exc:
            raise CheckpointMismatchError(f"optimizer state missing entry {exc}") from exc
        optimizer.load_state(ckpt.meta["optimizer"], m, v)
    return model, ckpt
