"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SORN"  u32 version (=1)
    u32 meta_len   meta_len bytes of UTF-8 "key=value\\n" lines, keys sorted
    u32 n_tensors
    n_tensors x { u32 name_len, name (UTF-8), u8 rank, rank x u32 dims,
                  prod(dims) x float32 }

Tensors are written in name order, so equal contents give equal bytes.
Optimizer moments are stored as ``adam.m.<param>`` / ``adam.v.<param>``.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

MAGIC = b"SORN"
VERSION = 1
ADAM_M = "adam.m."
ADAM_V = "adam.v."


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    meta: Dict[str, str] = field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def params(self):
        return {k: v for k, v in self.tensors.items() if not k.startswith(("adam.m.", "adam.v."))}

    @property
    def adam_m(self):
        return {k[len(ADAM_M):]: v for k, v in self.tensors.items() if k.startswith(ADAM_M)}

    @property
    def adam_v(self):
        return {k[len(ADAM_V):]: v for k, v in self.tensors.items() if k.startswith(ADAM_V)}


def encode_meta(meta):
    lines = []
    for key in sorted(meta):
        value = str(meta[key])
        if "=" in key or "\n" in key or "\n" in value:
            raise CheckpointError(f"metadata entry {key!r} contains '=' or a newline")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def decode_meta(blob):
    meta = {}
    for line in blob.decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            meta[key] = value
    return meta


def to_bytes(ckpt):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta = encode_meta(ckpt.meta)
    parts += [struct.pack("<I", len(meta)), meta, struct.pack("<I", len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name], dtype="<f4", order="C")
        raw_name = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw_name)), raw_name, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if n < 0 or self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at offset {self.pos}: "
                                  f"{what} needs {n} bytes, {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def from_bytes(buf):
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version} at offset 4")
    meta = decode_meta(r.take(r.u32("metadata length"), "metadata block"))
    count = r.u32("tensor count")
    tensors = {}
    for i in range(count):
        start = r.pos
        try:
            name = r.take(r.u32(f"tensor #{i} name length"), f"tensor #{i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"tensor #{i} at offset {start}: name is not UTF-8") from exc
        rank = r.take(1, f"tensor {name!r} rank")[0]
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"tensor {name!r} dims"))
        n = int(np.prod(dims, dtype=np.int64))
        raw = r.take(4 * n, f"tensor {name!r} data")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r} at offset {start}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")
    return Checkpoint(meta, tensors)


def save_checkpoint(ckpt, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    try:
        return from_bytes(buf)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
