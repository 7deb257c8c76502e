"""The ``SQZT`` checkpoint format.

Layout (little-endian)::

    b"SQZT" | u16 version | u32 header length | JSON header (UTF-8)
    u32 tensor count
    per tensor: u16 name length | name | u8 dtype tag | u8 ndim | u32 dims... | raw data

The JSON header carries the model and training configs, the epoch counter,
the PRNG state and the history. Tensors are grouped by a name prefix
(``params/``, ``buffers/``, ``momentum/``).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SQZT"
VERSION = 1
DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAG_OF = {v: k for k, v in DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def group(self, name: str) -> dict[str, np.ndarray]:
        return self.tensors.get(name, {})


def save_checkpoint(path: str | Path, header: dict, tensors: dict[str, dict[str, np.ndarray]]) -> None:
    """Write ``tensors`` (group -> name -> array) plus a JSON ``header``.

    The file is written to a temporary sibling and renamed, so a crash never
    leaves a truncated checkpoint behind.
    """
    path = Path(path)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(head)), head]
    flat = [(f"{g}/{n}", a) for g, group in tensors.items() for n, a in group.items()]
    chunks.append(struct.pack("<I", len(flat)))
    for name, arr in flat:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _TAG_OF:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<BB{arr.ndim}I", _TAG_OF[dt], arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an SQZT checkpoint")
    try:
        version, hlen = struct.unpack_from("<HI", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 10
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        tensors: dict[str, dict[str, np.ndarray]] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            tag, ndim = struct.unpack_from("<BB", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 2)
            pos += 2 + 4 * ndim
            if tag not in DTYPE_TAGS:
                raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name}")
            dt = DTYPE_TAGS[tag]
            size = int(np.prod(shape, dtype=np.int64))
            if pos + size * dt.itemsize > len(raw):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            arr = np.frombuffer(raw, dt, size, pos).reshape(shape).astype(dt.newbyteorder("="))
            pos += size * dt.itemsize
            group, _, tname = name.partition("/")
            tensors.setdefault(group, {})[tname] = arr
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return Checkpoint(header, tensors)
