"""Binary checkpoint format.

Layout (little-endian)::

    b"MXPP" | u32 version | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 dtype code | u8 rank
                | rank × u32 extents | raw values

Names are unique and written in sorted order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MXPP"
FORMAT_VERSION = 1

DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODE_OF = {dt: code for code, dt in DTYPE_CODES.items()}


class CheckpointFormatError(ValueError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass


@dataclass
class Checkpoint:
    step: int
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    config_text: str = ""
    format_version: int = FORMAT_VERSION

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v for k, v in self.params.items()}
        out.update({f"adam_m/{k}": v for k, v in self.adam_m.items()})
        out.update({f"adam_v/{k}": v for k, v in self.adam_v.items()})
        out["meta/step"] = np.array([self.step], dtype=np.int64)
        out["meta/config"] = np.frombuffer(self.config_text.encode("utf-8"), dtype=np.uint8)
        return out


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        code = _CODE_OF.get(np.dtype(dt))
        if code is None:
            raise CheckpointFormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes())
    return b"".join(chunks)


def decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointFormatError("truncated checkpoint")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CheckpointFormatError("bad magic; not an MXPP checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        name = bytes(take(n)).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in DTYPE_CODES:
            raise CheckpointFormatError(f"{name}: unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        dt = DTYPE_CODES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(bytes(take(size)), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if pos != len(view):
        raise CheckpointFormatError(f"{len(view) - pos} trailing bytes after last tensor")
    return tensors


def save_checkpoint(ckpt: Checkpoint, path: str | Path, overwrite: bool = False) -> Path:
    path = Path(path)
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists; refusing to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensors(ckpt.tensors()))
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    tensors = decode_tensors(Path(path).read_bytes())
    try:
        step = int(tensors.pop("meta/step")[0])
        config_text = tensors.pop("meta/config").tobytes().decode("utf-8")
    except KeyError as e:
        raise CheckpointFormatError(f"missing metadata tensor {e}") from None
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for name, arr in tensors.items():
        head, _, rest = name.partition("/")
        if head not in groups:
            raise CheckpointFormatError(f"unexpected tensor {name!r}")
        groups[head][rest] = arr
    return Checkpoint(step, groups["param"], groups["adam_m"], groups["adam_v"], config_text)
