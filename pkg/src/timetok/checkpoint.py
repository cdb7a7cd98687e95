"""Binary checkpoint files.

Layout: magic, version tag, JSON header (model config + vocabulary layout
integers), then named parameter blocks as length-prefixed little-endian
float32 arrays, and a trailing CRC32 of everything before it so layout drift
or truncation is caught at load time.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .model import ModelConfig
from .vocab import VocabLayout

_MAGIC = b"TTK1"
_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], config: ModelConfig, layout: VocabLayout):
    header = json.dumps({"model": config.to_dict(), "vocab": layout.to_dict()}).encode()
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _VERSION)
    blob += struct.pack("<I", len(header))
    blob += header
    blob += struct.pack("<I", len(params))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        encoded = name.encode()
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += struct.pack("<I", arr.size)
        blob += arr.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path, param_dtype: str = "float32"):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise ValueError(f"{path} failed its checksum: corrupt or truncated")
    off = 4
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    header = json.loads(blob[off : off + header_len])
    off += header_len
    config = ModelConfig.from_dict({**header["model"], "param_dtype": param_dtype})
    layout = VocabLayout.from_dict(header["vocab"])
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        (size,) = struct.unpack_from("<I", blob, off)
        off += 4
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        params[name] = arr.astype(config.dtype)
    return params, config, layout
