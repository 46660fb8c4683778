"""Binary weights file: named float32 tensors with a trailing checksum.

Layout, all little-endian:

    magic   4 bytes  "HATW"
    version u32      1
    count   u32      number of entries
    entry*  u16 name length, UTF-8 name,
            u8 dtype (0 = float32), u8 ndim, u32 x ndim dims,
            raw float32 values (row-major)
    crc     u32      CRC32 of every preceding byte

Entries are written in the model's canonical parameter order, so a save
followed by a load is byte-for-byte reproducible.
"""

from __future__ import annotations

import struct
import zlib
from typing import Optional

import numpy as np

from hatnet.tensor import Tensor

MAGIC = b"HATW"
VERSION = 1
DTYPE_F32 = 0

__all__ = [
    "WeightsError",
    "BadMagicError",
    "BadVersionError",
    "TruncatedFileError",
    "TrailingDataError",
    "ChecksumError",
    "NameMismatchError",
    "ShapeMismatchError",
    "WeightsBundle",
    "save_weights",
    "load_weights",
]


class WeightsError(Exception):
    """Base class for weights-file failures."""


class BadMagicError(WeightsError):
    pass


class BadVersionError(WeightsError):
    pass


class TruncatedFileError(WeightsError):
    pass


class TrailingDataError(WeightsError):
    pass


class ChecksumError(WeightsError):
    pass


class NameMismatchError(WeightsError):
    """Parameter name sets differ between file and model config."""


class ShapeMismatchError(WeightsError):
    pass


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedFileError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


class WeightsBundle:
    """Ordered name -> Tensor map, the unit of weights I/O."""

    def __init__(self, tensors: Optional[dict] = None):
        self.tensors: dict[str, Tensor] = dict(tensors or {})

    @classmethod
    def from_model(cls, model) -> "WeightsBundle":
        return cls({name: t for name, t in model.params.items()})

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self):
        return iter(self.tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list:
        return list(self.tensors)

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", VERSION, len(self.tensors))]
        for name, t in self.tensors.items():
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise WeightsError(f"parameter name too long: {name[:40]}...")
            values = np.ascontiguousarray(t.data, dtype="<f4")
            parts.append(struct.pack("<H", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<BB", DTYPE_F32, values.ndim))
            parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
            parts.append(values.tobytes())
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WeightsBundle":
        if len(blob) < 4:
            raise TruncatedFileError(f"file is {len(blob)} bytes, shorter than the magic")
        if blob[:4] != MAGIC:
            raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
        if len(blob) < 16:
            raise TruncatedFileError(f"file is {len(blob)} bytes, shorter than any valid file")
        stored = struct.unpack("<I", blob[-4:])[0]
        actual = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
        if stored != actual:
            raise ChecksumError(f"checksum mismatch: stored {stored:#010x}, computed {actual:#010x}")
        r = _Reader(blob[:-4])
        r.take(4)  # magic
        version = r.u32()
        if version != VERSION:
            raise BadVersionError(f"unsupported version {version}, expected {VERSION}")
        count = r.u32()
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            name = r.take(r.u16()).decode("utf-8")
            dtype = r.u8()
            if dtype != DTYPE_F32:
                raise WeightsError(f"unsupported dtype code {dtype} for {name!r}")
            ndim = r.u8()
            dims = tuple(r.u32() for _ in range(ndim))
            n = 1
            for d in dims:
                n *= d
            raw = r.take(4 * n)
            values = np.frombuffer(raw, dtype="<f4").reshape(dims)
            if name in tensors:
                raise WeightsError(f"duplicate parameter name {name!r}")
            tensors[name] = Tensor(values.astype(np.float32), name=name)
        if r.pos != len(r.blob):
            raise TrailingDataError(f"{len(r.blob) - r.pos} unexpected bytes before the checksum")
        return cls(tensors)

    def save(self, path) -> None:
        blob = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(blob)

    @classmethod
    def load(cls, path) -> "WeightsBundle":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def save_weights(model, path) -> WeightsBundle:
    """Write a model's parameters; returns the bundle that was written."""
    bundle = WeightsBundle.from_model(model)
    bundle.save(path)
    return bundle


def load_weights(cfg, path):
    """Build a model for `cfg` and fill it from a weights file.

    The file must carry exactly the parameter names the config defines,
    each with a matching shape; nothing is loaded partially.
    """
    from hatnet.network import Model

    bundle = WeightsBundle.load(path)
    model = Model(cfg)
    expected = list(model.params)
    got = bundle.names()
    if set(expected) != set(got):
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        first = (missing + extra)[0]
        raise NameMismatchError(
            f"parameter names do not match the config: first offender {first!r} "
            f"({len(missing)} missing, {len(extra)} extra)"
        )
    for name in expected:
        t = bundle[name]
        want = model.params[name].shape
        if t.shape != want:
            raise ShapeMismatchError(f"{name!r}: file shape {t.shape} != config shape {want}")
        model.params[name].data = np.ascontiguousarray(t.data, dtype=np.float32)
    return model
