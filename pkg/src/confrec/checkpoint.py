"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      4 bytes  b"CREC"
    version    uint32
    N, M, d, L uint32 x 4
    cfg_len    uint32
    config     cfg_len bytes, UTF-8 JSON with sorted keys
    user_emb   N*d float32, row-major
    item_emb   M*d float32, row-major
    checksum   8 bytes, BLAKE2b-64 of everything above
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ChecksumMismatch, DimensionMismatch, InputError

MAGIC = b"CREC"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")
_CHECKSUM_SIZE = 8
_F32 = np.dtype("<f4")


def checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=_CHECKSUM_SIZE).digest()


@dataclass
class Checkpoint:
    user_emb: np.ndarray
    item_emb: np.ndarray
    layers: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.user_emb = np.ascontiguousarray(self.user_emb, dtype=_F32)
        self.item_emb = np.ascontiguousarray(self.item_emb, dtype=_F32)
        if self.user_emb.ndim != 2 or self.item_emb.ndim != 2:
            raise DimensionMismatch("embedding tables must be 2-D")
        if self.user_emb.shape[1] != self.item_emb.shape[1]:
            raise DimensionMismatch(
                f"user dim {self.user_emb.shape[1]} != item dim {self.item_emb.shape[1]}")

    @property
    def dims(self) -> tuple:
        return (self.user_emb.shape[0], self.item_emb.shape[0], self.user_emb.shape[1], self.layers)

    def to_bytes(self) -> bytes:
        cfg = json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
        n, m, d, layers = self.dims
        body = b"".join([
            _HEADER.pack(MAGIC, VERSION, n, m, d, layers, len(cfg)),
            cfg,
            self.user_emb.tobytes(order="C"),
            self.item_emb.tobytes(order="C"),
        ])
        return body + checksum(body)

    @classmethod
    def from_bytes(cls, data: bytes, source="<bytes>") -> "Checkpoint":
        if len(data) < _HEADER.size + _CHECKSUM_SIZE:
            raise InputError(f"{source}: truncated checkpoint ({len(data)} bytes)")
        body, tag = data[:-_CHECKSUM_SIZE], data[-_CHECKSUM_SIZE:]
        if checksum(body) != tag:
            raise ChecksumMismatch(f"{source}: checksum mismatch")
        magic, version, n, m, d, layers, cfg_len = _HEADER.unpack_from(body)
        if magic != MAGIC:
            raise InputError(f"{source}: not a checkpoint (magic {magic!r})")
        if version != VERSION:
            raise InputError(f"{source}: unsupported checkpoint version {version}")
        offset = _HEADER.size
        expected = offset + cfg_len + 4 * d * (n + m)
        if len(body) != expected:
            raise DimensionMismatch(
                f"{source}: dims ({n}, {m}, {d}) need {expected} bytes before the checksum, "
                f"found {len(body)}")
        try:
            config = json.loads(body[offset:offset + cfg_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InputError(f"{source}: unreadable config block ({exc})") from exc
        offset += cfg_len
        user = np.frombuffer(body, dtype=_F32, count=n * d, offset=offset).reshape(n, d)
        offset += 4 * n * d
        item = np.frombuffer(body, dtype=_F32, count=m * d, offset=offset).reshape(m, d)
        return cls(user.copy(), item.copy(), layers, config)

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), source=path)
