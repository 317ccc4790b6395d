from __future__ import annotations

import struct
from typing import Any, Callable, Hashable

from ..stm import ConflictInfo, Store
from .base import Structure
from .causes import ConflictCause, Classification, UNCLASSIFIED, classification

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_GOLDEN = 0x9E3779B97F4A7C15
_M64 = (1 << 64) - 1
EAGER_BUCKETS = 4096


def key_bytes(key: Hashable) -> bytes:
    """Canonical byte encoding of a map key (bytes, str, int, or tuples of those)."""
    if isinstance(key, bytes):
        return key
    if isinstance(key, str):
        return key.encode()
    if isinstance(key, bool):
        return b"\x01" if key else b"\x00"
    if isinstance(key, int):
        return key.to_bytes(max(1, (key.bit_length() + 8) // 8), "big", signed=True)
    if isinstance(key, tuple):
        out = bytearray()
        for part in key:
            b = key_bytes(part)
            out += struct.pack("!H", len(b)) + b
        return bytes(out)
    raise TypeError(f"unsupported map key type {type(key).__name__}")


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _M64
    return h


def default_hash(key: Hashable) -> int:
    """Multiplicative hash over the key bytes, folded 8 bytes at a time.

    Buckets are taken from the top bits, where multiplication mixes best.
    """
    data = key_bytes(key)
    h = len(data)
    for i in range(0, len(data), 8):
        h = ((h ^ int.from_bytes(data[i:i + 8], "little")) * _GOLDEN) & _M64
    return h


class TMap(Structure):
    """Bucketed hash map; a bucket (tuple of (key, value) pairs) is the conflict unit."""

    kind = "map"

    def __init__(self, store: Store, name: str, n_buckets: int = 1024,
                 hash_fn: Callable[[Hashable], int] = default_hash):
        if n_buckets < 1 or n_buckets & (n_buckets - 1):
            raise ValueError("bucket count must be a power of two")
        super().__init__(store, name)
        self.n_buckets = n_buckets
        self.hash_fn = hash_fn
        self._shift = 64 - (n_buckets.bit_length() - 1)
        self._touched: set[int] = set()
        if n_buckets <= EAGER_BUCKETS:
            for b in range(n_buckets):
                self._bucket_oid(b)

    def bucket_of(self, key: Hashable) -> int:
        if self.n_buckets == 1:
            return 0
        return (self.hash_fn(key) & _M64) >> self._shift

    def _bucket_oid(self, b: int) -> tuple:
        oid = (self.name, "bucket", b)
        if b not in self._touched:
            self.store.ensure(oid, ())
            self._touched.add(b)
        return oid

    def get(self, key: Hashable, default: Any = None) -> Any:
        tx = self._tx("get", (key,))
        for k, v in self._read(tx, self._bucket_oid(self.bucket_of(key))):
            if k == key:
                return v
        return default

    def contains(self, key: Hashable) -> bool:
        tx = self._tx("get", (key,))
        return any(k == key for k, _ in self._read(tx, self._bucket_oid(self.bucket_of(key))))

    def set(self, key: Hashable, value: Any) -> None:
        tx = self._tx("set", (key,))
        oid = self._bucket_oid(self.bucket_of(key))
        bucket = self._read(tx, oid)
        self._write(tx, oid, tuple((k, v) for k, v in bucket if k != key) + ((key, value),))

    def remove(self, key: Hashable) -> bool:
        tx = self._tx("remove", (key,))
        oid = self._bucket_oid(self.bucket_of(key))
        bucket = self._read(tx, oid)
        kept = tuple((k, v) for k, v in bucket if k != key)
        if len(kept) == len(bucket):
            return False
        self._write(tx, oid, kept)
        return True

    def items(self) -> list[tuple]:
        """All entries in the snapshot; reads every materialized bucket."""
        tx = self._tx("items")
        out = []
        for b in sorted(self._touched):
            out.extend(self._read(tx, (self.name, "bucket", b)))
        return out

    def snapshot(self) -> dict:
        out = {}
        for b in sorted(self._touched):
            out.update(self.store.committed((self.name, "bucket", b)))
        return out

    def params(self) -> dict:
        return {"buckets": self.n_buckets}

    def classify(self, conflict: ConflictInfo) -> Classification:
        if conflict.oid is None or conflict.oid[1] != "bucket":
            return UNCLASSIFIED
        mine = {op.args[0] for op in conflict.this_ops if op.args}
        theirs = {op.args[0] for op in conflict.other_ops if op.args}
        if mine & theirs:
            return classification(ConflictCause.MAP_SAME_KEY)
        return classification(ConflictCause.MAP_SAME_BUCKET, f"current bucket count {self.n_buckets}")
