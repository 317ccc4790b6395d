from __future__ import annotations

from typing import Any

from ..stm import ConflictInfo, Store
from .base import Structure
from .causes import ConflictCause, Classification, UNCLASSIFIED, classification


class IndexOutOfRange(IndexError):
    pass


class TVector(Structure):
    """Fixed-length array; every element is its own conflict unit."""

    kind = "vector"

    def __init__(self, store: Store, name: str, length: int, initial: Any = 0):
        if length < 1:
            raise ValueError("vector length must be >= 1")
        super().__init__(store, name)
        self.length = length
        self.initial = initial
        for i in range(length):
            store.ensure((name, "elem", i), initial)

    def _check(self, i: int) -> None:
        if not 0 <= i < self.length:
            raise IndexOutOfRange(f"index {i} outside vector {self.name!r} of length {self.length}")

    def read(self, i: int) -> Any:
        self._check(i)
        tx = self._tx("read", (i,))
        return self._read(tx, (self.name, "elem", i))

    def write(self, i: int, value: Any) -> None:
        self._check(i)
        tx = self._tx("write", (i,))
        self._write(tx, (self.name, "elem", i), value, self.initial)

    def __len__(self) -> int:
        return self.length

    def snapshot(self) -> list:
        """Committed contents (outside transactions, for tests and reports)."""
        return [self.store.committed((self.name, "elem", i)) for i in range(self.length)]

    def params(self) -> dict:
        return {"length": self.length}

    def classify(self, conflict: ConflictInfo) -> Classification:
        if conflict.oid is None or conflict.oid[1] != "elem":
            return UNCLASSIFIED
        return classification(ConflictCause.VEC_SAME_ELEMENT, f"element {conflict.oid[2]}")
