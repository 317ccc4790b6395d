from __future__ import annotations

import threading
from typing import Any, Callable

from ..stm import ConflictInfo, Store
from .base import Structure
from .causes import ConflictCause, Classification, UNCLASSIFIED, classification


class TDistributedObject(Structure):
    """Per-slot sharded value, merged on read, with a bounded-staleness cache.

    ``update`` only touches the invoker's portion, so updates never conflict.
    ``read(now)`` serves the cached merge when it is at most
    ``max_staleness_ns`` old; otherwise it reads (and so validates) every
    portion.  The cache is published on commit, outside validation, keeping
    whichever merge is newer.  A bound of 0 disables the cache entirely.
    """

    kind = "dobj"

    def __init__(self, store: Store, name: str, n_slots: int, zero: Any,
                 merge: Callable[[Any, Any], Any], max_staleness_ns: int = 0):
        if n_slots < 1:
            raise ValueError("distributed object needs at least one slot")
        super().__init__(store, name)
        self.n_slots = n_slots
        self.zero = zero
        self.merge = merge
        self.max_staleness_ns = max_staleness_ns
        self.cache: tuple[Any, int] | None = None  # (value, merge time)
        self._cache_lock = threading.Lock()
        self.merges = 0
        self.cache_hits = 0
        for s in range(n_slots):
            store.ensure(self._portion(s), zero)

    def _portion(self, slot: int) -> tuple:
        return (self.name, "portion", slot)

    def update(self, fn: Callable[[Any], Any]) -> None:
        tx = self._tx("update")
        oid = self._portion(tx.worker % self.n_slots)
        self._write(tx, oid, fn(self._read(tx, oid)), self.zero)

    def read(self, now: int | None = None) -> Any:
        tx = self._tx("read")
        now = tx.now() if now is None else now
        cache = self.cache
        if self.max_staleness_ns > 0 and cache is not None and 0 <= now - cache[1] <= self.max_staleness_ns:
            self.cache_hits += 1
            return cache[0]
        value = self.zero
        for s in range(self.n_slots):
            value = self.merge(value, self._read(tx, self._portion(s)))
        self.merges += 1
        if self.max_staleness_ns > 0:
            tx.on_commit.append(lambda: self._publish(value, now))
        return value

    def _publish(self, value: Any, at: int) -> None:
        with self._cache_lock:
            if self.cache is None or at >= self.cache[1]:
                self.cache = (value, at)

    def merged(self) -> Any:
        """Fresh merge of committed portions, outside transactions."""
        value = self.zero
        for s in range(self.n_slots):
            value = self.merge(value, self.store.committed(self._portion(s)))
        return value

    def params(self) -> dict:
        return {"slots": self.n_slots, "max_staleness_ns": self.max_staleness_ns}

    def classify(self, conflict: ConflictInfo) -> Classification:
        if conflict.oid is None or conflict.oid[1] != "portion":
            return UNCLASSIFIED
        ops = conflict.this_ops + conflict.other_ops
        if any(op.op == "read" for op in ops):
            return classification(ConflictCause.DOBJ_STALENESS_EXCEEDED,
                                  f"current maximal staleness {self.max_staleness_ns} ns")
        return UNCLASSIFIED


class Cell(Structure):
    """A bare shared object with no conflict-cause model (classified UNCLASSIFIED)."""

    kind = "cell"

    def __init__(self, store: Store, name: str, initial: Any = None):
        super().__init__(store, name)
        self.initial = initial
        store.ensure((name, "cell", 0), initial)

    def get(self) -> Any:
        tx = self._tx("get")
        return self._read(tx, (self.name, "cell", 0))

    def set(self, value: Any) -> None:
        tx = self._tx("set")
        self._write(tx, (self.name, "cell", 0), value, self.initial)

    def value(self) -> Any:
        return self.store.committed((self.name, "cell", 0))
