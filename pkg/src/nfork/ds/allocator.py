from __future__ import annotations

import bisect
from typing import Any, Callable, Hashable, Sequence

from ..stm import ConflictInfo, Store
from .base import Structure
from .causes import ConflictCause, Classification, UNCLASSIFIED, classification


class Exhausted(Exception):
    pass


class DoubleFree(Exception):
    pass


class NotAllocated(Exception):
    pass


def _insert_desc(entries: tuple, item: tuple) -> tuple:
    # entries sorted by expiry descending; equal expiries keep insertion order
    i = bisect.bisect_left(entries, -item[0], key=lambda e: -e[0])
    return entries[:i] + (item,) + entries[i:]


class TAllocator(Structure):
    """Resource allocator with per-worker free pools and expiring leases.

    Objects: one free pool and one allocated list per slot, plus one lease
    record per resource.  A lease is ``(owner_slot, expiry)``; the owner's
    allocated list holds ``(expiry, resource)`` pairs sorted by expiry,
    latest first, so expiration pops from the tail.
    """

    kind = "allocator"

    def __init__(self, store: Store, name: str, resources: Sequence[Hashable], n_slots: int,
                 ttl_ns: int, on_expire: Callable[[Any, Hashable], None] | None = None):
        if n_slots < 1:
            raise ValueError("allocator needs at least one slot")
        super().__init__(store, name)
        self.n_slots = n_slots
        self.ttl_ns = ttl_ns
        self.on_expire = on_expire
        self.resources = tuple(resources)
        if len(set(self.resources)) != len(self.resources):
            raise ValueError("resources must be distinct")
        n = len(self.resources)
        for s in range(n_slots):
            chunk = self.resources[s * n // n_slots:(s + 1) * n // n_slots]
            store.ensure(self._pool(s), tuple(reversed(chunk)))  # pop from the end
            store.ensure(self._list(s), ())
        for r in self.resources:
            store.ensure(self._rec(r), (None, 0))

    def _pool(self, slot: int) -> tuple:
        return (self.name, "pool", slot)

    def _list(self, slot: int) -> tuple:
        return (self.name, "list", slot)

    def _rec(self, rid: Hashable) -> tuple:
        return (self.name, "rec", rid)

    def slot_of(self, worker: int) -> int:
        return worker % self.n_slots

    # -- operations --------------------------------------------------------
    def allocate(self) -> Hashable:
        tx = self._tx("allocate")
        slot = self.slot_of(tx.worker)
        pool = self._read(tx, self._pool(slot))
        if pool:
            rid = pool[-1]
            self._write(tx, self._pool(slot), pool[:-1])
        else:
            tx.op = tx.describe(self.name, "allocate", (), steal=True)
            pools = [self._read(tx, self._pool(s)) if s != slot else pool for s in range(self.n_slots)]
            victim = max(range(self.n_slots), key=lambda s: (len(pools[s]), -s))
            if not pools[victim]:
                raise Exhausted(f"allocator {self.name!r} has no free resources")
            k = (len(pools[victim]) + 1) // 2
            stolen = pools[victim][-k:]
            self._write(tx, self._pool(victim), pools[victim][:-k])
            rid = stolen[-1]
            self._write(tx, self._pool(slot), stolen[:-1])
        expiry = tx.now() + self.ttl_ns
        self._write(tx, self._rec(rid), (slot, expiry))
        self._write(tx, self._list(slot), _insert_desc(self._read(tx, self._list(slot)), (expiry, rid)))
        return rid

    def free(self, rid: Hashable) -> None:
        tx = self._tx("free", (rid,))
        owner, expiry = self._lease(tx, rid, DoubleFree)
        lst = self._read(tx, self._list(owner))
        self._write(tx, self._list(owner), tuple(e for e in lst if e[1] != rid))
        slot = self.slot_of(tx.worker)
        self._write(tx, self._pool(slot), self._read(tx, self._pool(slot)) + (rid,))
        self._write(tx, self._rec(rid), (None, 0))

    def refresh(self, rid: Hashable) -> None:
        tx = self._tx("refresh", (rid,))
        owner, old = self._lease(tx, rid, NotAllocated)
        expiry = tx.now() + self.ttl_ns
        lst = tuple(e for e in self._read(tx, self._list(owner)) if e[1] != rid)
        self._write(tx, self._list(owner), _insert_desc(lst, (expiry, rid)))
        self._write(tx, self._rec(rid), (owner, expiry))

    def expiry_of(self, rid: Hashable) -> int | None:
        tx = self._tx("expiry", (rid,))
        owner, expiry = self._read(tx, self._rec(rid))
        return None if owner is None else expiry

    def _lease(self, tx, rid, error):
        if self._rec(rid) not in self.store.objects:
            raise error(f"{rid!r} is not a resource of {self.name!r}")
        owner, expiry = self._read(tx, self._rec(rid))
        if owner is None:
            raise error(f"{rid!r} is not allocated")
        return owner, expiry

    def expire_step(self, now: int | None = None) -> list:
        """Free every lease on the invoker's list with expiry <= now."""
        tx = self._tx("expire")
        now = tx.now() if now is None else now
        slot = self.slot_of(tx.worker)
        lst = self._read(tx, self._list(slot))
        i = len(lst)
        while i > 0 and lst[i - 1][0] <= now:
            i -= 1
        if i == len(lst):
            return []
        expired = [rid for _, rid in reversed(lst[i:])]
        self._write(tx, self._list(slot), lst[:i])
        self._write(tx, self._pool(slot), self._read(tx, self._pool(slot)) + tuple(expired))
        for rid in expired:
            self._write(tx, self._rec(rid), (None, 0))
        return expired

    def next_deadline(self, slot: int) -> int | None:
        """Earliest committed expiry on ``slot``'s list (non-transactional hint)."""
        lst = self.store.committed(self._list(slot))
        return lst[-1][0] if lst else None

    # -- inspection ------------------------------------------------------------
    def free_counts(self) -> list[int]:
        return [len(self.store.committed(self._pool(s))) for s in range(self.n_slots)]

    def allocated(self) -> dict:
        out = {}
        for s in range(self.n_slots):
            for expiry, rid in self.store.committed(self._list(s)):
                out[rid] = (s, expiry)
        return out

    def params(self) -> dict:
        return {"resources": len(self.resources), "slots": self.n_slots, "ttl_ns": self.ttl_ns}

    def classify(self, conflict: ConflictInfo) -> Classification:
        if conflict.oid is None:
            return UNCLASSIFIED
        role = conflict.oid[1]
        if role == "pool":
            return classification(ConflictCause.ALLOC_POOL_EXHAUSTED_STEAL,
                                  f"{len(self.resources)} resources over {self.n_slots} pools")
        if role in ("list", "rec"):
            return classification(ConflictCause.ALLOC_SAME_ALLOCATED_LIST, "refresh less frequently")
        return UNCLASSIFIED
