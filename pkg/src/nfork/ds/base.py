from __future__ import annotations

from ..stm import ConflictInfo, Store, Transaction, current
from .causes import UNCLASSIFIED, Classification


class Structure:
    """Common plumbing: a registered name, a store, and op descriptors.

    Object ids are ``(name, kind, index)`` so the owning structure, and the
    role of the object inside it, can be recovered from any conflict.
    """

    kind = "structure"

    def __init__(self, store: Store, name: str):
        self.store = store
        self.name = name
        store.register_structure(name, self)

    def _tx(self, op: str, args: tuple = (), **extra) -> Transaction:
        tx = current()
        tx.op = tx.describe(self.name, op, args, **extra)
        return tx

    def _read(self, tx: Transaction, oid: tuple, default=None):
        return self.store.read(tx, oid, default)

    def _write(self, tx: Transaction, oid: tuple, value, initial=None) -> None:
        # materialize the ts-0 version first so older snapshots still see one
        self.store.ensure(oid, initial)
        self.store.write(tx, oid, value)

    def params(self) -> dict:
        return {}

    def classify(self, conflict: ConflictInfo) -> Classification:
        return UNCLASSIFIED
