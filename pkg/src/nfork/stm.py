"""Object-granularity multi-version transactional memory.

Each shared object keeps a newest-first chain of committed versions.  A
transaction reads the newest version no younger than its start timestamp
(a snapshot), buffers writes privately, and at commit an updater

1. takes write intents on its write set in canonical object-id order,
2. validates: any object it read or wrote whose newest version is younger
   than its snapshot aborts it (read-write / write-write conflict),
3. takes the next clock value, publishes its versions and releases intents.

Read-only transactions commit without validation.  Effects (packet sends,
log records) are buffered on the transaction and flushed only on commit;
the undo journal reverts worker-private state on abort.

Execution is expressed as a generator (:meth:`Store.attempts`) that yields
the virtual nanoseconds consumed between steps, so the same code backs the
deterministic discrete-event scheduler and plain synchronous calls.
"""
from __future__ import annotations

import enum
import itertools
import random
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Generator

__all__ = [
    "ConflictKind", "OpDescriptor", "ConflictInfo", "Version", "VersionedObject", "GlobalClock",
    "Effect", "EffectKind", "Transaction", "TxStatus", "TxAbort", "NoVisibleVersion",
    "NestedTransaction", "NoActiveTransaction", "CostModel", "RetryPolicy", "BatchOutcome",
    "Store", "current", "MISSING",
]

MISSING = object()


class ConflictKind(enum.Enum):
    READ_WRITE = "ReadWrite"
    WRITE_WRITE = "WriteWrite"
    FORCED = "Forced"


@dataclass(frozen=True, slots=True)
class OpDescriptor:
    """Which operation touched an object: call site, structure, op, args, timing."""

    site: str
    structure: str
    op: str
    args: tuple = ()
    worker: int = -1
    ts: int = 0
    extra: tuple = ()  # sorted (name, value) pairs

    def get(self, name: str, default=None):
        for k, v in self.extra:
            if k == name:
                return v
        return default


RAW_OP = OpDescriptor("", "", "access")


@dataclass(frozen=True)
class ConflictInfo:
    oid: tuple | None
    kind: ConflictKind
    this_ops: tuple[OpDescriptor, ...] = ()
    other_ops: tuple[OpDescriptor, ...] = ()
    this_ts: int = 0
    other_ts: int = 0

    @property
    def this_op(self) -> OpDescriptor | None:
        return self.this_ops[0] if self.this_ops else None

    @property
    def other_op(self) -> OpDescriptor | None:
        return self.other_ops[0] if self.other_ops else None


class TxAbort(Exception):
    def __init__(self, conflict: ConflictInfo):
        super().__init__(conflict.kind.value)
        self.conflict = conflict


class NoVisibleVersion(TxAbort):
    """The object was created after the reader's snapshot."""


class NestedTransaction(RuntimeError):
    pass


class NoActiveTransaction(RuntimeError):
    pass


@dataclass(slots=True)
class Version:
    ts: int
    payload: Any
    writer: int = 0
    ops: tuple = ()


class VersionedObject:
    __slots__ = ("oid", "versions", "intent")

    def __init__(self, oid: tuple, payload: Any, ts: int = 0):
        self.oid = oid
        self.versions: list[Version] = [Version(ts, payload)]
        self.intent: int | None = None

    @property
    def newest(self) -> Version:
        return self.versions[0]

    def visible(self, ts: int) -> Version | None:
        for v in self.versions:
            if v.ts <= ts:
                return v
        return None


class GlobalClock:
    def __init__(self, start: int = 0):
        self.value = start

    def peek(self) -> int:
        return self.value


class EffectKind(enum.Enum):
    SEND = "SendPacket"
    LOG = "Log"


@dataclass(frozen=True, slots=True)
class Effect:
    kind: EffectKind
    payload: Any


class TxStatus(enum.Enum):
    ACTIVE = "Active"
    COMMITTED = "Committed"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class CostModel:
    """Virtual-time charge (ns) per runtime action, used in deterministic mode."""

    tx_begin: int = 60
    tx_commit: int = 60
    per_read: int = 15
    per_write: int = 15
    per_validate: int = 4
    per_packet: int = 80


@dataclass(frozen=True)
class RetryPolicy:
    """Immediate retries first, then doubling backoff up to ``cap_ns``."""

    immediate: int = 3
    base_ns: int = 100
    cap_ns: int = 1_000

    def backoff(self, aborts: int) -> int:
        if aborts <= self.immediate:
            return 0
        return min(self.cap_ns, self.base_ns << min(aborts - self.immediate - 1, 30))


@dataclass(eq=False)
class Transaction:
    id: int
    worker: int
    start_ts: int
    base_ns: int = 0
    reads: dict = field(default_factory=dict)      # oid -> [OpDescriptor]
    writes: dict = field(default_factory=dict)     # oid -> private payload
    write_ops: dict = field(default_factory=dict)  # oid -> [OpDescriptor]
    effects: list = field(default_factory=list)
    undo: list = field(default_factory=list)
    on_commit: list = field(default_factory=list)
    tags: list = field(default_factory=list)
    status: TxStatus = TxStatus.ACTIVE
    commit_ts: int | None = None
    conflict: ConflictInfo | None = None
    abort_count: int = 0
    cost: int = 0
    site: str = ""
    op: OpDescriptor = RAW_OP
    clock: Callable[[], int] | None = None

    def now(self) -> int:
        if self.clock is not None:
            return self.clock()
        return self.base_ns + self.cost

    @property
    def read_only(self) -> bool:
        return not self.writes

    def journal(self, restore: Callable[[], None]) -> None:
        self.undo.append(restore)

    def buffer_effect(self, effect: Effect) -> None:
        if self.status is not TxStatus.ACTIVE:
            raise RuntimeError("transaction is not active")
        self.effects.append(effect)

    def describe(self, structure: str, op: str, args: tuple = (), **extra) -> OpDescriptor:
        site = f"{self.site}:{structure}.{op}" if self.site else f"{structure}.{op}"
        return OpDescriptor(site, structure, op, args, self.worker, self.now(),
                            tuple(sorted(extra.items())))


@dataclass(frozen=True)
class BatchOutcome:
    commit_ts: int
    aborts: int
    tx: Transaction


_local = threading.local()


def current() -> Transaction:
    """The transaction active on this thread (handlers run inside exactly one)."""
    tx = getattr(_local, "tx", None)
    if tx is None:
        raise NoActiveTransaction("built-in data structures are only usable inside a handler")
    return tx


def _current_or_none() -> Transaction | None:
    return getattr(_local, "tx", None)


class _Ambient:
    __slots__ = ("tx", "prev")

    def __init__(self, tx):
        self.tx = tx

    def __enter__(self):
        self.prev = getattr(_local, "tx", None)
        _local.tx = self.tx
        return self.tx

    def __exit__(self, *exc):
        _local.tx = self.prev
        return False


class Store:
    """Shared versioned objects plus the commit protocol.

    ``on_commit_hook(tx, order_key)`` is invoked after each commit (effects
    included) with a key that sorts committed transactions into their
    serialization order: updaters by commit timestamp, read-only
    transactions right after the snapshot they read.
    """

    def __init__(self, cost: CostModel | None = None, gc_every: int = 1024,
                 record_history: bool = False):
        self.objects: dict[tuple, VersionedObject] = {}
        self.clock = GlobalClock()
        self.cost = cost or CostModel()
        self.structures: dict[str, Any] = {}
        self.active: dict[int, Transaction] = {}
        self.gc_every = gc_every
        self.fault_injector: Callable[[Transaction], bool] | None = None
        self.on_commit_hook: Callable[[Transaction, tuple], None] | None = None
        self.history: list[tuple[int, dict]] | None = [] if record_history else None
        self._commit_lock = threading.Lock()
        self._tx_ids = itertools.count(1)
        self._seq = itertools.count()
        self._commits_by_worker: dict[int, int] = {}
        self._multi: set[tuple] = set()  # oids holding more than one version
        self.commits = 0
        self.aborts = 0

    # -- objects ---------------------------------------------------------
    def ensure(self, oid: tuple, initial: Any) -> VersionedObject:
        """Register ``oid`` with an initial version at ts 0 unless it exists."""
        obj = self.objects.get(oid)
        if obj is None:
            obj = self.objects.setdefault(oid, VersionedObject(oid, initial, 0))
        return obj

    def committed(self, oid: tuple, default: Any = MISSING) -> Any:
        """Newest committed payload, outside any transaction."""
        obj = self.objects.get(oid)
        if obj is None:
            if default is MISSING:
                raise KeyError(oid)
            return default
        return obj.newest.payload

    def register_structure(self, name: str, structure: Any) -> None:
        if name in self.structures:
            raise ValueError(f"a structure named {name!r} already exists")
        self.structures[name] = structure

    # -- transactions ---------------------------------------------------------
    def begin(self, worker: int = 0, base_ns: int = 0,
              clock: Callable[[], int] | None = None, snapshot: int | None = None) -> Transaction:
        """Start a transaction on the newest snapshot, or on an older ``snapshot`` ts."""
        if worker in self.active:
            raise NestedTransaction(f"worker {worker} already runs transaction {self.active[worker].id}")
        tx = Transaction(next(self._tx_ids), worker, -1, base_ns=base_ns, clock=clock)
        # publish before sampling the clock so a concurrent collector stays conservative
        self.active[worker] = tx
        tx.start_ts = self.clock.value if snapshot is None else min(snapshot, self.clock.value)
        tx.cost += self.cost.tx_begin
        return tx

    def read(self, tx: Transaction, oid: tuple, default: Any = MISSING) -> Any:
        if tx.status is not TxStatus.ACTIVE:
            raise RuntimeError("transaction is not active")
        if oid in tx.writes:
            return tx.writes[oid]
        obj = self.objects.get(oid)
        if obj is None:
            if default is MISSING:
                raise KeyError(oid)
            obj = self.ensure(oid, default)
        v = obj.visible(tx.start_ts)
        tx.cost += self.cost.per_read
        ops = tx.reads.get(oid)
        if ops is None:
            tx.reads[oid] = [tx.op]
        elif ops[-1] is not tx.op:
            ops.append(tx.op)
        if v is None:
            newest = obj.newest
            raise NoVisibleVersion(ConflictInfo(oid, ConflictKind.READ_WRITE, (tx.op,), newest.ops,
                                                tx.start_ts, newest.ts))
        return v.payload

    def write(self, tx: Transaction, oid: tuple, payload: Any) -> None:
        if tx.status is not TxStatus.ACTIVE:
            raise RuntimeError("transaction is not active")
        tx.writes[oid] = payload
        tx.cost += self.cost.per_write
        ops = tx.write_ops.get(oid)
        if ops is None:
            tx.write_ops[oid] = [tx.op]
        elif ops[-1] is not tx.op:
            ops.append(tx.op)

    def _conflict(self, tx, oid, kind, newest) -> ConflictInfo:
        mine = tuple(tx.reads.get(oid, ())) + tuple(tx.write_ops.get(oid, ()))
        return ConflictInfo(oid, kind, mine, newest.ops, tx.start_ts, newest.ts)

    def commit(self, tx: Transaction) -> ConflictInfo | None:
        """Commit ``tx``; returns None on success or the conflict that aborted it."""
        if tx.status is not TxStatus.ACTIVE:
            raise RuntimeError("transaction is not active")
        # injected aborts only hit attempts that would otherwise commit, so the
        # retry observes exactly the state the original attempt validated against
        if not tx.writes:
            if self._inject(tx):
                return self._forced(tx)
            tx.status = TxStatus.COMMITTED
            tx.commit_ts = tx.start_ts
            self._finish_commit(tx, (tx.start_ts, 1, next(self._seq)))
            return None
        held = []
        with self._commit_lock:
            conflict = None
            for oid in sorted(tx.writes):
                obj = self.objects.get(oid)
                if obj is None:
                    continue  # created by this transaction
                if obj.intent is not None and obj.intent != tx.id:
                    conflict = self._conflict(tx, oid, ConflictKind.WRITE_WRITE, obj.newest)
                    break
                obj.intent = tx.id
                held.append(obj)
            if conflict is None:
                conflict = self._validate(tx)
            if conflict is None and self._inject(tx):
                conflict = ConflictInfo(None, ConflictKind.FORCED, (tx.op,), (), tx.start_ts, tx.start_ts)
            if conflict is not None:
                for obj in held:
                    obj.intent = None
                self.abort(tx, conflict)
                return conflict
            ts = self.clock.value + 1
            ops_of = tx.write_ops
            for oid, payload in tx.writes.items():
                obj = self.objects.get(oid)
                version = Version(ts, payload, tx.id, tuple(ops_of.get(oid, ())))
                if obj is None:
                    obj = VersionedObject(oid, payload, ts)
                    obj.versions[0] = version
                    self.objects[oid] = obj
                else:
                    obj.versions.insert(0, version)
                    self._multi.add(oid)
            for obj in held:
                obj.intent = None
            self.clock.value = ts
            if self.history is not None:
                self.history.append((ts, dict(tx.writes)))
        tx.status = TxStatus.COMMITTED
        tx.commit_ts = ts
        self._finish_commit(tx, (ts, 0, next(self._seq)))
        n = self._commits_by_worker.get(tx.worker, 0) + 1
        self._commits_by_worker[tx.worker] = n
        if self.gc_every and n % self.gc_every == 0:
            self.collect_garbage()
        return None

    def commit_cost(self, tx: Transaction) -> int:
        if not tx.writes:
            return self.cost.tx_commit
        return self.cost.tx_commit + self.cost.per_validate * (len(tx.reads) + len(tx.writes))

    def _inject(self, tx: Transaction) -> bool:
        return self.fault_injector is not None and self.fault_injector(tx)

    def _forced(self, tx: Transaction) -> ConflictInfo:
        info = ConflictInfo(None, ConflictKind.FORCED, (tx.op,), (), tx.start_ts, tx.start_ts)
        self.abort(tx, info)
        return info

    def _validate(self, tx: Transaction) -> ConflictInfo | None:
        start = tx.start_ts
        for oid in tx.writes:
            obj = self.objects.get(oid)
            if obj is not None and obj.versions[0].ts > start:
                return self._conflict(tx, oid, ConflictKind.WRITE_WRITE, obj.versions[0])
        for oid in tx.reads:
            if oid in tx.writes:
                continue
            obj = self.objects[oid]
            if obj.versions[0].ts > start:
                return self._conflict(tx, oid, ConflictKind.READ_WRITE, obj.versions[0])
            if obj.intent is not None and obj.intent != tx.id:
                return self._conflict(tx, oid, ConflictKind.READ_WRITE, obj.versions[0])
        return None

    def _finish_commit(self, tx: Transaction, order_key: tuple) -> None:
        self.active.pop(tx.worker, None)
        self.commits += 1
        for hook in tx.on_commit:
            hook()
        if self.on_commit_hook is not None:
            self.on_commit_hook(tx, order_key)

    def abort(self, tx: Transaction, conflict: ConflictInfo) -> None:
        tx.status = TxStatus.ABORTED
        tx.conflict = conflict
        tx.effects.clear()
        for restore in reversed(tx.undo):
            restore()
        tx.undo.clear()
        for oid in tx.writes:
            obj = self.objects.get(oid)
            if obj is not None and obj.intent == tx.id:
                obj.intent = None
        self.active.pop(tx.worker, None)
        self.aborts += 1

    # -- execution --------------------------------------------------------
    def attempts(self, worker: int, body: Callable[[Transaction], None],
                 policy: RetryPolicy | None = None, *, base_ns: Callable[[], int] | None = None,
                 clock: Callable[[], int] | None = None,
                 on_abort: Callable[[Transaction, ConflictInfo], None] | None = None,
                 prepare: Callable[[Transaction], None] | None = None,
                 ) -> Generator[int, None, BatchOutcome]:
        """Run ``body`` transactionally until it commits.

        Yields virtual ns to charge: once after the body (the commit then
        happens at the advanced time) and once per backoff.  A forced abort
        from the fault injector is virtual-time transparent: the retry reuses
        the aborted attempt's time base and snapshot and charges nothing, so
        an injected run follows the same schedule and serialization order as
        an uninjected one.
        """
        policy = policy or RetryPolicy()
        aborts = 0
        real_aborts = 0  # forced aborts do not feed the backoff schedule
        replay_base = replay_ts = None
        while True:
            base = replay_base if replay_base is not None else (base_ns() if base_ns else 0)
            tx = self.begin(worker, base, clock, replay_ts)
            tx.abort_count = aborts
            if prepare is not None:
                prepare(tx)
            conflict = None
            try:
                with _Ambient(tx):
                    body(tx)
            except TxAbort as exc:
                conflict = exc.conflict
            except BaseException:
                self.abort(tx, ConflictInfo(None, ConflictKind.FORCED))
                self.aborts -= 1
                raise
            if replay_base is None:
                # the commit (or the abort) lands once body and commit work have elapsed
                tx.cost += self.commit_cost(tx)
                yield tx.cost
            if conflict is not None:
                self.abort(tx, conflict)
            else:
                conflict = self.commit(tx)
                if conflict is None:
                    return BatchOutcome(tx.commit_ts, aborts, tx)
            aborts += 1
            if on_abort is not None:
                on_abort(tx, conflict)
            if conflict.kind is ConflictKind.FORCED:
                replay_base, replay_ts = base, tx.start_ts
                continue
            replay_base = replay_ts = None
            real_aborts += 1
            pause = policy.backoff(real_aborts)
            if pause:
                yield pause

    def execute_with_retry(self, worker: int, body: Callable[[Transaction], None],
                           policy: RetryPolicy | None = None, advance: Callable[[int], None] | None = None,
                           **kw) -> BatchOutcome:
        """Synchronous driver for :meth:`attempts`; ``advance`` receives each charge."""
        gen = self.attempts(worker, body, policy, **kw)
        try:
            while True:
                ns = next(gen)
                if advance is not None:
                    advance(ns)
        except StopIteration as stop:
            return stop.value

    # -- reclamation -----------------------------------------------------------
    def min_active_start(self) -> int:
        clock = self.clock.value
        starts = [tx.start_ts if tx.start_ts >= 0 else 0 for tx in list(self.active.values())]
        return min(starts + [clock])

    def collect_garbage(self, min_active_start_ts: int | None = None) -> int:
        """Drop versions no active or future snapshot can see."""
        horizon = self.min_active_start() if min_active_start_ts is None else min_active_start_ts
        reclaimed = 0
        for oid in list(self._multi):
            versions = self.objects[oid].versions
            for i, v in enumerate(versions):
                if v.ts <= horizon:
                    if len(versions) > i + 1:
                        reclaimed += len(versions) - i - 1
                        del versions[i + 1:]
                    break
            if len(versions) == 1:
                self._multi.discard(oid)
        return reclaimed


def seeded_injector(probability: float, seed: int = 0) -> Callable[[Transaction], bool]:
    """Abort each commit attempt independently with ``probability``."""
    rng = random.Random(seed)
    return lambda tx: rng.random() < probability


def first_k_injector(k: int) -> Callable[[Transaction], bool]:
    """Abort the first ``k`` commit attempts of every transaction body."""
    return lambda tx: tx.abort_count < k
