"""Worker pool, packet-set lifecycle and handler execution.

Packets are steered to workers by software RSS over their packet-set key;
orphans are spread round-robin.  A worker dequeues up to ``batch_size``
packets and runs each packet's handler inside one transaction:

* no key: ``orphan_pkt``
* no live entry for the key: ``init_pkt_set`` on a provisional entry, which
  survives only if the handler calls ``ctx.register_pkt_set``
* live entry: ``pkt`` (idle sets are expired inline first)

After each batch the worker expires idle packet sets.  Slot ``n_workers`` is
the coordinator, which runs ``init_NF``, ``exit_NF`` and ``periodic``.

Two drivers share this code.  :class:`Simulation` is a seeded discrete-event
loop over virtual nanoseconds (the default, fully reproducible); the
threaded driver runs one OS thread per worker and measures wall time.
"""
from __future__ import annotations

import collections
import enum
import heapq
import ipaddress
import itertools
import random
import threading
import time
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Any, Callable, Iterable

from .packet import (EMPTY_SPEC, NIC_MODELS, MalformedFrame, Packet, PacketSetSpec,
                     check_rss_compatibility, extract_packet_set_key, parse_packet, rss_select_worker)
from .stm import (MISSING, ConflictInfo, CostModel, Effect, EffectKind, RetryPolicy, Store,
                  Transaction, _current_or_none)

MAX_BATCH = 32
HANDLERS = ("init_nf", "exit_nf", "init_pkt_set", "pkt", "expired_pkt_set", "orphan_pkt", "periodic")


class ConfigError(ValueError):
    pass


class RssIncompatible(ConfigError):
    def __init__(self, fields: Iterable[str], nic: str = ""):
        self.fields = tuple(fields)
        super().__init__(f"NIC model {nic!r} cannot hash packet-set fields {list(self.fields)}")


class BadContext(RuntimeError):
    pass


class Verdict(enum.Enum):
    ACCEPTED = "Accepted"
    DROPPED = "Dropped"


Handler = Callable[..., None]


@dataclass
class NfDefinition:
    name: str
    spec: PacketSetSpec = EMPTY_SPEC
    init_nf: Handler | None = None
    exit_nf: Handler | None = None
    init_pkt_set: Handler | None = None
    pkt: Handler | None = None
    expired_pkt_set: Handler | None = None
    orphan_pkt: Handler | None = None
    periodic: Handler | None = None
    periodic_interval_ns: int = 0
    # used when the NF has no init_pkt_set handler: sets then go live implicitly
    default_timeout_ns: int = 1_000_000_000
    params: dict = field(default_factory=dict)


@dataclass
class RuntimeConfig:
    n_workers: int = 4
    batch_size: int = 1
    queue_capacity: int = 4096
    orphan_policy: str = "round_robin"
    nic: str = "e810"
    periodic_interval_ns: int | None = None  # overrides the NF's own interval
    lan_cidr: str = "10.0.0.0/8"
    seed: int = 0
    gc_every: int = 1024
    cost: CostModel = field(default_factory=CostModel)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    record_log: bool = True

    def validate(self) -> None:
        if self.n_workers < 1:
            raise ConfigError("n_workers must be >= 1")
        if not 1 <= self.batch_size <= MAX_BATCH:
            raise ConfigError(f"batch_size must be in 1..{MAX_BATCH}, got {self.batch_size}")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")
        if self.orphan_policy != "round_robin":
            raise ConfigError(f"unknown orphan policy {self.orphan_policy!r}")
        if self.nic not in NIC_MODELS:
            raise ConfigError(f"unknown NIC model {self.nic!r}; known: {sorted(NIC_MODELS)}")
        try:
            ipaddress.IPv4Network(self.lan_cidr)
        except ValueError as exc:
            raise ConfigError(f"bad lan_cidr: {exc}") from None


class VirtualClock:
    """Monotone nanosecond clock; ``mode`` is ``deterministic`` or ``real``."""

    def __init__(self, mode: str = "deterministic", start: int = 0):
        self.mode = mode
        self._now = start
        self._origin = time.perf_counter_ns()

    def now(self) -> int:
        if self.mode == "real":
            return time.perf_counter_ns() - self._origin
        return self._now

    def advance(self, ns: int) -> int:
        self._now += max(0, ns)
        return self._now

    def advance_to(self, t: int) -> int:
        if t > self._now:
            self._now = t
        return self._now


class SetState:
    """Attribute bag for packet-set state.  Assignments are undone on abort.

    Only rebinding is journaled: mutate containers by assigning a new value.
    """

    def __setattr__(self, name: str, value: Any) -> None:
        d = self.__dict__
        old = d.get(name, MISSING)
        tx = _current_or_none()
        if tx is not None:
            def restore(d=d, name=name, old=old):
                if old is MISSING:
                    d.pop(name, None)
                else:
                    d[name] = old
            tx.journal(restore)
        d[name] = value

    def __delattr__(self, name: str) -> None:
        self.__setattr__(name, MISSING)
        self.__dict__.pop(name, None)

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    def __repr__(self) -> str:
        return f"SetState({self.__dict__})"


@dataclass(eq=False)
class PacketSetEntry:
    key: bytes
    state: SetState
    owner: int
    live: bool = False
    timeout_ns: int = 0
    last_ts: int = 0

    @property
    def deadline(self) -> int:
        return self.last_ts + self.timeout_ns


@dataclass(slots=True)
class Queued:
    pkt: Packet
    key: bytes | None
    enq_ns: int


@dataclass(frozen=True, slots=True)
class Emission:
    order_key: tuple
    worker: int
    seq: int
    kind: str  # send | drop | log
    data: Any

    def line(self) -> str:
        if self.kind == "send":
            dev, raw = self.data
            return f"send {self.seq} {dev} {raw.hex()}"
        return f"{self.kind} {self.seq} {self.data!r}"


@dataclass(frozen=True)
class CommitRecord:
    order_key: tuple
    worker: int
    events: tuple
    aborts: int = 0


@dataclass
class FinalStats:
    ingested: int = 0
    processed: int = 0
    dropped: int = 0
    malformed: int = 0
    in_queue: int = 0
    commits: int = 0
    aborts: int = 0
    expired: int = 0
    emitted: int = 0
    handler_counts: dict = field(default_factory=dict)
    per_worker_processed: list = field(default_factory=list)


class HandlerContext:
    """What a handler sees: aggregate structures, its set state, time, effects."""

    __slots__ = ("runtime", "handler", "worker", "pkt", "entry", "tx", "_now")

    def __init__(self, runtime: "Runtime", handler: str, worker: int, tx: Transaction | None,
                 pkt: Packet | None = None, entry: PacketSetEntry | None = None, now: int | None = None):
        self.runtime = runtime
        self.handler = handler
        self.worker = worker
        self.tx = tx
        self.pkt = pkt
        self.entry = entry
        self._now = now

    @property
    def agg(self) -> SimpleNamespace:
        return self.runtime.agg

    @property
    def store(self) -> Store:
        return self.runtime.store

    @property
    def params(self) -> dict:
        return self.runtime.nf.params

    @property
    def n_workers(self) -> int:
        return self.runtime.config.n_workers

    @property
    def n_slots(self) -> int:
        return self.runtime.config.n_workers + 1

    @property
    def state(self) -> SetState | None:
        return self.entry.state if self.entry is not None else None

    @property
    def now(self) -> int:
        if self._now is not None:
            return self._now
        return self.tx.now() if self.tx is not None else 0

    def _emit(self, kind: str, data: Any) -> None:
        if self.tx is None:
            raise BadContext("effects need a transaction")
        seq = self.pkt.seq if self.pkt is not None else -1
        self.tx.buffer_effect(Effect(EffectKind.SEND if kind == "send" else EffectKind.LOG, (kind, seq, data)))

    def send(self, raw: bytes | None = None, dev: int | None = None) -> None:
        """Emit a frame (default: the current packet, unchanged, out of the other device)."""
        if raw is None:
            if self.pkt is None:
                raise BadContext("no current packet to forward")
            raw = self.pkt.raw
        if dev is None:
            dev = 1 - self.pkt.dev if self.pkt is not None else 0
        self._emit("send", (dev, bytes(raw)))

    def drop(self, reason: str = "") -> None:
        self._emit("drop", reason)

    def log(self, record: Any) -> None:
        self._emit("log", record)

    def register_pkt_set(self, timeout_ns: int) -> None:
        if self.handler != "init_pkt_set" or self.entry is None:
            raise BadContext(f"register_pkt_set called from {self.handler!r}; only init_pkt_set may register")
        if timeout_ns < 0:
            raise ValueError("timeout must be >= 0")
        e = self.entry
        prev = (e.live, e.timeout_ns)
        self.tx.journal(lambda: (setattr(e, "live", prev[0]), setattr(e, "timeout_ns", prev[1])))
        e.live = True
        e.timeout_ns = timeout_ns


class WorkerState:
    def __init__(self, index: int, capacity: int):
        self.index = index
        self.capacity = capacity
        self.queue: collections.deque[Queued] = collections.deque()
        self.entries: dict[bytes, PacketSetEntry] = {}
        self.deadlines: list[tuple[int, int, bytes]] = []
        self.clock = VirtualClock()
        self.processed = 0
        self.busy = False


class Runtime:
    """One running NF instance.  Use :func:`start_nf` to construct."""

    def __init__(self, nf: NfDefinition, config: RuntimeConfig | None = None, profiler=None):
        config = config or RuntimeConfig()
        config.validate()
        nic = NIC_MODELS[config.nic]
        report = check_rss_compatibility(nf.spec, nic)
        if not report.compatible:
            raise RssIncompatible(report.unsupported, nic.name)
        self.nf = nf
        self.config = config
        self.profiler = profiler
        self.store = Store(config.cost, gc_every=config.gc_every)
        if profiler is not None:
            profiler.bind(self.store.structures)
        self.store.on_commit_hook = self._on_commit
        self.agg = SimpleNamespace()
        self.coordinator = config.n_workers
        self.workers = [WorkerState(i, config.queue_capacity) for i in range(config.n_workers)]
        self.coord_clock = VirtualClock()
        self.lan = ipaddress.IPv4Network(config.lan_cidr)
        self.interval = (config.periodic_interval_ns if config.periodic_interval_ns is not None
                         else nf.periodic_interval_ns)
        self.log: list[CommitRecord] = []
        self.emissions: list[Emission] = []
        self.handler_counts: collections.Counter = collections.Counter()
        self.done_ns: dict[int, int] = {}      # seq -> commit time (virtual ns)
        self.arrival_ns: dict[int, int] = {}
        self.ingested = 0
        self.dropped = 0
        self.malformed = 0
        self.expired = 0
        self.periodic_fired = 0
        self._rr = itertools.count()
        self._seq = itertools.count()
        self._heap_tie = itertools.count()
        self._lock = threading.Lock()
        self.stopped = False
        self.stats: FinalStats | None = None
        self._batch = [None] * (config.n_workers + 1)
        self._coordinator_tx("init_nf", 0)

    # -- plumbing -------------------------------------------------------------
    def _on_commit(self, tx: Transaction, order_key: tuple) -> None:
        if self.config.record_log and tx.tags:
            self.log.append(CommitRecord(order_key, tx.worker, tuple(tx.tags), tx.abort_count))
        for eff in tx.effects:
            kind, seq, data = eff.payload
            self.emissions.append(Emission(order_key, tx.worker, seq, kind, data))

    def _on_abort(self, tx: Transaction, conflict: ConflictInfo) -> None:
        if self.profiler is not None:
            self.profiler.on_abort(tx, conflict)

    def _invoke(self, tx: Transaction, name: str, worker: int, pkt: Packet | None,
                entry: PacketSetEntry | None, now: int | None = None) -> bool:
        fn = getattr(self.nf, name)
        if fn is None:
            return False
        tx.site = f"{self.nf.name}:{name}"
        ctx = HandlerContext(self, name, worker, tx, pkt, entry, now)
        if name in ("init_nf", "exit_nf", "periodic"):
            fn(ctx)
        else:
            fn(ctx, pkt)
        tx.tags_counts[name] += 1
        return True

    def _prepare(self, tx: Transaction) -> None:
        tx.tags_counts = collections.Counter()
        tx.on_commit.append(lambda: self._merge_counts(tx))

    def _count_expired(self, k: int) -> None:
        if k:
            with self._lock:
                self.expired += k

    def _merge_counts(self, tx: Transaction) -> None:
        with self._lock:
            self.handler_counts.update(tx.tags_counts)

    def _attempts(self, worker: int, body: Callable[[Transaction], None], clock: VirtualClock,
                  tx_clock: Callable[[], int] | None = None):
        return self.store.attempts(worker, body, self.config.retry, base_ns=clock.now, clock=tx_clock,
                                   on_abort=self._on_abort, prepare=self._prepare)

    def _run_sync(self, gen, clock: VirtualClock):
        try:
            while True:
                clock.advance(next(gen))
        except StopIteration as stop:
            return stop.value

    def _coordinator_gen(self, handler: str, now: int):
        event = {"init_nf": ("init_nf",), "exit_nf": ("exit_nf",)}.get(handler, ("periodic", now))

        def body(tx: Transaction) -> None:
            tx.tags.append(event)
            self._invoke(tx, handler, self.coordinator, None, None,
                         now if handler == "periodic" else None)

        return self._attempts(self.coordinator, body, self.coord_clock)

    def _coordinator_tx(self, handler: str, now: int):
        self.coord_clock.advance_to(now)
        return self._run_sync(self._coordinator_gen(handler, now), self.coord_clock)

    # -- ingress ------------------------------------------------------------
    def device_of(self, pkt_hv) -> int:
        if pkt_hv.src_ip is None:
            return 0
        return 0 if (pkt_hv.src_ip & int(self.lan.netmask)) == int(self.lan.network_address) else 1

    def ingest_packet(self, raw: bytes, ts: int, seq: int | None = None) -> Verdict:
        """Parse, steer and enqueue one frame (arrival time ``ts`` in ns)."""
        self.ingested += 1
        try:
            hv = parse_packet(raw, ts)
        except MalformedFrame:
            self.malformed += 1
            self.dropped += 1
            return Verdict.DROPPED
        seq = next(self._seq) if seq is None else seq
        pkt = Packet(raw, hv, seq, self.device_of(hv))
        key = extract_packet_set_key(hv, self.nf.spec)
        if key is None:
            w = next(self._rr) % self.config.n_workers
        else:
            w = rss_select_worker(key, self.config.n_workers)
        ws = self.workers[w]
        if len(ws.queue) >= ws.capacity:
            self.dropped += 1
            return Verdict.DROPPED
        ws.queue.append(Queued(pkt, key, ts))
        self.arrival_ns[seq] = ts
        self.last_worker = w
        return Verdict.ACCEPTED

    def worker_of(self, raw: bytes) -> int | None:
        """Worker a keyed frame is steered to (None for orphans)."""
        key = extract_packet_set_key(parse_packet(raw), self.nf.spec)
        return None if key is None else rss_select_worker(key, self.config.n_workers)

    # -- packet-set machinery --------------------------------------------------
    def _push_deadline(self, ws: WorkerState, entry: PacketSetEntry) -> None:
        heapq.heappush(ws.deadlines, (entry.deadline, next(self._heap_tie), entry.key))

    def _add_entry(self, tx: Transaction, ws: WorkerState, entry: PacketSetEntry) -> None:
        ws.entries[entry.key] = entry
        tx.journal(lambda: ws.entries.pop(entry.key, None))

    def _del_entry(self, tx: Transaction, ws: WorkerState, entry: PacketSetEntry) -> None:
        del ws.entries[entry.key]
        tx.journal(lambda: ws.entries.__setitem__(entry.key, entry))

    def _expire_entry(self, tx: Transaction, ws: WorkerState, entry: PacketSetEntry) -> None:
        tx.tags.append(("expire", None, entry.key))
        self._invoke(tx, "expired_pkt_set", ws.index, None, entry)
        self._del_entry(tx, ws, entry)
        tx.tags_counts["_expired"] += 1

    def _handle(self, tx: Transaction, ws: WorkerState, q: Queued) -> None:
        pkt, key = q.pkt, q.key
        tx.cost += self.store.cost.per_packet
        if key is None:
            tx.tags.append(("orphan", pkt.seq, None))
            self._invoke(tx, "orphan_pkt", ws.index, pkt, None)
            return
        entry = ws.entries.get(key)
        if entry is not None and entry.live and pkt.ts - entry.last_ts > entry.timeout_ns:
            self._expire_entry(tx, ws, entry)
            entry = None
        if entry is None:
            entry = PacketSetEntry(key, SetState(), ws.index, last_ts=pkt.ts)
            self._add_entry(tx, ws, entry)
            if self.nf.init_pkt_set is None:
                entry.live = True
                entry.timeout_ns = self.nf.default_timeout_ns
            else:
                self._invoke(tx, "init_pkt_set", ws.index, pkt, entry)
            tx.tags.append(("init", pkt.seq, key, entry.live))
            if entry.live:
                self._push_deadline(ws, entry)
            else:
                self._del_entry(tx, ws, entry)
            return
        if entry.owner != ws.index:
            raise AssertionError("packet-set entry used off its owning worker")
        tx.tags.append(("pkt", pkt.seq, key))
        self._invoke(tx, "pkt", ws.index, pkt, entry)
        prev = entry.last_ts
        tx.journal(lambda: setattr(entry, "last_ts", prev))
        entry.last_ts = pkt.ts
        self._push_deadline(ws, entry)

    def _batch_gen(self, ws: WorkerState, batch: list[Queued], tx_clock=None):
        def body(tx: Transaction) -> None:
            for q in batch:
                self._handle(tx, ws, q)

        outcome = yield from self._attempts(ws.index, body, ws.clock, tx_clock)
        done = ws.clock.now()
        for q in batch:
            self.done_ns[q.pkt.seq] = done
        ws.processed += len(batch)
        self._count_expired(outcome.tx.tags_counts.get("_expired", 0))
        return len(batch)

    def _scan_now(self, ws: WorkerState, now: int) -> int:
        # a set cannot be declared idle past the arrival time of a packet still queued
        if ws.queue:
            return min(now, ws.queue[0].pkt.ts)
        return now

    def _expiry_candidates(self, ws: WorkerState, scan_now: int) -> list[bytes]:
        cands, seen = [], set()
        heap = ws.deadlines
        while heap and heap[0][0] < scan_now:
            deadline, _, key = heapq.heappop(heap)
            e = ws.entries.get(key)
            if e is not None and e.live and e.deadline == deadline and key not in seen:
                seen.add(key)
                cands.append(key)
        return cands

    def _expire_gen(self, ws: WorkerState, now: int, tx_clock=None):
        scan_now = self._scan_now(ws, now)
        cands = self._expiry_candidates(ws, scan_now)
        n = 0
        size = self.config.batch_size
        for i in range(0, len(cands), size):
            chunk = cands[i:i + size]

            def body(tx: Transaction, chunk=chunk) -> None:
                for key in chunk:
                    e = ws.entries.get(key)
                    if e is not None and e.live and scan_now - e.last_ts > e.timeout_ns:
                        tx.cost += self.store.cost.per_packet
                        self._expire_entry(tx, ws, e)

            outcome = yield from self._attempts(ws.index, body, ws.clock, tx_clock)
            k = outcome.tx.tags_counts.get("_expired", 0)
            self._count_expired(k)
            n += k
        for alloc in self._leased_structures():
            nd = alloc.next_deadline(alloc.slot_of(ws.index))
            if nd is not None and nd <= now:
                def body(tx: Transaction, alloc=alloc) -> None:
                    rids = alloc.expire_step(now)
                    if rids:
                        tx.tags.append(("lease_expire", None, alloc.name, tuple(rids)))
                        tx.site = f"{self.nf.name}:lease_expired"
                        if alloc.on_expire is not None:
                            ctx = HandlerContext(self, "lease_expired", ws.index, tx, None, None, now)
                            for rid in rids:
                                alloc.on_expire(ctx, rid)

                yield from self._attempts(ws.index, body, ws.clock, tx_clock)
        return n

    def _leased_structures(self):
        try:
            return self._leased
        except AttributeError:
            pass
        leased = [s for s in self.store.structures.values()
                  if hasattr(s, "next_deadline") and getattr(s, "on_expire", None) is not None]
        self._leased = leased
        return leased

    def next_wakeup(self, ws: WorkerState) -> int | None:
        """Earliest virtual time at which this idle worker has expiration work."""
        heap = ws.deadlines
        while heap:
            deadline, _, key = heap[0]
            e = ws.entries.get(key)
            if e is not None and e.live and e.deadline == deadline:
                break
            heapq.heappop(heap)
        t = heap[0][0] + 1 if heap else None
        for alloc in self._leased_structures():
            nd = alloc.next_deadline(alloc.slot_of(ws.index))
            if nd is not None and (t is None or nd < t):
                t = nd
        return t

    def _take_batch(self, ws: WorkerState) -> list[Queued]:
        batch = []
        q = ws.queue
        while q and len(batch) < self.config.batch_size:
            batch.append(q.popleft())
        return batch

    def _step_gen(self, ws: WorkerState, tx_clock=None):
        batch = self._take_batch(ws)
        n = 0
        if batch:
            n = yield from self._batch_gen(ws, batch, tx_clock)
        yield from self._expire_gen(ws, ws.clock.now(), tx_clock)
        return n

    # -- synchronous API ------------------------------------------------------------
    def worker_step(self, worker: int) -> int:
        """Process one batch on ``worker`` (virtual clock jumps to the head arrival)."""
        ws = self.workers[worker]
        if ws.queue:
            ws.clock.advance_to(ws.queue[0].pkt.ts)
        return self._run_sync(self._step_gen(ws), ws.clock)

    def expire_packet_sets(self, worker: int, now: int) -> int:
        ws = self.workers[worker]
        ws.clock.advance_to(now)
        return self._run_sync(self._expire_gen(ws, max(now, ws.clock.now())), ws.clock)

    def schedule_periodic(self, now: int) -> bool:
        """Fire the periodic handler if an interval boundary is due at ``now``."""
        if self.nf.periodic is None or not self.interval:
            return False
        due = (self.periodic_fired + 1) * self.interval
        if now < due:
            return False
        self.periodic_fired += 1
        self._coordinator_tx("periodic", due)
        return True

    def drain(self, max_steps: int | None = None) -> int:
        """Round-robin worker steps until every queue is empty."""
        n = steps = 0
        while any(ws.queue for ws in self.workers):
            for ws in self.workers:
                if ws.queue:
                    n += self.worker_step(ws.index)
                    steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        return n

    def stop_nf(self, drain: bool = True) -> FinalStats:
        if self.stopped:
            return self.stats
        if drain:
            self.drain()
        end = max([ws.clock.now() for ws in self.workers] + [self.coord_clock.now()])
        self._coordinator_tx("exit_nf", end)
        self.stopped = True
        processed = sum(ws.processed for ws in self.workers)
        counts = {k: v for k, v in self.handler_counts.items() if not k.startswith("_")}
        self.stats = FinalStats(
            ingested=self.ingested, processed=processed, dropped=self.dropped, malformed=self.malformed,
            in_queue=sum(len(ws.queue) for ws in self.workers), commits=self.store.commits,
            aborts=self.store.aborts, expired=self.expired,
            emitted=sum(1 for e in self.emissions if e.kind == "send"),
            handler_counts=counts, per_worker_processed=[ws.processed for ws in self.workers])
        return self.stats

    # -- output -----------------------------------------------------------------
    def ordered_emissions(self) -> list[Emission]:
        return sorted(self.emissions, key=lambda e: e.order_key)

    def ordered_log(self) -> list[CommitRecord]:
        return sorted(self.log, key=lambda r: r.order_key)

    def emission_stream(self):
        """Committed sends as ``(commit_ts, packet bytes)`` in serialization order."""
        for e in self.ordered_emissions():
            if e.kind == "send":
                yield e.order_key[0], e.data[1]

    def output_bytes(self) -> bytes:
        return "\n".join(e.line() for e in self.ordered_emissions()).encode()


def start_nf(nf: NfDefinition, config: RuntimeConfig | None = None, profiler=None) -> Runtime:
    return Runtime(nf, config, profiler)


def ingest_packet(handle: Runtime, raw: bytes, ts: int) -> Verdict:
    return handle.ingest_packet(raw, ts)


def worker_step(handle: Runtime, worker: int) -> int:
    return handle.worker_step(worker)


def expire_packet_sets(handle: Runtime, worker: int, now: int) -> int:
    return handle.expire_packet_sets(worker, now)


def schedule_periodic(handle: Runtime, now: int) -> bool:
    return handle.schedule_periodic(now)


def stop_nf(handle: Runtime) -> FinalStats:
    return handle.stop_nf()


# ---------------------------------------------------------------------------
# deterministic discrete-event driver

@dataclass(frozen=True)
class _Sleep:
    until: int | None  # None: wait for an arrival


class Simulation:
    """Seeded discrete-event execution of a runtime over a timestamped trace.

    Events at equal virtual times run arrivals first, then workers and the
    coordinator in a seeded random order.  A transaction's body executes at
    its begin time against the snapshot then current; its commit (and
    validation) happens once its virtual cost has elapsed, so concurrent
    transactions overlap exactly as their costs dictate.
    """

    def __init__(self, runtime: Runtime, seed: int | None = None):
        self.rt = runtime
        self.rng = random.Random(runtime.config.seed if seed is None else seed)
        self.heap: list = []
        self.now = 0
        self._tie = itertools.count()
        n = runtime.config.n_workers
        self.gens: list = [None] * (n + 1)
        self.parked: list = [None] * (n + 1)  # None = running/scheduled; else _Sleep
        self.sleep_token = [0] * (n + 1)

    def _push(self, t: int, prio: int, slot: int, token: int = 0) -> None:
        heapq.heappush(self.heap, (t, prio, self.rng.getrandbits(32), next(self._tie), slot, token))

    def _worker_loop(self, ws: WorkerState, horizon_ref: list):
        rt = self.rt
        while True:
            if ws.queue:
                yield from rt._step_gen(ws)
                continue
            yield from rt._expire_gen(ws, ws.clock.now())
            if ws.queue:
                continue
            wake = rt.next_wakeup(ws)
            if wake is not None and wake <= ws.clock.now():
                wake = ws.clock.now() + 1
            if wake is not None and wake > horizon_ref[0]:
                wake = None
            yield _Sleep(wake)

    def _coordinator_loop(self, horizon_ref: list):
        rt = self.rt
        k = 1
        while True:
            due = k * rt.interval
            if due > horizon_ref[0]:
                yield _Sleep(None)
                return
            if rt.coord_clock.now() < due:
                yield _Sleep(due)
                continue
            rt.periodic_fired += 1
            yield from rt._coordinator_gen("periodic", due)
            k += 1

    def _advance(self, slot: int) -> None:
        gen = self.gens[slot]
        clock = self.rt.coord_clock if slot == self.rt.coordinator else self.rt.workers[slot].clock
        clock.advance_to(self.now)
        try:
            r = next(gen)
        except StopIteration:
            self.parked[slot] = _Sleep(None)
            return
        if isinstance(r, _Sleep):
            self.parked[slot] = r
            self.sleep_token[slot] += 1
            if r.until is not None:
                self._push(max(r.until, self.now), 1, slot, self.sleep_token[slot])
            return
        clock.advance(r)
        self._push(clock.now(), 1, slot)

    def _wake(self, slot: int) -> None:
        if self.parked[slot] is not None:
            self.parked[slot] = None
            self.sleep_token[slot] += 1
            self._push(self.now, 1, slot)

    def run(self, trace: Iterable[tuple[int, bytes]], extra_ns: int = 0) -> Runtime:
        """Replay ``(ts_ns, frame)`` records, then run timers up to ``extra_ns`` past the last."""
        rt = self.rt
        records = list(trace)
        last = records[-1][0] if records else 0
        horizon = [last + extra_ns]
        for w, ws in enumerate(rt.workers):
            self.gens[w] = self._worker_loop(ws, horizon)
            self._push(0, 1, w)
        if rt.nf.periodic is not None and rt.interval:
            self.gens[rt.coordinator] = self._coordinator_loop(horizon)
            self._push(0, 1, rt.coordinator)
        else:
            self.parked[rt.coordinator] = _Sleep(None)
        arrivals = iter(enumerate(records))
        nxt = next(arrivals, None)
        while True:
            t_arr = nxt[1][0] if nxt is not None else None
            if self.heap and (t_arr is None or self.heap[0][0] < t_arr):
                t, _, _, _, slot, token = heapq.heappop(self.heap)
                if token and token != self.sleep_token[slot]:
                    continue  # superseded timer
                self.now = max(self.now, t)
                self.parked[slot] = None
                self._advance(slot)
            elif t_arr is not None:
                self.now = max(self.now, t_arr)
                seq, (ts, raw) = nxt
                if rt.ingest_packet(raw, ts, seq) is Verdict.ACCEPTED:
                    w = rt.last_worker
                    self._wake(w)
                nxt = next(arrivals, None)
            else:
                break
        return rt


# ---------------------------------------------------------------------------
# threaded driver

def run_threaded(runtime: Runtime, trace: Iterable[tuple[int, bytes]], prefill: bool = True,
                 idle_sleep_s: float = 0.0) -> float:
    """Process ``trace`` with one OS thread per worker; returns wall seconds.

    Handler time still follows the trace: a worker's clock is the arrival
    time of the packets it dequeues, so timeouts and staleness behave as in
    the deterministic driver.  With ``prefill`` every packet is queued
    before the clock starts, so the measurement covers processing only.
    The feeder (this thread) doubles as the coordinator for periodic ticks.
    """
    rt = runtime
    feeding_done = threading.Event()
    start = threading.Barrier(rt.config.n_workers + 1)

    def loop(ws: WorkerState) -> None:
        start.wait()
        while True:
            if ws.queue:
                ws.clock.advance_to(ws.queue[0].pkt.ts)
                for _ in rt._step_gen(ws):
                    pass
            elif feeding_done.is_set():
                return
            else:
                time.sleep(idle_sleep_s)

    def feed(records) -> None:
        for ts, raw in records:
            rt.ingest_packet(raw, ts)
            rt.schedule_periodic(ts)

    records = list(trace)
    if prefill:
        feed(records)
        feeding_done.set()
    threads = [threading.Thread(target=loop, args=(ws,), daemon=True) for ws in rt.workers]
    for t in threads:
        t.start()
    t0 = time.perf_counter()
    start.wait()
    if not prefill:
        feed(records)
        feeding_done.set()
    for t in threads:
        t.join()
    return time.perf_counter() - t0
