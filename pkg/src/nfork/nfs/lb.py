"""Maglev-style load balancer with connection affinity and health checks."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..dispatch import NfDefinition
from ..ds import TVector
from ..ds.tmap import fnv1a64
from ..packet import PacketSetSpec, int_to_ip, ip_to_int
from .common import ms_to_ns, params_from, rewrite, splitmix64

SPEC = PacketSetSpec.of(ipv4=["src_ip", "dst_ip"], tcp=["src_port", "dst_port"])


def _is_prime(n: int) -> bool:
    return n >= 2 and all(n % d for d in range(2, int(n ** 0.5) + 1))


def maglev_permutation(name: str, m: int) -> list[int]:
    h = fnv1a64(name.encode())
    offset = h % m
    skip = splitmix64(h) % (m - 1) + 1
    return [(offset + j * skip) % m for j in range(m)]


def maglev_table(names: list[str], m: int) -> list[int]:
    """Fill an ``m``-slot lookup table by round-robin over backend preference lists."""
    if not names:
        raise ValueError("need at least one backend")
    if not _is_prime(m):
        raise ValueError("table size must be prime")
    perms = [maglev_permutation(n, m) for n in names]
    nxt = [0] * len(names)
    table = [-1] * m
    filled = 0
    while True:
        for b, perm in enumerate(perms):
            c = perm[nxt[b]]
            while table[c] >= 0:
                nxt[b] += 1
                c = perm[nxt[b]]
            table[c] = b
            nxt[b] += 1
            filled += 1
            if filled == m:
                return table


@dataclass
class LbParams:
    backends: list = field(default_factory=lambda: ["10.1.0.1", "10.1.0.2", "10.1.0.3", "10.1.0.4"])
    table_size: int = 251
    health_interval_ms: float = 1.0
    flow_timeout_ms: float = 10.0
    # scripted health changes: [time_ms, backend index, healthy]
    health_schedule: list = field(default_factory=list)

    def __post_init__(self):
        if not self.backends:
            raise ValueError("need at least one backend")
        if not _is_prime(self.table_size) or self.table_size <= len(self.backends):
            raise ValueError("table size must be a prime larger than the backend count")


def flow_hash(pkt) -> int:
    hv = pkt.hv
    return fnv1a64(b"%d|%d|%d|%d|%d" % (hv.src_ip, hv.dst_ip, int(hv.l4_proto), hv.src_port, hv.dst_port))


def build_lb(params: dict | LbParams | None = None) -> NfDefinition:
    p = params_from(LbParams, params)
    ips = [ip_to_int(b) if isinstance(b, str) else int(b) for b in p.backends]
    names = [int_to_ip(ip) for ip in ips]
    table = maglev_table(names, p.table_size)
    interval = ms_to_ns(p.health_interval_ms)
    timeout = ms_to_ns(p.flow_timeout_ms)
    schedule = sorted((ms_to_ns(t), int(b), bool(h)) for t, b, h in p.health_schedule)

    def init_nf(ctx):
        ctx.agg.health = TVector(ctx.store, "health", len(ips), True)
        ctx.agg.table = TVector(ctx.store, "maglev", p.table_size, 0)
        for i, b in enumerate(table):
            ctx.agg.table.write(i, b)

    def pick(ctx, pkt) -> int | None:
        m = p.table_size
        start = flow_hash(pkt) % m
        tried = set()
        for j in range(m):
            b = ctx.agg.table.read((start + j) % m)
            if b in tried:
                continue
            if ctx.agg.health.read(b):
                return b
            tried.add(b)
            if len(tried) == len(ips):
                break
        return None

    def init_pkt_set(ctx, pkt):
        b = pick(ctx, pkt)
        if b is None:
            ctx.drop("no healthy backend")
            return
        ctx.state.backend = b
        ctx.register_pkt_set(timeout)
        ctx.send(rewrite(pkt, dst_ip=ips[b]))

    def pkt_handler(ctx, pkt):
        ctx.send(rewrite(pkt, dst_ip=ips[ctx.state.backend]))

    def health_check(ctx):
        now = ctx.now
        for t, b, healthy in schedule:
            if now - interval < t <= now:
                ctx.agg.health.write(b, healthy)

    return NfDefinition("lb", SPEC, init_nf=init_nf, init_pkt_set=init_pkt_set, pkt=pkt_handler,
                        periodic=health_check if schedule else None, periodic_interval_ns=interval,
                        params={**vars(p), "table": table})
