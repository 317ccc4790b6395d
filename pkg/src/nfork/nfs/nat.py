"""Endpoint-independent NAT over a pool of public (IP, port) pairs.

No packet sets: every packet goes through the orphan handler and touches
only aggregate state, the forward map (LAN endpoint to public pair), the
reverse map and the pair allocator.  Leases expire after ``mapping_ttl``;
a mapping is refreshed at most once per ``refresh_interval``.
"""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass

from ..dispatch import NfDefinition
from ..ds import Exhausted, TAllocator, TMap
from ..packet import ip_to_int
from .common import ms_to_ns, params_from, rewrite, is_l4


@dataclass
class NatParams:
    public_ips: int = 53
    ports_per_ip: int = 256
    first_public_ip: str = "198.18.0.1"
    first_port: int = 1024
    mapping_ttl_ms: float = 60_000.0
    refresh_interval_ms: float = 1_000.0
    map_buckets: int = 1 << 20

    def __post_init__(self):
        if self.public_ips < 1 or self.ports_per_ip < 1:
            raise ValueError("public pool must hold at least one pair")
        ipaddress.IPv4Address(self.first_public_ip)


def public_pairs(p: NatParams) -> list[tuple[int, int]]:
    base = ip_to_int(p.first_public_ip)
    return [(base + i, p.first_port + j) for i in range(p.public_ips) for j in range(p.ports_per_ip)]


def build_nat(params: dict | NatParams | None = None) -> NfDefinition:
    p = params_from(NatParams, params)
    ttl = ms_to_ns(p.mapping_ttl_ms)
    refresh = ms_to_ns(p.refresh_interval_ms)
    pairs = public_pairs(p)

    def lease_expired(ctx, pair):
        ep = ctx.agg.rev.get(pair)
        ctx.agg.rev.remove(pair)
        if ep is not None:
            ctx.agg.fwd.remove(ep)

    def init_nf(ctx):
        ctx.agg.pairs = TAllocator(ctx.store, "pairs", pairs, ctx.n_workers, ttl, on_expire=lease_expired)
        ctx.agg.fwd = TMap(ctx.store, "nat_fwd", p.map_buckets)
        ctx.agg.rev = TMap(ctx.store, "nat_rev", p.map_buckets)

    def orphan(ctx, pkt):
        hv = pkt.hv
        if not is_l4(pkt):
            ctx.drop("not tcp/udp")
            return
        a = ctx.agg
        if pkt.dev == 0:
            ep = (hv.src_ip, hv.src_port, int(hv.l4_proto))
            pair = a.fwd.get(ep)
            if pair is None:
                try:
                    pair = a.pairs.allocate()
                except Exhausted:
                    ctx.drop("pool exhausted")
                    return
                a.fwd.set(ep, pair)
                a.rev.set(pair, ep)
            else:
                expiry = a.pairs.expiry_of(pair)
                if expiry is not None and expiry - ctx.now < ttl - refresh:
                    a.pairs.refresh(pair)
            ctx.send(rewrite(pkt, src_ip=pair[0], src_port=pair[1]), dev=1)
        else:
            ep = a.rev.get((hv.dst_ip, hv.dst_port))
            if ep is None or ep[2] != int(hv.l4_proto):
                ctx.drop("no mapping")
                return
            ctx.send(rewrite(pkt, dst_ip=ep[0], dst_port=ep[1]), dev=0)

    return NfDefinition("nat", init_nf=init_nf, orphan_pkt=orphan, params=vars(p).copy())
