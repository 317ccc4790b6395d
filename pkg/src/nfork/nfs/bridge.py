"""Learning bridge between two segments (device 0 and 1).

The MAC table maps a source MAC to (segment, last refresh time).  An entry
is rewritten when the MAC moves segment, or when its last refresh is older
than ``refresh_interval`` (0 rewrites on every packet).  Entries idle longer
than ``validity`` are ignored on lookup and swept by the periodic handler.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..dispatch import NfDefinition
from ..ds import TMap
from .common import ms_to_ns, params_from


@dataclass
class BridgeParams:
    validity_ms: float = 120_000.0
    refresh_interval_ms: float = 0.0
    sweep_interval_ms: float = 1_000.0
    map_buckets: int = 1024


def build_bridge(params: dict | BridgeParams | None = None) -> NfDefinition:
    p = params_from(BridgeParams, params)
    validity = ms_to_ns(p.validity_ms)
    interval = ms_to_ns(p.refresh_interval_ms)

    def init_nf(ctx):
        ctx.agg.macs = TMap(ctx.store, "macs", p.map_buckets)

    def orphan(ctx, pkt):
        macs = ctx.agg.macs
        ts = pkt.ts
        src = macs.get(pkt.hv.src_mac)
        if src is None or src[0] != pkt.dev or interval == 0 or ts - src[1] > interval:
            macs.set(pkt.hv.src_mac, (pkt.dev, ts))
        dst = macs.get(pkt.hv.dst_mac)
        if dst is None or ts - dst[1] > validity:
            ctx.send(dev=1 - pkt.dev)  # flood: with two segments, the other one
        elif dst[0] == pkt.dev:
            ctx.drop("same segment")
        else:
            ctx.send(dev=dst[0])

    def sweep(ctx):
        now = ctx.now
        for mac, (_, last) in ctx.agg.macs.items():
            if now - last > validity:
                ctx.agg.macs.remove(mac)

    return NfDefinition("bridge", init_nf=init_nf, orphan_pkt=orphan, periodic=sweep,
                        periodic_interval_ns=ms_to_ns(p.sweep_interval_ms), params=vars(p).copy())
