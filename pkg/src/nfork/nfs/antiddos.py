"""SYN-flood style detector: alarm when most live TCP flows have one packet."""
from __future__ import annotations

from dataclasses import dataclass

from ..dispatch import NfDefinition
from ..ds import TDistributedObject
from ..packet import PacketSetSpec
from .common import ms_to_ns, params_from

SPEC = PacketSetSpec.of(ipv4=["src_ip", "dst_ip"], tcp=["src_port", "dst_port"])


@dataclass
class AntiDdosParams:
    ctr_staleness_ms: float = 0.0
    threshold: float = 0.8
    flow_timeout_ms: float = 10.0


def _merge(acc: tuple, part: tuple) -> tuple:
    return (acc[0] + part[0], acc[1] + part[1])


def build_antiddos(params: dict | AntiDdosParams | None = None) -> NfDefinition:
    p = params_from(AntiDdosParams, params)
    staleness = ms_to_ns(p.ctr_staleness_ms)
    timeout = ms_to_ns(p.flow_timeout_ms)

    def init_nf(ctx):
        # counters are (flows, one-packet flows)
        ctx.agg.ctrs = TDistributedObject(ctx.store, "ctrs", ctx.n_slots, (0, 0), _merge, staleness)

    def init_pkt_set(ctx, pkt):
        ctx.state.one_pkt = True
        ctx.agg.ctrs.update(lambda c: (c[0] + 1, c[1] + 1))
        ctx.register_pkt_set(timeout)
        flows, one = ctx.agg.ctrs.read(ctx.now)
        if one > p.threshold * flows:
            ctx.drop("ddos")
        else:
            ctx.send()

    def pkt_handler(ctx, pkt):
        if ctx.state.one_pkt:
            ctx.state.one_pkt = False
            ctx.agg.ctrs.update(lambda c: (c[0], c[1] - 1))
        ctx.send()

    def expired(ctx, pkt):
        one = 1 if ctx.state.one_pkt else 0
        ctx.agg.ctrs.update(lambda c: (c[0] - 1, c[1] - one))

    return NfDefinition("antiddos", SPEC, init_nf=init_nf, init_pkt_set=init_pkt_set, pkt=pkt_handler,
                        expired_pkt_set=expired, params=vars(p).copy())
