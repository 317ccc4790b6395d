"""Session firewall: LAN-initiated sessions pass both ways, WAN-initiated ones are dropped."""
from __future__ import annotations

from dataclasses import dataclass

from ..dispatch import NfDefinition
from ..packet import PacketSetSpec
from .common import ms_to_ns, params_from

# both directions of a session share one canonical key
SPEC = PacketSetSpec.of(ipv4=["src_ip", "dst_ip", "l4_proto"], l4=["src_port", "dst_port"], symmetric=True)


@dataclass
class FirewallParams:
    session_timeout_ms: float = 10.0
    lan_dev: int = 0


def build_firewall(params: dict | FirewallParams | None = None) -> NfDefinition:
    p = params_from(FirewallParams, params)
    timeout = ms_to_ns(p.session_timeout_ms)

    def init_pkt_set(ctx, pkt):
        if pkt.dev != p.lan_dev:
            ctx.drop("unsolicited")
            return
        ctx.register_pkt_set(timeout)
        ctx.send()

    def pkt_handler(ctx, pkt):
        ctx.send()

    return NfDefinition("fw", SPEC, init_pkt_set=init_pkt_set, pkt=pkt_handler, params=vars(p).copy())
