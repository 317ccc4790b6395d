"""Per-destination token-bucket policer (one token per packet).

Tokens are kept in nano-tokens so refill arithmetic stays integral:
``rate_pps`` packets per second add ``rate_pps`` nano-tokens per ns.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..dispatch import NfDefinition
from ..packet import PacketSetSpec
from .common import SEC, ms_to_ns, params_from

SPEC = PacketSetSpec.of(ipv4=["dst_ip"])


@dataclass
class PolicerParams:
    rate_pps: int = 1_000_000
    burst: int = 32
    idle_timeout_ms: float = 100.0

    def __post_init__(self):
        if self.rate_pps <= 0 or self.burst < 1:
            raise ValueError("rate must be > 0 and burst >= 1")


def refill(tokens: int, last: int, now: int, rate_pps: int, burst: int) -> int:
    return min(burst * SEC, tokens + rate_pps * max(0, now - last))


def build_policer(params: dict | PolicerParams | None = None) -> NfDefinition:
    p = params_from(PolicerParams, params)
    timeout = ms_to_ns(p.idle_timeout_ms)

    def admit(ctx, pkt):
        s = ctx.state
        tokens = refill(s.tokens, s.last, pkt.ts, p.rate_pps, p.burst)
        s.last = pkt.ts
        if tokens >= SEC:
            s.tokens = tokens - SEC
            ctx.send()
        else:
            s.tokens = tokens
            ctx.drop("rate")

    def init_pkt_set(ctx, pkt):
        ctx.state.tokens = p.burst * SEC
        ctx.state.last = pkt.ts
        ctx.register_pkt_set(timeout)
        admit(ctx, pkt)

    return NfDefinition("policer", SPEC, init_pkt_set=init_pkt_set, pkt=admit, params=vars(p).copy())
