from __future__ import annotations

import dataclasses
from typing import Any, TypeVar

from ..dispatch import ConfigError
from ..packet import L4Proto, Packet, build_frame

P = TypeVar("P")

MS = 1_000_000
SEC = 1_000_000_000


def params_from(cls: type[P], values: dict | P | None) -> P:
    """Build a params dataclass from a config mapping, rejecting unknown keys."""
    if values is None:
        return cls()
    if isinstance(values, cls):
        return values
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} parameter(s): {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from None


def ms_to_ns(ms: float) -> int:
    return int(round(ms * MS))


def rewrite(pkt: Packet, **changes: Any) -> bytes:
    """Re-serialize ``pkt`` with some header fields replaced."""
    hv = pkt.hv
    fields = dict(src_mac=hv.src_mac, dst_mac=hv.dst_mac, src_ip=hv.src_ip, dst_ip=hv.dst_ip,
                  proto=hv.l4_proto, src_port=hv.src_port or 0, dst_port=hv.dst_port or 0,
                  payload_len=hv.payload_len)
    fields.update(changes)
    return build_frame(**fields)


def is_l4(pkt: Packet) -> bool:
    return pkt.hv.l4_proto in (L4Proto.TCP, L4Proto.UDP)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)
