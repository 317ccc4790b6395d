"""Reference NFs, registered under their CLI names."""
from __future__ import annotations

from typing import Callable

from ..dispatch import ConfigError, NfDefinition
from .antiddos import AntiDdosParams, build_antiddos
from .bridge import BridgeParams, build_bridge
from .firewall import FirewallParams, build_firewall
from .lb import LbParams, build_lb, maglev_table
from .microbench import MicrobenchParams, build_microbench
from .nat import NatParams, build_nat
from .policer import PolicerParams, build_policer

CATALOG: dict[str, tuple[Callable[..., NfDefinition], type]] = {
    "antiddos": (build_antiddos, AntiDdosParams),
    "nat": (build_nat, NatParams),
    "bridge": (build_bridge, BridgeParams),
    "lb": (build_lb, LbParams),
    "fw": (build_firewall, FirewallParams),
    "policer": (build_policer, PolicerParams),
    "microbench": (build_microbench, MicrobenchParams),
}


def build_nf(name: str, params: dict | None = None) -> NfDefinition:
    try:
        builder, _ = CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown NF {name!r}; known: {sorted(CATALOG)}") from None
    return builder(params or {})


__all__ = ["CATALOG", "build_nf", "build_antiddos", "build_nat", "build_bridge", "build_lb",
           "build_firewall", "build_policer", "build_microbench", "maglev_table"]
