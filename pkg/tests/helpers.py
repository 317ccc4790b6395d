"""Shared builders for the test suite."""
from __future__ import annotations

import struct

from nfork.dispatch import NfDefinition, Runtime, RuntimeConfig, Simulation
from nfork.packet import L4Proto, PacketSetSpec, build_frame
from nfork.profiler import Profiler, build_report

LAN_MAC = 0x02_00_0A_00_00_01
WAN_MAC = 0x02_00_C6_33_64_01


def raw_frame(src_mac: bytes, dst_mac: bytes, src_ip: bytes, dst_ip: bytes, proto: int,
              sport: int, dport: int, payload: bytes = b"") -> bytes:
    """Independent frame builder (hand-packed with struct, no checksum)."""
    if proto == 6:
        l4 = struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 5 << 4, 0x02, 65535, 0, 0)
    else:
        l4 = struct.pack("!HHHH", sport, dport, 8 + len(payload), 0)
    total = 20 + len(l4) + len(payload)
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total, 0, 0, 64, proto, 0, src_ip, dst_ip)
    return dst_mac + src_mac + b"\x08\x00" + ip + l4 + payload


def udp(src_ip: int, dst_ip: int, sport: int = 1000, dport: int = 53, payload_len: int = 0,
        src_mac: int = LAN_MAC, dst_mac: int = WAN_MAC) -> bytes:
    return build_frame(src_mac, dst_mac, src_ip, dst_ip, L4Proto.UDP, sport, dport, payload_len)


def tcp(src_ip: int, dst_ip: int, sport: int = 1000, dport: int = 80, payload_len: int = 0,
        src_mac: int = LAN_MAC, dst_mac: int = WAN_MAC) -> bytes:
    return build_frame(src_mac, dst_mac, src_ip, dst_ip, L4Proto.TCP, sport, dport, payload_len)


def orphan_frames(n: int, gap: int = 10, start: int = 0) -> list[tuple[int, bytes]]:
    return [(start + i * gap, udp(0x0A000001, 0xC6336401, 1000 + i % 50000)) for i in range(n)]


def nf(name: str = "t", spec: PacketSetSpec | None = None, **handlers) -> NfDefinition:
    kw = {k: v for k, v in handlers.items() if k in ("periodic_interval_ns", "default_timeout_ns", "params")}
    hs = {k: v for k, v in handlers.items() if k not in kw}
    return NfDefinition(name, spec or PacketSetSpec(), **hs, **kw)


def simulate(definition: NfDefinition, records, profile: bool = False, extra_ns: int = 0,
             injector=None, **cfg):
    """Run ``records`` through a fresh runtime; returns (runtime, report or None)."""
    cfg.setdefault("queue_capacity", 1 << 20)
    prof = Profiler() if profile else None
    rt = Runtime(definition, RuntimeConfig(**cfg), prof)
    if injector is not None:
        rt.store.fault_injector = injector
    Simulation(rt).run(records, extra_ns=extra_ns)
    rt.stop_nf()
    report = build_report(prof, rt.store.commits) if prof is not None else None
    return rt, report
