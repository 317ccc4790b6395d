"""Synthetic, seeded packet traces and their CSV form.

CSV columns: ``ts_ns,src_mac,dst_mac,src_ip,dst_ip,proto,src_port,dst_port,len``
where ``proto`` is ``tcp``, ``udp`` or ``eth`` (no IP header; IP and port
columns empty) and ``len`` is the L4 payload size in bytes.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import ipaddress
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from ..config import load_file
from ..dispatch import ConfigError
from ..packet import L4Proto, build_frame, int_to_ip, int_to_mac, ip_to_int, mac_to_int

HEADER = ["ts_ns", "src_mac", "dst_mac", "src_ip", "dst_ip", "proto", "src_port", "dst_port", "len"]
KINDS = ("flows", "mac_pairs", "hot_mac")


@dataclass(frozen=True, slots=True)
class TraceRecord:
    ts_ns: int
    src_mac: int
    dst_mac: int
    src_ip: int | None
    dst_ip: int | None
    proto: L4Proto
    src_port: int
    dst_port: int
    length: int = 0
    ip: bool = True

    def frame(self) -> bytes:
        if not self.ip:
            return build_frame(self.src_mac, self.dst_mac, payload_len=self.length)
        return build_frame(self.src_mac, self.dst_mac, self.src_ip, self.dst_ip, self.proto,
                           self.src_port, self.dst_port, self.length)

    def with_ts(self, ts: int) -> "TraceRecord":
        return dataclasses.replace(self, ts_ns=ts)


@dataclass
class TraceSpec:
    kind: str = "flows"
    seed: int = 0
    rate_pps: float = 10_000_000.0
    arrival: str = "constant"  # constant | bursty
    burst: int = 32
    payload_len: int = 0
    # flows
    n_flows: int = 100
    flow_size: str = "fixed"  # fixed | geometric
    packets_per_flow: float = 21
    tcp_fraction: float = 1.0
    lan_cidr: str = "10.0.0.0/8"
    wan_cidr: str = "198.51.100.0/24"
    from_lan: float = 1.0      # share of flows initiated on the LAN side
    bidirectional: bool = False  # odd packets of a flow travel in reverse
    n_dst_hosts: int = 0       # 0: any host in the responder range
    flow_spread: float = 0.02  # packet spacing within a flow, as a share of the trace span
    # mac_pairs
    mac_pairs: int = 3
    packets_per_pair: int = 10_000
    # hot_mac
    n_packets: int = 10_000
    n_hosts: int = 64
    hot_fraction: float = 0.9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown trace kind {self.kind!r}; known: {KINDS}")
        if self.arrival not in ("constant", "bursty"):
            raise ConfigError("arrival must be constant or bursty")
        if self.flow_size not in ("fixed", "geometric"):
            raise ConfigError("flow_size must be fixed or geometric")
        if self.rate_pps <= 0:
            raise ConfigError("rate_pps must be > 0")


def load_trace_spec(path) -> TraceSpec:
    doc = load_file(path) or {}
    if not isinstance(doc, dict):
        raise ConfigError("trace spec must be a mapping")
    names = {f.name for f in dataclasses.fields(TraceSpec)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown trace spec keys {sorted(unknown)}")
    return TraceSpec(**doc)


def _hosts(cidr: str) -> tuple[int, int]:
    net = ipaddress.IPv4Network(cidr)
    return int(net.network_address) + 1, net.num_addresses - 2 if net.num_addresses > 2 else 1


def _mac_of(ip: int) -> int:
    return 0x02_00_00_00_00_00 | (ip & 0xFFFFFFFF)


def _timestamps(spec: TraceSpec, n: int) -> list[int]:
    gap = 1e9 / spec.rate_pps
    if spec.arrival == "constant":
        return [int(i * gap) for i in range(n)]
    # bursty: back-to-back bursts at 4x the mean rate, idle in between
    out = []
    for i in range(n):
        b, j = divmod(i, spec.burst)
        out.append(int(b * spec.burst * gap + j * gap / 4))
    return out


def _flows(spec: TraceSpec, rng: random.Random) -> list[TraceRecord]:
    lan0, lan_n = _hosts(spec.lan_cidr)
    wan0, wan_n = _hosts(spec.wan_cidr)
    events = []
    endpoints = rng.sample(range(lan_n * 64512), spec.n_flows) if spec.n_flows <= lan_n * 64512 else None
    if endpoints is None:
        raise ConfigError("address space too small for the requested number of flows")
    dst_hosts = [rng.randrange(wan_n) for _ in range(spec.n_dst_hosts)] if spec.n_dst_hosts else None
    for f in range(spec.n_flows):
        lan_ip = lan0 + endpoints[f] // 64512
        lan_port = 1024 + endpoints[f] % 64512
        if dst_hosts is not None:
            wan_ip = wan0 + dst_hosts[f % len(dst_hosts)]
        else:
            wan_ip = wan0 + rng.randrange(wan_n)
        wan_port = rng.choice((80, 443, 53, 8080)) if rng.random() < 0.5 else rng.randrange(1, 65536)
        proto = L4Proto.TCP if rng.random() < spec.tcp_fraction else L4Proto.UDP
        if spec.flow_size == "fixed":
            k = max(1, int(spec.packets_per_flow))
        else:
            p = 1.0 / max(1.0, spec.packets_per_flow)
            k = 1
            while rng.random() > p:
                k += 1
        lan_side_first = rng.random() < spec.from_lan
        a = (lan_ip, lan_port) if lan_side_first else (wan_ip, wan_port)
        b = (wan_ip, wan_port) if lan_side_first else (lan_ip, lan_port)
        start = rng.random()
        for j in range(k):
            fwd = not (spec.bidirectional and j % 2 == 1)
            (sip, sport), (dip, dport) = (a, b) if fwd else (b, a)
            events.append((start + j * spec.flow_spread, f, j, sip, dip, proto, sport, dport))
    events.sort()
    ts = _timestamps(spec, len(events))
    return [TraceRecord(t, _mac_of(e[3]), _mac_of(e[4]), e[3], e[4], e[5], e[6], e[7], spec.payload_len)
            for t, e in zip(ts, events)]


def _mac_pairs(spec: TraceSpec, rng: random.Random) -> list[TraceRecord]:
    lan0, lan_n = _hosts(spec.lan_cidr)
    wan0, wan_n = _hosts(spec.wan_cidr)
    pairs = [(lan0 + rng.randrange(lan_n), wan0 + rng.randrange(wan_n)) for _ in range(spec.mac_pairs)]
    events = []
    for i, (l, w) in enumerate(pairs):
        for j in range(spec.packets_per_pair):
            events.append((j, i, 0, l, w))
            events.append((j, i, 1, w, l))
    events.sort()
    ts = _timestamps(spec, len(events))
    return [TraceRecord(t, _mac_of(s), _mac_of(d), s, d, L4Proto.UDP, 4000 + e[1], 4000 + e[1],
                        spec.payload_len) for t, e in zip(ts, events) for s, d in [(e[3], e[4])]]


def _hot_mac(spec: TraceSpec, rng: random.Random) -> list[TraceRecord]:
    lan0, lan_n = _hosts(spec.lan_cidr)
    wan0, wan_n = _hosts(spec.wan_cidr)
    hot = lan0
    hosts = [wan0 + rng.randrange(wan_n) for _ in range(spec.n_hosts)]
    ts = _timestamps(spec, spec.n_packets)
    out = []
    for t in ts:
        h = rng.choice(hosts)
        s, d = (hot, h) if rng.random() < spec.hot_fraction else (h, hot)
        out.append(TraceRecord(t, _mac_of(s), _mac_of(d), s, d, L4Proto.UDP, 5000, 5000, spec.payload_len))
    return out


def generate_trace(spec: TraceSpec) -> list[TraceRecord]:
    rng = random.Random(spec.seed)
    return {"flows": _flows, "mac_pairs": _mac_pairs, "hot_mac": _hot_mac}[spec.kind](spec, rng)


# -- CSV ----------------------------------------------------------------------

def _row(r: TraceRecord) -> list:
    if not r.ip:
        return [r.ts_ns, int_to_mac(r.src_mac), int_to_mac(r.dst_mac), "", "", "eth", "", "", r.length]
    return [r.ts_ns, int_to_mac(r.src_mac), int_to_mac(r.dst_mac), int_to_ip(r.src_ip), int_to_ip(r.dst_ip),
            r.proto.name.lower(), r.src_port, r.dst_port, r.length]


def dumps_trace(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in records:
        w.writerow(_row(r))
    return buf.getvalue()


def write_trace(records: Iterable[TraceRecord], path) -> None:
    Path(path).write_text(dumps_trace(records), encoding="utf-8")


def _parse(row: dict, line: int) -> TraceRecord:
    try:
        proto = row["proto"].strip().lower()
        if proto == "eth":
            return TraceRecord(int(row["ts_ns"]), mac_to_int(row["src_mac"]), mac_to_int(row["dst_mac"]),
                               None, None, L4Proto.OTHER, 0, 0, int(row["len"] or 0), ip=False)
        l4 = {"tcp": L4Proto.TCP, "udp": L4Proto.UDP, "other": L4Proto.OTHER}[proto]
        return TraceRecord(int(row["ts_ns"]), mac_to_int(row["src_mac"]), mac_to_int(row["dst_mac"]),
                           ip_to_int(row["src_ip"]), ip_to_int(row["dst_ip"]), l4,
                           int(row["src_port"] or 0), int(row["dst_port"] or 0), int(row["len"] or 0))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"trace line {line}: {exc}") from None


def iter_trace(text: str) -> Iterator[TraceRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != HEADER:
        raise ConfigError(f"trace header must be {','.join(HEADER)}")
    for i, row in enumerate(reader, start=2):
        yield _parse(row, i)


def read_trace(path) -> list[TraceRecord]:
    return list(iter_trace(Path(path).read_text(encoding="utf-8")))


def frames(records: Iterable[TraceRecord]) -> list[tuple[int, bytes]]:
    return [(r.ts_ns, r.frame()) for r in records]
