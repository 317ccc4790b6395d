"""Packets, packet-set definitions, key extraction and software RSS.

Only Ethernet/IPv4 with optional TCP/UDP is modeled.  A packet-set definition
names header fields per protocol; the key of a packet is the concatenation of
those fields (network byte order) in definition order.  Packets missing any
required protocol or field are orphans.
"""
from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass, field
from functools import lru_cache

from .config import ParseError, compose

__all__ = [
    "L4Proto", "HeaderView", "Packet", "MalformedFrame", "PacketSetSpec", "NicModel",
    "CompatReport", "ORPHAN", "NIC_MODELS", "RSS_KEY", "parse_packet", "build_frame",
    "load_packet_set_spec", "extract_packet_set_key", "toeplitz_hash", "rss_select_worker",
    "check_rss_compatibility", "mac_to_int", "int_to_mac", "ip_to_int", "int_to_ip",
]


class L4Proto(enum.IntEnum):
    OTHER = 0
    TCP = 6
    UDP = 17


class MalformedFrame(ValueError):
    pass


ETH_HLEN = 14
ETH_P_IP = 0x0800


@dataclass(frozen=True, slots=True)
class HeaderView:
    src_mac: int
    dst_mac: int
    src_ip: int | None = None
    dst_ip: int | None = None
    l4_proto: L4Proto = L4Proto.OTHER
    src_port: int | None = None
    dst_port: int | None = None
    payload_len: int = 0
    arrival_ts: int = 0

    def __post_init__(self):
        has_ports = self.src_port is not None and self.dst_port is not None
        if has_ports != (self.l4_proto in (L4Proto.TCP, L4Proto.UDP)):
            raise ValueError("ports must be present iff l4_proto is TCP or UDP")
        if self.payload_len < 0:
            raise ValueError("payload_len must be >= 0")


@dataclass(slots=True)
class Packet:
    """A frame as seen by the runtime: raw bytes, parsed view, ingress device."""

    raw: bytes
    hv: HeaderView
    seq: int = 0
    dev: int = 0

    @property
    def ts(self) -> int:
        return self.hv.arrival_ts


def mac_to_int(mac: str) -> int:
    return int(mac.replace(":", "").replace("-", ""), 16)


def int_to_mac(value: int) -> str:
    return ":".join(f"{b:02x}" for b in value.to_bytes(6, "big"))


def ip_to_int(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip))


def int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_frame(src_mac: int, dst_mac: int, src_ip: int | None = None, dst_ip: int | None = None,
                proto: L4Proto = L4Proto.TCP, src_port: int = 0, dst_port: int = 0,
                payload_len: int = 0) -> bytes:
    """Serialize an Ethernet[/IPv4[/TCP|UDP]] frame with a zero payload.

    ``src_ip=None`` produces an Ethernet-only frame (ethertype 0x88b5, the
    IEEE local experimental type).
    """
    eth_type = ETH_P_IP if src_ip is not None else 0x88B5
    eth = dst_mac.to_bytes(6, "big") + src_mac.to_bytes(6, "big") + struct.pack("!H", eth_type)
    if src_ip is None:
        return eth + bytes(payload_len)
    if proto == L4Proto.TCP:
        l4 = struct.pack("!HHIIBBHHH", src_port, dst_port, 0, 0, 5 << 4, 0x02, 65535, 0, 0)
    elif proto == L4Proto.UDP:
        l4 = struct.pack("!HHHH", src_port, dst_port, 8 + payload_len, 0)
    else:
        l4 = b""
    total_len = 20 + len(l4) + payload_len
    ip_proto = int(proto) if proto != L4Proto.OTHER else 253
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0, 64, ip_proto, 0,
                      src_ip.to_bytes(4, "big"), dst_ip.to_bytes(4, "big"))
    hdr = hdr[:10] + struct.pack("!H", _ip_checksum(hdr)) + hdr[12:]
    return eth + hdr + l4 + bytes(payload_len)


def parse_packet(raw: bytes, arrival_ts: int = 0) -> HeaderView:
    """Parse a raw frame.  Truncated or non-IPv4 frames keep whatever fields fit."""
    n = len(raw)
    if n < ETH_HLEN:
        raise MalformedFrame(f"frame of {n} bytes is shorter than an Ethernet header")
    dst_mac = int.from_bytes(raw[0:6], "big")
    src_mac = int.from_bytes(raw[6:12], "big")
    (eth_type,) = struct.unpack_from("!H", raw, 12)
    if eth_type != ETH_P_IP or n < ETH_HLEN + 20:
        return HeaderView(src_mac, dst_mac, payload_len=n - ETH_HLEN, arrival_ts=arrival_ts)
    vihl, total_len, ip_proto, src_ip, dst_ip = struct.unpack_from("!BxH5xB2x4s4s", raw, ETH_HLEN)
    ihl = (vihl & 0x0F) * 4
    src_ip = int.from_bytes(src_ip, "big")
    dst_ip = int.from_bytes(dst_ip, "big")
    l4_off = ETH_HLEN + ihl
    ip_end = min(n, ETH_HLEN + total_len) if total_len >= ihl else n
    if ip_proto in (6, 17) and ip_end >= l4_off + 4:
        src_port, dst_port = struct.unpack_from("!HH", raw, l4_off)
        if ip_proto == 6:
            l4_len = (raw[l4_off + 12] >> 4) * 4 if ip_end >= l4_off + 13 else 20
        else:
            l4_len = 8
        return HeaderView(src_mac, dst_mac, src_ip, dst_ip, L4Proto(ip_proto), src_port, dst_port,
                          max(0, ip_end - l4_off - l4_len), arrival_ts)
    return HeaderView(src_mac, dst_mac, src_ip, dst_ip, payload_len=max(0, ip_end - l4_off),
                      arrival_ts=arrival_ts)


# ---------------------------------------------------------------------------
# packet-set definitions

FIELD_VOCABULARY = ("src_ip", "dst_ip", "src_port", "dst_port", "src_mac", "dst_mac", "l4_proto")
PROTOCOL_FIELDS = {
    "eth": ("src_mac", "dst_mac"),
    "ipv4": ("src_ip", "dst_ip", "l4_proto"),
    "tcp": ("src_port", "dst_port"),
    "udp": ("src_port", "dst_port"),
    "l4": ("src_port", "dst_port"),  # TCP or UDP
}
_FIELD_WIDTH = {"src_mac": 6, "dst_mac": 6, "src_ip": 4, "dst_ip": 4,
                "src_port": 2, "dst_port": 2, "l4_proto": 1}
_MIRROR = {"src_ip": "dst_ip", "dst_ip": "src_ip", "src_port": "dst_port",
           "dst_port": "src_port", "src_mac": "dst_mac", "dst_mac": "src_mac"}

ORPHAN = None


@dataclass(frozen=True)
class PacketSetSpec:
    nic: int = 0
    pattern: tuple[tuple[str, tuple[str, ...]], ...] = ()
    symmetric: bool = False

    @property
    def fields(self) -> tuple[str, ...]:
        return tuple(f for _, names in self.pattern for f in names)

    @property
    def protocols(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.pattern)

    def __bool__(self) -> bool:
        return bool(self.pattern)

    @classmethod
    def of(cls, nic: int = 0, symmetric: bool = False, **pattern) -> "PacketSetSpec":
        return cls(nic, tuple((p, tuple(f)) for p, f in pattern.items()), symmetric)


EMPTY_SPEC = PacketSetSpec()


def load_packet_set_spec(text: str) -> PacketSetSpec:
    """Parse a packet-set config document (see module :mod:`nfork.config`)."""
    doc = compose(text)
    if doc is None:
        return EMPTY_SPEC
    entries = doc.value
    if isinstance(entries, dict):
        entries = [doc]
    elif not isinstance(entries, list):
        raise ParseError("expected a list of packet-set objects", doc.line)
    if not entries:
        return EMPTY_SPEC
    if len(entries) > 1:
        raise ParseError("only one packet-set definition per NIC document is supported", entries[1].line)
    entry = entries[0]
    if not isinstance(entry.value, dict):
        raise ParseError("packet-set entry must be an object", entry.line)
    obj = entry.value
    for key, loc in obj.items():
        if key not in ("nic", "pattern", "symmetric"):
            raise ParseError(f"unknown key {key!r}", loc.line, str(key))
    nic = obj["nic"].value if "nic" in obj else 0
    if not isinstance(nic, int) or isinstance(nic, bool):
        raise ParseError("nic must be an integer device id", obj["nic"].line, "nic")
    symmetric = bool(obj["symmetric"].value) if "symmetric" in obj else False
    pattern_loc = obj.get("pattern")
    pattern = []
    if pattern_loc is not None and pattern_loc.value is not None:
        if not isinstance(pattern_loc.value, dict):
            raise ParseError("pattern must map protocol names to field lists", pattern_loc.line, "pattern")
        seen = set()
        for proto, names in pattern_loc.value.items():
            if proto not in PROTOCOL_FIELDS:
                raise ParseError(f"unknown protocol {proto!r}", names.line, str(proto))
            if not isinstance(names.value, list):
                raise ParseError(f"fields of {proto!r} must be a list", names.line, str(proto))
            fields = []
            for f in names.value:
                if f.value not in FIELD_VOCABULARY:
                    raise ParseError(f"unknown header field {f.value!r}", f.line, str(f.value))
                if f.value not in PROTOCOL_FIELDS[proto]:
                    raise ParseError(f"field {f.value!r} does not belong to {proto!r}", f.line, str(f.value))
                if f.value in seen:
                    raise ParseError(f"field {f.value!r} listed twice", f.line, str(f.value))
                seen.add(f.value)
                fields.append(f.value)
            pattern.append((proto, tuple(fields)))
    return PacketSetSpec(nic, tuple(pattern), symmetric)


def _field_bytes(hv: HeaderView, name: str) -> bytes:
    v = getattr(hv, name)
    return int(v).to_bytes(_FIELD_WIDTH[name], "big")


def _proto_present(hv: HeaderView, proto: str) -> bool:
    if proto == "eth":
        return True
    if proto == "ipv4":
        return hv.src_ip is not None
    if proto == "tcp":
        return hv.l4_proto == L4Proto.TCP
    if proto == "udp":
        return hv.l4_proto == L4Proto.UDP
    return hv.l4_proto in (L4Proto.TCP, L4Proto.UDP)


def extract_packet_set_key(hv: HeaderView, spec: PacketSetSpec) -> bytes | None:
    """Canonical key bytes, or ``ORPHAN`` (None) when the packet matches no set."""
    if not spec.pattern:
        return ORPHAN
    for proto in spec.protocols:
        if not _proto_present(hv, proto):
            return ORPHAN
    names = spec.fields
    if spec.symmetric:
        fwd = tuple(getattr(hv, f) for f in names if f in _MIRROR and f.startswith("src"))
        rev = tuple(getattr(hv, _MIRROR[f]) for f in names if f in _MIRROR and f.startswith("src"))
        if rev < fwd:
            names = tuple(_MIRROR.get(f, f) for f in names)
    return b"".join(_field_bytes(hv, f) for f in names)


# ---------------------------------------------------------------------------
# RSS

# Widely published default Toeplitz key (Microsoft RSS verification suite).
RSS_KEY = bytes.fromhex(
    "6d5a56da255b0ec24167253d43a38fb0d0ca2bcbae7b30b477cb2da38030f20c6a42b73bbeac01fa")


@lru_cache(maxsize=8)
def _toeplitz_table(key: bytes) -> tuple[tuple[int, ...], ...]:
    # table[i][b]: contribution of byte value b at input position i
    kint = int.from_bytes(key, "big")
    klen = len(key) * 8
    rows = []
    for i in range(len(key) - 4):
        windows = [(kint >> (klen - 32 - (8 * i + j))) & 0xFFFFFFFF for j in range(8)]
        row = []
        for b in range(256):
            acc = 0
            for j in range(8):
                if b & (0x80 >> j):
                    acc ^= windows[j]
            row.append(acc)
        rows.append(tuple(row))
    return tuple(rows)


def toeplitz_hash(data: bytes, key: bytes = RSS_KEY) -> int:
    table = _toeplitz_table(key)
    if len(data) > len(table):
        raise ValueError(f"input of {len(data)} bytes exceeds the {len(table)}-byte hash window")
    h = 0
    for i, b in enumerate(data):
        h ^= table[i][b]
    return h


def rss_select_worker(key: bytes, n_workers: int) -> int:
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    if n_workers == 1:
        return 0
    return toeplitz_hash(key) % n_workers


@dataclass(frozen=True)
class NicModel:
    name: str
    supported_field_sets: tuple[frozenset, ...]
    symmetric: bool = False

    def __post_init__(self):
        if not self.supported_field_sets or not all(self.supported_field_sets):
            raise ValueError("a NIC model needs at least one non-empty field set")


@dataclass(frozen=True)
class CompatReport:
    compatible: bool
    unsupported: tuple[str, ...] = ()
    hash_fields: frozenset = field(default_factory=frozenset)

    def __bool__(self) -> bool:
        return self.compatible


_IP2 = frozenset({"src_ip", "dst_ip"})
_IP4 = frozenset({"src_ip", "dst_ip", "src_port", "dst_port"})
NIC_MODELS = {
    # field sets the modeled RSS engines can hash; symmetric means a
    # direction-independent hash (symmetric Toeplitz key) is available
    "e810": NicModel("e810", (_IP4, _IP4 | {"l4_proto"}, _IP2, frozenset({"src_ip"}),
                              frozenset({"dst_ip"})), symmetric=True),
    "cx5": NicModel("cx5", (_IP4, _IP2, frozenset({"src_ip"}), frozenset({"dst_ip"})), symmetric=True),
    "ip-only": NicModel("ip-only", (_IP2, _IP4)),
}


def check_rss_compatibility(spec: PacketSetSpec, nic: NicModel) -> CompatReport:
    """Can the NIC hash a subset of the spec's fields (so sets stay co-located)?"""
    fields = frozenset(spec.fields)
    if not fields:
        return CompatReport(True)
    if spec.symmetric and not nic.symmetric:
        return CompatReport(False, tuple(f for f in spec.fields))
    usable = [s for s in nic.supported_field_sets if s <= fields]
    if usable:
        return CompatReport(True, (), max(usable, key=lambda s: (len(s), sorted(s))))
    hashable = frozenset().union(*nic.supported_field_sets)
    missing = tuple(f for f in spec.fields if f not in hashable)
    return CompatReport(False, missing or spec.fields)
