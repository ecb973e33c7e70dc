"""Packet capture ingest and unidirectional connection extraction.

Two on-disk formats are understood: classic libpcap files with Ethernet
framing, and a line-oriented JSON format carrying the same fields, which is
what the synthetic trace generator emits.
"""

from __future__ import annotations

import csv
import enum
import ipaddress
import json
import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import MalformedHeader, MalformedRecord, UnreadableFile

log = logging.getLogger(__name__)

JSONL_FIELDS = ("ts", "src_ip", "dst_ip", "src_port", "dst_port", "ip_size")

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = (0x8100, 0x88A8, 0x9100)

IPPROTO_TCP = 6
IPPROTO_UDP = 17
# IPv6 extension headers walked to reach the transport header
IPV6_EXT = {0, 43, 60}
IPV6_FRAG = 44


class Direction(str, enum.Enum):
    OUTGOING = "Outgoing"
    INCOMING = "Incoming"


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    ip_size: int
    sample_id: str

    @property
    def timestamp_us(self) -> int:
        return round(self.timestamp * 1_000_000)

    def to_json(self) -> dict:
        return {
            "ts": self.timestamp,
            "src_ip": self.src_ip,
            "dst_ip": self.dst_ip,
            "src_port": self.src_port,
            "dst_port": self.dst_port,
            "ip_size": self.ip_size,
        }


ConnectionKey = tuple[str, str, str]


def format_key(key: ConnectionKey) -> str:
    """Render a connection key as ``sample|src->dst``."""
    sample_id, src, dst = key
    return f"{sample_id}|{src}->{dst}"


def parse_key(text: str) -> ConnectionKey:
    sample_id, _, rest = text.rpartition("|")
    src, _, dst = rest.partition("->")
    return sample_id, src, dst


@dataclass(frozen=True)
class Connection:
    key: ConnectionKey
    direction: Direction
    f_ps: tuple[int, ...]
    f_in: tuple[float, ...]
    f_sp: tuple[int, ...]
    f_dp: tuple[int, ...]
    original_length: int

    def __post_init__(self):
        n = len(self.f_ps)
        if not (n == len(self.f_in) == len(self.f_sp) == len(self.f_dp)) or n == 0:
            raise ValueError(f"inconsistent feature lengths for {self.key}")

    @property
    def sample_id(self) -> str:
        return self.key[0]

    @property
    def length(self) -> int:
        return len(self.f_ps)

    @property
    def label(self) -> str:
        return format_key(self.key)

    def feature(self, name: str) -> tuple:
        return getattr(self, "f_" + name)


@dataclass
class Capture:
    """Result of parsing one capture file."""

    path: Path
    sample_id: str
    records: list[PacketRecord] = field(default_factory=list)
    skipped_non_ip: int = 0
    portless: int = 0
    malformed: list[MalformedRecord] = field(default_factory=list)


def _detect_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".json"):
        return "jsonl"
    if suffix in (".pcap", ".cap", ".dmp"):
        return "pcap"
    raise UnreadableFile(f"cannot infer capture format from {path.name!r}")


def parse_capture(path, format: str | None = None, sample_id: str | None = None) -> Capture:
    """Read a pcap or jsonl capture into packet records, in file order.

    The sample id defaults to the file stem.
    """
    path = Path(path)
    fmt = format or _detect_format(path)
    sample_id = sample_id if sample_id is not None else path.stem
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    cap = Capture(path=path, sample_id=sample_id)
    if fmt == "pcap":
        _parse_pcap(data, cap)
    elif fmt == "jsonl":
        _parse_jsonl(data, cap)
    else:
        raise ValueError(f"unknown capture format {fmt!r}")
    if cap.skipped_non_ip:
        log.debug("%s: skipped %d non-IP frames", path.name, cap.skipped_non_ip)
    return cap


def _parse_jsonl(data: bytes, cap: Capture) -> None:
    for line_no, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            cap.malformed.append(MalformedRecord(cap.path, line_no, f"invalid JSON: {exc.msg}"))
            continue
        try:
            cap.records.append(_record_from_json(obj, cap.sample_id))
        except (TypeError, ValueError, KeyError) as exc:
            cap.malformed.append(MalformedRecord(cap.path, line_no, str(exc)))
    for err in cap.malformed:
        log.warning("malformed record: %s", err)


def _record_from_json(obj, sample_id: str) -> PacketRecord:
    if not isinstance(obj, dict):
        raise TypeError("record is not a JSON object")
    keys = set(obj)
    if keys != set(JSONL_FIELDS):
        missing = sorted(set(JSONL_FIELDS) - keys)
        extra = sorted(keys - set(JSONL_FIELDS))
        raise KeyError(f"field mismatch (missing={missing}, extra={extra})")
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, (int, float)):
        raise TypeError("ts must be a number")
    ports = []
    for name in ("src_port", "dst_port"):
        v = obj[name]
        if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= 65535:
            raise ValueError(f"{name} out of range: {v!r}")
        ports.append(v)
    size = obj["ip_size"]
    if isinstance(size, bool) or not isinstance(size, int) or size < 0:
        raise ValueError(f"ip_size must be a non-negative integer: {size!r}")
    src, dst = obj["src_ip"], obj["dst_ip"]
    if not isinstance(src, str) or not isinstance(dst, str):
        raise TypeError("addresses must be strings")
    ipaddress.ip_address(src)
    ipaddress.ip_address(dst)
    return PacketRecord(float(ts), src, dst, ports[0], ports[1], size, sample_id)


def _parse_pcap(data: bytes, cap: Capture) -> None:
    if len(data) < 24:
        raise MalformedHeader(f"{cap.path}: truncated pcap global header")
    magic_le = struct.unpack("<I", data[:4])[0]
    if magic_le in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
        endian = "<"
        magic = magic_le
    else:
        magic = struct.unpack(">I", data[:4])[0]
        if magic not in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
            raise MalformedHeader(f"{cap.path}: bad pcap magic 0x{magic_le:08x}")
        endian = ">"
    frac_scale = 1_000_000 if magic == PCAP_MAGIC_US else 1_000_000_000
    linktype = struct.unpack(endian + "I", data[20:24])[0] & 0x0FFFFFFF
    if linktype != LINKTYPE_ETHERNET:
        raise MalformedHeader(f"{cap.path}: unsupported link type {linktype}")

    rec_hdr = struct.Struct(endian + "IIII")
    off = 24
    while off < len(data):
        if off + 16 > len(data):
            log.warning("%s: truncated record header at offset %d", cap.path, off)
            break
        ts_sec, ts_frac, incl_len, _orig_len = rec_hdr.unpack_from(data, off)
        off += 16
        frame = data[off : off + incl_len]
        off += incl_len
        if len(frame) < incl_len:
            log.warning("%s: truncated final frame", cap.path)
        ts_us = ts_sec * 1_000_000 + (ts_frac * 1_000_000) // frac_scale
        rec = _dissect_ethernet(frame, ts_us / 1_000_000, cap)
        if rec is None:
            cap.skipped_non_ip += 1
        else:
            cap.records.append(rec)


def _dissect_ethernet(frame: bytes, ts: float, cap: Capture) -> PacketRecord | None:
    if len(frame) < 14:
        return None
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    off = 14
    while ethertype in ETH_VLAN and len(frame) >= off + 4:
        (ethertype,) = struct.unpack_from("!H", frame, off + 2)
        off += 4
    if ethertype == ETH_IPV4:
        return _dissect_ipv4(frame, off, ts, cap)
    if ethertype == ETH_IPV6:
        return _dissect_ipv6(frame, off, ts, cap)
    return None


def _ports(frame: bytes, off: int, proto: int, cap: Capture) -> tuple[int, int]:
    if proto in (IPPROTO_TCP, IPPROTO_UDP) and len(frame) >= off + 4:
        return struct.unpack_from("!HH", frame, off)
    cap.portless += 1
    return 0, 0


def _dissect_ipv4(frame: bytes, off: int, ts: float, cap: Capture) -> PacketRecord | None:
    if len(frame) < off + 20 or frame[off] >> 4 != 4:
        return None
    ihl = (frame[off] & 0x0F) * 4
    (total_len,) = struct.unpack_from("!H", frame, off + 2)
    (flags_frag,) = struct.unpack_from("!H", frame, off + 6)
    proto = frame[off + 9]
    src = str(ipaddress.IPv4Address(frame[off + 12 : off + 16]))
    dst = str(ipaddress.IPv4Address(frame[off + 16 : off + 20]))
    if flags_frag & 0x1FFF:
        # non-first fragment carries no transport header
        sp, dp = _ports(b"", 0, -1, cap)
    else:
        sp, dp = _ports(frame, off + ihl, proto, cap)
    return PacketRecord(ts, src, dst, sp, dp, total_len, cap.sample_id)


def _dissect_ipv6(frame: bytes, off: int, ts: float, cap: Capture) -> PacketRecord | None:
    if len(frame) < off + 40 or frame[off] >> 4 != 6:
        return None
    (payload_len,) = struct.unpack_from("!H", frame, off + 4)
    nxt = frame[off + 6]
    src = str(ipaddress.IPv6Address(frame[off + 8 : off + 24]))
    dst = str(ipaddress.IPv6Address(frame[off + 24 : off + 40]))
    pos = off + 40
    while nxt in IPV6_EXT and len(frame) >= pos + 2:
        nxt, hdr_len = frame[pos], (frame[pos + 1] + 1) * 8
        pos += hdr_len
    if nxt == IPV6_FRAG and len(frame) >= pos + 8:
        (frag,) = struct.unpack_from("!H", frame, pos + 2)
        nxt = frame[pos] if not frag & 0xFFF8 else -1
        pos += 8
    sp, dp = _ports(frame, pos, nxt, cap)
    return PacketRecord(ts, src, dst, sp, dp, payload_len + 40, cap.sample_id)


def write_jsonl(records: Iterable[PacketRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


def write_pcap(records: Iterable[PacketRecord], path) -> None:
    """Write records as an Ethernet pcap with zero-filled payloads.

    TCP headers are emitted for every record; the IP total length field
    carries ``ip_size``, so ``ip_size`` must cover the IP and TCP headers.
    """
    out = bytearray(struct.pack("<IHHiIII", PCAP_MAGIC_US, 2, 4, 0, 0, 65535, LINKTYPE_ETHERNET))
    for rec in records:
        ts_us = rec.timestamp_us
        src = ipaddress.ip_address(rec.src_ip)
        dst = ipaddress.ip_address(rec.dst_ip)
        tcp = struct.pack("!HHIIBBHHH", rec.src_port, rec.dst_port, 0, 0, 5 << 4, 0x02, 65535, 0, 0)
        if src.version == 4:
            if rec.ip_size < 40:
                raise ValueError("ip_size too small for IPv4+TCP headers")
            ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, rec.ip_size, 0, 0, 64, IPPROTO_TCP, 0, src.packed, dst.packed)
            ethertype = ETH_IPV4
            pad = rec.ip_size - 40
        else:
            if rec.ip_size < 60:
                raise ValueError("ip_size too small for IPv6+TCP headers")
            ip = struct.pack("!IHBB16s16s", 6 << 28, rec.ip_size - 40, IPPROTO_TCP, 64, src.packed, dst.packed)
            ethertype = ETH_IPV6
            pad = rec.ip_size - 60
        frame = b"\x00" * 6 + b"\x02" + b"\x00" * 5 + struct.pack("!H", ethertype) + ip + tcp + b"\x00" * pad
        out += struct.pack("<IIII", ts_us // 1_000_000, ts_us % 1_000_000, len(frame), len(frame))
        out += frame
    Path(path).write_bytes(bytes(out))


@dataclass
class Extraction:
    connections: list[Connection]
    total_packets: int = 0
    discarded_connections: int = 0
    discarded_packets: int = 0
    truncated_packets: int = 0


def extract_connections(
    packets: Sequence[PacketRecord],
    length: int = 20,
    min_len: int | None = None,
    localhost: Iterable[str] = (),
) -> Extraction:
    """Group packets into unidirectional connections keyed by (sample, src, dst).

    Each connection keeps only its first ``length`` packets; connections with
    fewer than ``min_len`` packets (default: ``length``) are dropped and
    counted. Output is sorted by key.
    """
    if length < 1:
        raise ValueError("length must be positive")
    min_len = length if min_len is None else min_len
    if not 1 <= min_len <= length:
        raise ValueError("need 1 <= min_len <= length")
    local = frozenset(localhost)

    groups: dict[ConnectionKey, list[tuple[int, int, PacketRecord]]] = defaultdict(list)
    for idx, pkt in enumerate(packets):
        groups[(pkt.sample_id, pkt.src_ip, pkt.dst_ip)].append((pkt.timestamp_us, idx, pkt))

    result = Extraction(connections=[], total_packets=len(packets))
    for key in sorted(groups):
        rows = sorted(groups[key], key=lambda r: (r[0], r[1]))
        if len(rows) < min_len:
            result.discarded_connections += 1
            result.discarded_packets += len(rows)
            continue
        window = rows[:length]
        result.truncated_packets += len(rows) - len(window)
        times = [r[0] for r in window]
        f_in = (0.0,) + tuple((b - a) / 1000 for a, b in zip(times, times[1:]))
        pk = [r[2] for r in window]
        result.connections.append(
            Connection(
                key=key,
                direction=Direction.OUTGOING if key[1] in local else Direction.INCOMING,
                f_ps=tuple(p.ip_size for p in pk),
                f_in=f_in,
                f_sp=tuple(p.src_port for p in pk),
                f_dp=tuple(p.dst_port for p in pk),
                original_length=len(rows),
            )
        )
    return result


CONNECTION_COLUMNS = (
    "sample_id", "src_ip", "dst_ip", "direction", "original_length", "length",
    "f_ps", "f_in", "f_sp", "f_dp",
)


def write_connections_csv(connections: Sequence[Connection], path) -> None:
    """One row per connection; sequences are space-separated."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONNECTION_COLUMNS)
        for c in connections:
            w.writerow([
                *c.key, c.direction.value, c.original_length, c.length,
                " ".join(map(str, c.f_ps)),
                " ".join(map(repr, c.f_in)),
                " ".join(map(str, c.f_sp)),
                " ".join(map(str, c.f_dp)),
            ])


def read_connections_csv(path) -> list[Connection]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                Connection(
                    key=(row["sample_id"], row["src_ip"], row["dst_ip"]),
                    direction=Direction(row["direction"]),
                    f_ps=tuple(int(v) for v in row["f_ps"].split()),
                    f_in=tuple(float(v) for v in row["f_in"].split()),
                    f_sp=tuple(int(v) for v in row["f_sp"].split()),
                    f_dp=tuple(int(v) for v in row["f_dp"].split()),
                    original_length=int(row["original_length"]),
                )
            )
    return out
