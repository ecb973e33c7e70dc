"""Synthetic packet streams with planted, labeled behaviors.

Every connection is generated from its own random stream seeded by
(seed, kind, connection index), so output does not depend on generation order.
Timestamps are whole microseconds, matching what pcap files can carry.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .capture import ConnectionKey, PacketRecord, write_jsonl, write_pcap
from .errors import InvalidParams

LOCAL_HOST = "10.0.0.2"
EPOCH_US = 1_600_000_000 * 1_000_000
EPHEMERAL = (49152, 65535)


class Behavior(str, enum.Enum):
    SYSTEMATIC_PORT_SCAN = "SystematicPortScan"
    RANDOMIZED_PORT_SCAN = "RandomizedPortScan"
    PERIODIC_HEARTBEAT = "PeriodicHeartbeat"
    BROADCAST_DISCOVERY = "BroadcastDiscovery"
    CONNECTION_SPAM = "ConnectionSpam"
    BULK_TRANSFER = "BulkTransfer"


KIND_INDEX = {b: i for i, b in enumerate(Behavior)}


@dataclass(frozen=True)
class BehaviorKind:
    """Generation parameters for one behavior.

    ``src_port``/``dst_port`` of None mean a random ephemeral port drawn once
    per connection. Scans sweep or sample ``port_range`` for destination ports.
    """

    kind: Behavior
    port_range: tuple[int, int] = (1, 1024)
    period_ms: float = 1000.0
    size: int = 100
    size_spread: int = 0
    jitter: float = 0.0
    src_port: int | None = None
    dst_port: int | None = None

    def validate(self) -> None:
        lo, hi = self.port_range
        if not 0 <= lo <= hi <= 65535:
            raise InvalidParams(f"port range {self.port_range} outside [0, 65535]")
        if not 0.0 <= self.jitter <= 0.5:
            raise InvalidParams(f"jitter {self.jitter} outside [0, 0.5]")
        if self.period_ms <= 0:
            raise InvalidParams("period must be positive")
        if self.size - self.size_spread < 40:
            raise InvalidParams("packet sizes must stay >= 40 bytes (IP + TCP headers)")
        for p in (self.src_port, self.dst_port):
            if p is not None and not 0 <= p <= 65535:
                raise InvalidParams(f"port {p} outside [0, 65535]")

    @property
    def incoming(self) -> bool:
        return self.kind is Behavior.BULK_TRANSFER


DEFAULTS = {
    Behavior.SYSTEMATIC_PORT_SCAN: BehaviorKind(
        Behavior.SYSTEMATIC_PORT_SCAN, port_range=(1, 1024), period_ms=2.0, size=44, jitter=0.2, src_port=40000
    ),
    Behavior.RANDOMIZED_PORT_SCAN: BehaviorKind(
        Behavior.RANDOMIZED_PORT_SCAN, port_range=(1, 65535), period_ms=2.0, size=44, jitter=0.2, src_port=61000
    ),
    Behavior.PERIODIC_HEARTBEAT: BehaviorKind(
        Behavior.PERIODIC_HEARTBEAT, period_ms=1000.0, size=120, jitter=0.05, dst_port=443
    ),
    Behavior.BROADCAST_DISCOVERY: BehaviorKind(
        Behavior.BROADCAST_DISCOVERY, period_ms=3000.0, size=175, size_spread=4, jitter=0.1, dst_port=1900
    ),
    Behavior.CONNECTION_SPAM: BehaviorKind(
        Behavior.CONNECTION_SPAM, period_ms=300.0, size=60, size_spread=8, jitter=0.3, dst_port=25
    ),
    Behavior.BULK_TRANSFER: BehaviorKind(
        Behavior.BULK_TRANSFER, period_ms=1.0, size=1480, size_spread=20, jitter=0.3, src_port=443
    ),
}


def default_kind(kind: Behavior | str, **overrides) -> BehaviorKind:
    return replace(DEFAULTS[Behavior(kind)], **overrides)


def _remote_ip(kind: Behavior, index: int) -> str:
    if kind is Behavior.BROADCAST_DISCOVERY:
        return f"10.{100 + index // 250}.{index % 250}.255"
    return f"198.{18 + KIND_INDEX[kind]}.{index // 250}.{index % 250 + 1}"


def connection_key(kind: Behavior, index: int, sample_id: str) -> ConnectionKey:
    remote = _remote_ip(kind, index)
    if DEFAULTS[kind].incoming:
        return sample_id, remote, LOCAL_HOST
    return sample_id, LOCAL_HOST, remote


def _intervals_us(spec: BehaviorKind, n: int, rng: np.random.Generator) -> list[int]:
    period = spec.period_ms * 1000.0
    lo, hi = int(np.ceil(period * (1 - spec.jitter))), int(np.floor(period * (1 + spec.jitter)))
    raw = np.rint(period * (1 + rng.uniform(-spec.jitter, spec.jitter, n)))
    return np.clip(raw, lo, hi).astype(np.int64).tolist()


def _dst_ports(spec: BehaviorKind, length: int, rng: np.random.Generator) -> list[int]:
    lo, hi = spec.port_range
    if spec.kind is Behavior.SYSTEMATIC_PORT_SCAN:
        span = hi - lo + 1
        return [lo + j % span for j in range(length)]
    if spec.kind is Behavior.RANDOMIZED_PORT_SCAN:
        return rng.integers(lo, hi + 1, length).tolist()
    port = spec.dst_port if spec.dst_port is not None else int(rng.integers(*EPHEMERAL))
    return [port] * length


def generate(
    kind: BehaviorKind | Behavior | str,
    n_connections: int,
    length: int = 20,
    seed: int = 0,
    sample_ids: Sequence[str] | None = None,
) -> list[PacketRecord]:
    """Packets for ``n_connections`` connections of one behavior, ``length`` packets each.

    ``sample_ids[i]`` names the capture that connection ``i`` belongs to;
    by default every connection is attributed to a sample named after the kind.
    """
    spec = kind if isinstance(kind, BehaviorKind) else default_kind(kind)
    spec.validate()
    if length < 2:
        raise InvalidParams("length must be >= 2")
    if n_connections < 0:
        raise InvalidParams("n_connections must be >= 0")
    if sample_ids is not None and len(sample_ids) != n_connections:
        raise InvalidParams("need one sample id per connection")
    kidx = KIND_INDEX[spec.kind]
    records = []
    for i in range(n_connections):
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, kidx, i])
        sample = sample_ids[i] if sample_ids is not None else spec.kind.value
        key = connection_key(spec.kind, i, sample)
        gaps = _intervals_us(spec, length - 1, rng)
        t0 = EPOCH_US + kidx * 3_600_000_000 + i * 60_000_000
        times = np.cumsum([t0, *gaps]).tolist()
        sizes = (spec.size + rng.integers(-spec.size_spread, spec.size_spread + 1, length)).tolist()
        sport = spec.src_port if spec.src_port is not None else int(rng.integers(*EPHEMERAL))
        dports = _dst_ports(spec, length, rng)
        for t, size, dport in zip(times, sizes, dports):
            records.append(PacketRecord(t / 1_000_000, key[1], key[2], sport, dport, int(size), sample))
    return records


@dataclass
class SynthDataset:
    packets: dict[str, list[PacketRecord]]
    truth: dict[ConnectionKey, str]


def synth_dataset(
    kinds: Sequence[Behavior | str],
    per_kind: int,
    length: int = 20,
    seed: int = 0,
    n_samples: int = 10,
) -> SynthDataset:
    """Several behaviors spread round-robin over ``n_samples`` captures."""
    if n_samples < 1:
        raise InvalidParams("n_samples must be >= 1")
    packets: dict[str, list[PacketRecord]] = {}
    truth: dict[ConnectionKey, str] = {}
    offset = 0
    for kind in kinds:
        kind = Behavior(kind)
        samples = [f"sample{(offset + i) % n_samples:03d}" for i in range(per_kind)]
        offset += per_kind
        for rec in generate(kind, per_kind, length, seed, samples):
            packets.setdefault(rec.sample_id, []).append(rec)
        for i, s in enumerate(samples):
            truth[connection_key(kind, i, s)] = kind.value
    for recs in packets.values():
        recs.sort(key=lambda r: r.timestamp_us)
    return SynthDataset(dict(sorted(packets.items())), truth)


def write_dataset(ds: SynthDataset, out_dir, fmt: str = "jsonl") -> list[Path]:
    """One capture file per sample plus ``ground_truth.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for sample, recs in ds.packets.items():
        path = out / f"{sample}.{fmt}"
        if fmt == "jsonl":
            write_jsonl(recs, path)
        elif fmt == "pcap":
            write_pcap(recs, path)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        paths.append(path)
    write_truth_csv(ds.truth, out / "ground_truth.csv")
    return paths


def write_truth_csv(truth: dict[ConnectionKey, str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "src_ip", "dst_ip", "kind"])
        for key in sorted(truth):
            w.writerow([*key, truth[key]])


def read_truth_csv(path) -> dict[ConnectionKey, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(r["sample_id"], r["src_ip"], r["dst_ip"]): r["kind"] for r in csv.DictReader(fh)}
