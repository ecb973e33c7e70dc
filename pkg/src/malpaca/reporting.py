"""Temporal heatmaps, clustering-error estimation and cluster summaries.

Heatmap colors come from decile bands of each feature's dataset-wide value
distribution. The same bands drive the automated clustering-error check: a
feature "differs" when most of its positions fall in a different band than
the cluster's reference connections.
"""

from __future__ import annotations

import csv
import html
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .capture import Connection, Direction
from .clustering import NOISE
from .errors import ClusterTooSmall, EmptyCluster
from .profiles import UNKNOWN_FAMILY

HEATMAP_FEATURES = {
    "packet_size": "ps",
    "interval": "in",
    "source_port": "sp",
    "dest_port": "dp",
}
LOG_SCALED = {"ps", "in"}
N_BANDS = 10

# sequential palette, low to high
PALETTE = (
    "#440154", "#482878", "#3e4989", "#31688e", "#26828e",
    "#1f9e89", "#35b779", "#6ece58", "#b5de2b", "#fde725",
)


@dataclass(frozen=True)
class DecileBands:
    """Ten bands cut at the 10th..90th percentiles of a feature's values."""

    edges: tuple[float, ...]
    log_scaled: bool

    @classmethod
    def fit(cls, values, log_scaled: bool) -> "DecileBands":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            raise ValueError("cannot fit bands on no values")
        t = np.log1p(v) if log_scaled else v
        edges = np.quantile(t, np.arange(1, N_BANDS) / N_BANDS)
        return cls(tuple(float(e) for e in edges), log_scaled)

    def _t(self, v):
        v = np.asarray(v, dtype=float)
        return np.log1p(v) if self.log_scaled else v

    def band(self, values) -> np.ndarray:
        return np.searchsorted(np.asarray(self.edges), self._t(values), side="right")

    def value_range(self, band: int) -> tuple[float, float]:
        inv = np.expm1 if self.log_scaled else (lambda x: x)
        lo = -np.inf if band == 0 else float(inv(self.edges[band - 1]))
        hi = np.inf if band == N_BANDS - 1 else float(inv(self.edges[band]))
        return lo, hi


def fit_bands(connections: Sequence[Connection]) -> dict[str, DecileBands]:
    """Bands per feature (keyed ps/in/sp/dp); sizes and gaps are banded on log1p."""
    out = {}
    for f in ("ps", "in", "sp", "dp"):
        vals = np.concatenate([np.asarray(c.feature(f), dtype=float) for c in connections])
        out[f] = DecileBands.fit(vals, f in LOG_SCALED)
    return out


def band_sequences(connections: Sequence[Connection], bands: Mapping[str, DecileBands]) -> dict[str, list[np.ndarray]]:
    return {f: [b.band(c.feature(f)) for c in connections] for f, b in bands.items()}


@dataclass
class HeatmapSpec:
    cluster_id: int
    feature: str
    rows: list[tuple[str, tuple]]
    bands: DecileBands

    def __post_init__(self):
        if self.feature not in HEATMAP_FEATURES:
            raise ValueError(f"unknown heatmap feature {self.feature!r}")
        self.rows = sorted(self.rows, key=lambda r: r[0])


def heatmap_spec(cluster_id: int, feature: str, connections: Sequence[Connection], bands: Mapping[str, DecileBands]) -> HeatmapSpec:
    f = HEATMAP_FEATURES[feature]
    return HeatmapSpec(cluster_id, feature, [(c.label, c.feature(f)) for c in connections], bands[f])


def _fmt(v: float) -> str:
    if np.isinf(v):
        return "-inf" if v < 0 else "inf"
    return f"{v:.6g}"


CELL = 14
LABEL_CHAR = 6.6


def render_heatmap(spec: HeatmapSpec) -> str:
    """SVG grid, one row per connection and one column per packet index."""
    if not spec.rows:
        raise EmptyCluster(f"cluster {spec.cluster_id} has no connections")
    n_cols = max(len(seq) for _, seq in spec.rows)
    label_w = int(max(len(k) for k, _ in spec.rows) * LABEL_CHAR) + 10
    top = 30
    grid_h = CELL * len(spec.rows)
    legend_y = top + grid_h + 24
    width = max(label_w + CELL * n_cols + 10, 420)
    height = legend_y + 18 * N_BANDS + 10
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="11">',
        f'<text x="4" y="16" font-size="13">cluster {spec.cluster_id}: {spec.feature}</text>',
    ]
    for c in range(n_cols):
        if c % 5 == 0:
            out.append(f'<text x="{label_w + c * CELL}" y="{top - 3}" font-size="8">{c}</text>')
    for r, (key, seq) in enumerate(spec.rows):
        y = top + r * CELL
        out.append(f'<text x="4" y="{y + CELL - 3}">{html.escape(key)}</text>')
        bands = spec.bands.band(seq) if len(seq) else []
        for c, (value, b) in enumerate(zip(seq, bands)):
            out.append(
                f'<rect class="cell" x="{label_w + c * CELL}" y="{y}" width="{CELL}" height="{CELL}" '
                f'fill="{PALETTE[int(b)]}"><title>{_fmt(float(value))}</title></rect>'
            )
    out.append(f'<text x="4" y="{legend_y - 6}">band: value range</text>')
    for b in range(N_BANDS):
        lo, hi = spec.bands.value_range(b)
        y = legend_y + 18 * b
        out.append(f'<rect class="legend" x="4" y="{y}" width="{CELL}" height="{CELL}" fill="{PALETTE[b]}"/>')
        out.append(f'<text x="{8 + CELL}" y="{y + CELL - 3}">{b}: [{_fmt(lo)}, {_fmt(hi)})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


@dataclass
class ClusterErrors:
    owners: list[int]
    differing: list[int]
    is_error: list[bool]

    @property
    def ce_count(self) -> int:
        return sum(self.is_error)

    @property
    def error_rate(self) -> float:
        return self.ce_count / len(self.is_error)


def rightful_owners(distance: np.ndarray) -> list[int]:
    """Members of the closest pair, plus members of any pair tied with it."""
    n = distance.shape[0]
    iu = np.triu_indices(n, 1)
    d = distance[iu]
    best = d.min()
    hit = d == best
    return sorted(set(iu[0][hit].tolist()) | set(iu[1][hit].tolist()))


def _majority(columns: list[np.ndarray], length: int) -> list[int | None]:
    out = []
    for pos in range(length):
        seen = Counter(int(col[pos]) for col in columns if pos < len(col))
        if not seen:
            out.append(None)
        else:
            top = max(seen.values())
            out.append(min(b for b, c in seen.items() if c == top))
    return out


def estimate_clustering_errors(
    members: Sequence[int],
    distance,
    banded: Mapping[str, Sequence[np.ndarray]],
) -> ClusterErrors:
    """Flag connections whose feature sequences mostly disagree with the owners.

    ``distance`` is the full pairwise matrix used for clustering; ``banded``
    maps each feature to band sequences aligned with ``members``. A feature
    differs when more than half of its positions carry a band other than the
    owners' per-position majority; a connection is an error when more than
    two of the features differ.
    """
    members = list(members)
    if len(members) < 2:
        raise ClusterTooSmall(f"need at least 2 connections, got {len(members)}")
    d = np.asarray(getattr(distance, "values", distance), dtype=float)
    sub = d[np.ix_(members, members)]
    owners = rightful_owners(sub)
    owner_set = set(owners)
    majority = {}
    for f, seqs in banded.items():
        if len(seqs) != len(members):
            raise ValueError(f"band sequences for {f!r} are not aligned with members")
        longest = max(len(s) for s in seqs)
        majority[f] = _majority([seqs[i] for i in owners], longest)
    differing, flags = [], []
    for i in range(len(members)):
        if i in owner_set:
            differing.append(0)
            flags.append(False)
            continue
        n_diff = 0
        for f, seqs in banded.items():
            seq = seqs[i]
            mism = sum(1 for pos, b in enumerate(seq) if majority[f][pos] is None or int(b) != majority[f][pos])
            if len(seq) and mism / len(seq) > 0.5:
                n_diff += 1
        differing.append(n_diff)
        flags.append(n_diff > 2)
    return ClusterErrors(owners=owners, differing=differing, is_error=flags)


@dataclass
class ClusterQuality:
    cluster_id: int
    size: int
    ce_count: int

    @property
    def error_rate(self) -> float:
        return self.ce_count / self.size if self.size else 0.0


@dataclass
class ClusterQualityReport:
    clusters: list[ClusterQuality] = field(default_factory=list)

    @property
    def mean_error_rate(self) -> float:
        if not self.clusters:
            return 0.0
        return sum(c.error_rate for c in self.clusters) / len(self.clusters)


def quality_report(labels, n_clusters: int, distance, banded: Mapping[str, Sequence[np.ndarray]]) -> ClusterQualityReport:
    """Clustering errors for every cluster; single-member clusters count as error-free."""
    labels = np.asarray(labels)
    report = ClusterQualityReport()
    for cid in range(n_clusters):
        members = np.flatnonzero(labels == cid).tolist()
        ce = 0
        if len(members) >= 2:
            sub_bands = {f: [seqs[m] for m in members] for f, seqs in banded.items()}
            ce = estimate_clustering_errors(members, distance, sub_bands).ce_count
        report.clusters.append(ClusterQuality(cid, len(members), ce))
    return report


def write_quality_csv(report: ClusterQualityReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "size", "ce_count", "error_rate"])
        for c in report.clusters:
            w.writerow([c.cluster_id, c.size, c.ce_count, repr(c.error_rate)])
        w.writerow(["mean", sum(c.size for c in report.clusters), sum(c.ce_count for c in report.clusters),
                    repr(report.mean_error_rate)])


@dataclass(frozen=True)
class SummaryRow:
    cluster_id: int
    connections: int
    samples: int
    families: int
    capability: str
    direction: str


def cluster_summary(
    labels,
    connections: Sequence[Connection],
    family_labels: Mapping[str, str] | None = None,
    capability_labels: Mapping[str, str] | None = None,
) -> list[SummaryRow]:
    """Per-cluster connection, sample and family counts, majority direction, capability label."""
    family_labels = family_labels or {}
    capability_labels = capability_labels or {}
    labels = np.asarray(labels)
    rows = []
    ids = sorted({int(v) for v in labels if v != NOISE})
    for cid in ids:
        members = [connections[i] for i in np.flatnonzero(labels == cid)]
        samples = {c.sample_id for c in members}
        fams = {family_labels.get(s, UNKNOWN_FAMILY) for s in samples}
        dirs = Counter(c.direction for c in members)
        # ties go to Outgoing
        direction = max((Direction.OUTGOING, Direction.INCOMING), key=lambda d: dirs[d])
        rows.append(
            SummaryRow(
                cluster_id=cid,
                connections=len(members),
                samples=len(samples),
                families=len(fams),
                capability=capability_labels.get(str(cid), "unlabeled"),
                direction=direction.value,
            )
        )
    return rows


SUMMARY_COLUMNS = ("cluster_id", "connections", "samples", "families", "capability", "direction")


def write_summary_csv(rows: Sequence[SummaryRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([getattr(r, c) for c in SUMMARY_COLUMNS])


def summary_text(rows: Sequence[SummaryRow], quality: ClusterQualityReport | None = None) -> str:
    rates = {c.cluster_id: c.error_rate for c in quality.clusters} if quality else {}
    header = f"{'cluster':>8} {'conns':>6} {'samples':>7} {'families':>8} {'dir':>9} {'CE rate':>8}  capability"
    lines = [header, "-" * len(header)]
    for r in rows:
        rate = f"{rates[r.cluster_id]:.3f}" if r.cluster_id in rates else "-"
        lines.append(
            f"{'c' + str(r.cluster_id):>8} {r.connections:>6} {r.samples:>7} {r.families:>8} "
            f"{r.direction:>9} {rate:>8}  {r.capability}"
        )
    if quality is not None:
        lines.append(f"mean clustering-error rate: {quality.mean_error_rate:.4f}")
    return "\n".join(lines) + "\n"
