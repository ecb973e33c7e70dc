"""Per-sample cluster membership strings and the behavioral DAG built from them."""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import NOISE
from .errors import LengthMismatch, UnknownSample

UNKNOWN_FAMILY = "UNKNOWN"


@dataclass(frozen=True)
class BehavioralProfile:
    sample_id: str
    cms: str

    @property
    def bits(self) -> frozenset[int]:
        return frozenset(i for i, b in enumerate(self.cms) if b == "1")


def _labels_of(cluster_result):
    labels = getattr(cluster_result, "labels", cluster_result)
    n_clusters = getattr(cluster_result, "n_clusters", None)
    labels = np.asarray(labels)
    if n_clusters is None:
        n_clusters = int(labels.max()) + 1 if labels.size else 0
    return labels, n_clusters


def build_cms(sample_id: str, cluster_result, connection_keys: Sequence[tuple]) -> BehavioralProfile:
    """Bit i is set iff one of the sample's connections landed in cluster i.

    ``connection_keys`` is aligned with the cluster labels; the first element of
    each key is the sample id.
    """
    labels, n_clusters = _labels_of(cluster_result)
    if len(labels) != len(connection_keys):
        raise LengthMismatch("labels and connection keys differ in length")
    bits = ["0"] * n_clusters
    seen = False
    for key, lab in zip(connection_keys, labels):
        if key[0] != sample_id:
            continue
        seen = True
        if lab != NOISE:
            bits[int(lab)] = "1"
    if not seen:
        raise UnknownSample(sample_id)
    return BehavioralProfile(sample_id, "".join(bits))


def build_profiles(cluster_result, connection_keys: Sequence[tuple]) -> list[BehavioralProfile]:
    """Profiles for every sample that owns at least one clustered connection, sorted by id."""
    labels, n_clusters = _labels_of(cluster_result)
    bits: dict[str, list[str]] = {}
    for key, lab in zip(connection_keys, labels):
        row = bits.setdefault(key[0], ["0"] * n_clusters)
        if lab != NOISE:
            row[int(lab)] = "1"
    return [BehavioralProfile(s, "".join(bits[s])) for s in sorted(bits)]


def hamming(a: str, b: str) -> int:
    if len(a) != len(b):
        raise LengthMismatch(f"cannot compare bit strings of length {len(a)} and {len(b)}")
    return sum(x != y for x, y in zip(a, b))


def is_strict_subset(a: str, b: str) -> bool:
    """Bits of ``a`` are a proper subset of the bits of ``b``."""
    return a != b and all(y == "1" for x, y in zip(a, b) if x == "1")


@dataclass
class BehaviorDag:
    nodes: list[str]
    edges: list[tuple[str, str]]
    annotations: dict[str, Counter] = field(default_factory=dict)

    def parents(self, node: str) -> list[str]:
        return [u for u, v in self.edges if v == node]

    @property
    def roots(self) -> list[str]:
        has_parent = {v for _, v in self.edges}
        return [v for v in self.nodes if v not in has_parent]


def _node_order(cms: str):
    return (cms.count("1"), cms)


def build_dag(
    profiles: Sequence[BehavioralProfile],
    family_labels: Mapping[str, str] | None = None,
) -> BehaviorDag:
    """Link each CMS to the strict-subset CMSs closest to it in Hamming distance.

    A node may have several parents. Nodes without any strict subset present
    are roots; when the all-zero CMS is present it is the only root.
    """
    family_labels = family_labels or {}
    lengths = {len(p.cms) for p in profiles}
    if len(lengths) > 1:
        raise LengthMismatch(f"CMS lengths differ: {sorted(lengths)}")
    annotations: dict[str, Counter] = defaultdict(Counter)
    for p in profiles:
        annotations[p.cms][family_labels.get(p.sample_id, UNKNOWN_FAMILY)] += 1
    nodes = sorted(annotations, key=_node_order)
    edges = []
    for v in nodes:
        subs = [u for u in nodes if is_strict_subset(u, v)]
        if not subs:
            continue
        best = min(hamming(u, v) for u in subs)
        edges.extend((u, v) for u in subs if hamming(u, v) == best)
    return BehaviorDag(nodes=nodes, edges=edges, annotations=dict(annotations))


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def dag_to_dot(dag: BehaviorDag) -> str:
    """DOT source; node labels carry the CMS and ``Family(count)`` annotations."""
    ids = {v: f"n{i}" for i, v in enumerate(dag.nodes)}
    lines = ["digraph behaviors {", "  rankdir=LR;", '  node [shape=box, fontname="monospace"];']
    for v in dag.nodes:
        fams = dag.annotations.get(v, Counter())
        ann = ", ".join(f"{f}({c})" for f, c in sorted(fams.items()))
        label = v if v else "(empty)"
        if ann:
            label += "\\n" + _dot_escape(ann)
        lines.append(f'  {ids[v]} [label="{label}"];')
    for u, v in dag.edges:
        lines.append(f"  {ids[u]} -> {ids[v]};")
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass
class AgreementReport:
    crosstab: dict[tuple[str, str], int]
    mean_distinct_a: float
    mean_distinct_b: float
    only_a: int
    only_b: int

    def distinct_counterparts(self, side: str = "a") -> dict[str, int]:
        partners: dict[str, set] = defaultdict(set)
        for (la, lb) in self.crosstab:
            if side == "a":
                partners[la].add(lb)
            else:
                partners[lb].add(la)
        return {k: len(v) for k, v in sorted(partners.items())}


def label_agreement(labels_a: Mapping[str, str], labels_b: Mapping[str, str]) -> AgreementReport:
    """Cross-tabulate two labelings over the samples they share."""
    shared = sorted(set(labels_a) & set(labels_b))
    crosstab: Counter = Counter((labels_a[s], labels_b[s]) for s in shared)
    report = AgreementReport(
        crosstab=dict(sorted(crosstab.items())),
        mean_distinct_a=0.0,
        mean_distinct_b=0.0,
        only_a=len(set(labels_a) - set(labels_b)),
        only_b=len(set(labels_b) - set(labels_a)),
    )
    for side in ("a", "b"):
        counts = report.distinct_counterparts(side)
        mean = sum(counts.values()) / len(counts) if counts else 0.0
        setattr(report, f"mean_distinct_{side}", mean)
    return report


def write_agreement_csv(report: AgreementReport, path) -> None:
    """Cross-tabulation with labels of side A as rows and side B as columns."""
    rows = sorted({a for a, _ in report.crosstab})
    cols = sorted({b for _, b in report.crosstab})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *cols])
        for a in rows:
            w.writerow([a, *(report.crosstab.get((a, b), 0) for b in cols)])


@dataclass
class FamilyMatrix:
    families: list[str]
    n_clusters: int
    presence: np.ndarray  # bool, families x clusters

    def cluster_counts(self) -> dict[str, int]:
        return {f: int(row.sum()) for f, row in zip(self.families, self.presence)}


def family_cluster_matrix(
    profiles: Iterable[BehavioralProfile], family_labels: Mapping[str, str]
) -> FamilyMatrix:
    """Union of each family's sample CMSs."""
    profiles = list(profiles)
    n = len(profiles[0].cms) if profiles else 0
    union: dict[str, np.ndarray] = {}
    for p in profiles:
        fam = family_labels.get(p.sample_id, UNKNOWN_FAMILY)
        row = union.setdefault(fam, np.zeros(n, dtype=bool))
        row |= np.frombuffer(p.cms.encode(), dtype=np.uint8) == ord("1")
    fams = sorted(union)
    presence = np.vstack([union[f] for f in fams]) if fams else np.zeros((0, n), dtype=bool)
    return FamilyMatrix(fams, n, presence)


def write_profiles_csv(profiles: Sequence[BehavioralProfile], family_labels: Mapping[str, str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "cms", "family_label"])
        for p in profiles:
            w.writerow([p.sample_id, p.cms, family_labels.get(p.sample_id, UNKNOWN_FAMILY)])


def read_profiles_csv(path) -> tuple[list[BehavioralProfile], dict[str, str]]:
    profiles, families = [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            profiles.append(BehavioralProfile(row["sample_id"], row["cms"]))
            families[row["sample_id"]] = row.get("family_label") or UNKNOWN_FAMILY
    return profiles, families


def read_label_csv(path) -> dict[str, str]:
    """Two-column CSV (id, label); a header row naming a ``label`` column is skipped."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}: line {i + 1} needs two columns")
            if i == 0 and row[1].strip().lower() == "label":
                continue
            out[row[0].strip()] = row[1].strip()
    return out
