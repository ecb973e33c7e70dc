"""End-to-end run: captures in, clusters, profiles and reports out.

Every stage writes its artifact before the next starts, so a failed run
leaves the output of the completed stages behind. The manifest records the
configuration, input digests and packet/connection accounting; it carries no
timestamps or output paths, so identical runs produce identical directories.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import capture, clustering, distance, features, profiles, reporting
from .clustering import NOISE, ClusterParams, ClusterResult
from .errors import InvalidParams, PipelineError

log = logging.getLogger(__name__)

CAPTURE_SUFFIXES = (".pcap", ".cap", ".jsonl")


@dataclass
class PipelineConfig:
    input: list[Path] = field(default_factory=list)
    out: Path = Path("malpaca-out")
    length: int = 20
    min_len: int | None = None
    order: int = 3
    min_cluster_size: int = 7
    k: int = 7
    features: tuple[str, ...] = distance.FEATURES
    baseline: bool = False
    bin_width: float = 1.0
    localhost: tuple[str, ...] = ()
    family_labels: Path | None = None
    capability_labels: Path | None = None
    workers: int | None = None
    resume: bool = False

    def __post_init__(self):
        if isinstance(self.input, (str, Path)):
            self.input = [self.input]
        self.input = [Path(p) for p in self.input]
        self.out = Path(self.out)
        self.features = tuple(self.features)
        self.localhost = tuple(self.localhost)
        for name in ("family_labels", "capability_labels"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, Path(v))

    @property
    def effective_min_len(self) -> int:
        return self.length if self.min_len is None else self.min_len

    def fingerprint(self) -> dict[str, Any]:
        """Settings that shape the artifacts; paths of the output and worker count excluded."""
        d = {}
        for f in fields(self):
            if f.name in ("out", "workers", "resume"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, Path):
                v = v.name
            elif isinstance(v, list):
                v = [p.name for p in v]
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        d["min_len"] = self.effective_min_len
        return d


_INT_KEYS = {"length", "min_len", "order", "min_cluster_size", "k", "workers"}
_ALIASES = {"len": "length", "k_nearest_neighbors": "k", "min-cluster-size": "min_cluster_size"}


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key == "bin_width":
        return float(value)
    if key in ("baseline", "resume"):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if key in ("features", "localhost"):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if key == "input":
        return [Path(v.strip()) for v in value.split(",") if v.strip()]
    return value


def read_config_file(path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    valid = {f.name for f in fields(PipelineConfig)}
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParams(f"{path}:{i}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        key = _ALIASES.get(key, key)
        if key not in valid:
            raise InvalidParams(f"{path}:{i}: unknown setting {key!r}")
        out[key] = _coerce(key, value)
    return out


def make_config(file_settings: dict | None = None, **overrides) -> PipelineConfig:
    """Config-file values, overridden by any non-None keyword."""
    merged = dict(file_settings or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**merged)


def discover_inputs(paths: Sequence[Path]) -> list[Path]:
    found = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            found.extend(sorted(q for q in p.iterdir() if q.is_file() and q.suffix.lower() in CAPTURE_SUFFIXES))
        elif p.is_file():
            found.append(p)
        else:
            raise PipelineError(f"input path does not exist: {p}")
    return found


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunResult:
    out_dir: Path
    connections: list[capture.Connection]
    distances: distance.DistanceMatrix
    clusters: ClusterResult
    profiles: list[profiles.BehavioralProfile]
    quality: reporting.ClusterQualityReport
    manifest: dict
    exit_status: int = 0


def write_clusters_csv(keys: Sequence[str], labels, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["connection", "cluster"])
        for k, lab in zip(keys, labels):
            w.writerow([k, "noise" if lab == NOISE else int(lab)])


def read_clusters_csv(path) -> dict[str, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["connection"]: (NOISE if r["cluster"] == "noise" else int(r["cluster"])) for r in csv.DictReader(fh)}


def render_heatmaps(connections, labels, n_clusters: int, out_dir: Path) -> list[Path]:
    """Write ``cluster<id>_<feature>.svg`` for every cluster and feature."""
    out_dir = Path(out_dir)
    if out_dir.exists():
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True)
    bands = reporting.fit_bands(connections)
    labels = np.asarray(labels)
    written = []
    for cid in range(n_clusters):
        members = [connections[i] for i in np.flatnonzero(labels == cid)]
        for feat in reporting.HEATMAP_FEATURES:
            spec = reporting.heatmap_spec(cid, feat, members, bands)
            path = out_dir / f"cluster{cid}_{feat}.svg"
            path.write_text(reporting.render_heatmap(spec), encoding="utf-8")
            written.append(path)
    return written


class _Stages:
    """Tracks completed stages so a failure can be reported with its stage name."""

    def __init__(self, manifest: dict, out: Path):
        self.manifest = manifest
        self.out = out
        self.current = None

    def start(self, name: str):
        self.current = name
        log.info("stage: %s", name)

    def done(self, *artifacts: str):
        self.manifest["stages"].append(self.current)
        self.manifest["artifacts"].extend(artifacts)
        self.current = None


def _write_manifest(manifest: dict, out: Path) -> None:
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _previous_manifest(out: Path) -> dict | None:
    path = out / "manifest.json"
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None


def run_pipeline(config: PipelineConfig) -> RunResult:
    """Run every stage; raises PipelineError with a diagnostic on failure."""
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    previous = _previous_manifest(out) if config.resume else None
    manifest: dict[str, Any] = {"config": config.fingerprint(), "stages": [], "artifacts": [], "status": "running"}
    stages = _Stages(manifest, out)
    try:
        return _run(config, out, manifest, stages, previous)
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["failed_stage"] = stages.current
        manifest["error"] = str(exc)
        _write_manifest(manifest, out)
        if isinstance(exc, PipelineError):
            raise
        raise PipelineError(f"stage {stages.current!r} failed: {exc}") from exc


def _run(config: PipelineConfig, out: Path, manifest: dict, stages: _Stages, previous: dict | None) -> RunResult:
    stages.start("ingest")
    paths = discover_inputs(config.input)
    packets: list[capture.PacketRecord] = []
    inputs = []
    non_ip = portless = malformed = 0
    for path in paths:
        cap = capture.parse_capture(path)
        packets.extend(cap.records)
        non_ip += cap.skipped_non_ip
        portless += cap.portless
        malformed += len(cap.malformed)
        inputs.append({
            "file": path.name,
            "sha256": _sha256(path),
            "ip_packets": len(cap.records),
            "non_ip_skipped": cap.skipped_non_ip,
            "portless": cap.portless,
            "malformed_records": len(cap.malformed),
        })
    manifest["inputs"] = inputs
    ext = capture.extract_connections(packets, config.length, config.effective_min_len, config.localhost)
    conns = ext.connections
    manifest["counts"] = {
        "raw_packets": len(packets) + non_ip,
        "ip_packets": len(packets),
        "non_ip_skipped": non_ip,
        "portless_packets": portless,
        "malformed_records": malformed,
        "connections_kept": len(conns),
        "connections_discarded_short": ext.discarded_connections,
        "packets_kept": sum(c.length for c in conns),
        "packets_discarded_short": ext.discarded_packets,
        "packets_truncated": ext.truncated_packets,
    }
    if len(conns) < 2:
        raise PipelineError(
            f"no usable connections: {len(conns)} connection(s) with >= {config.effective_min_len} packets "
            f"found in {len(paths)} capture file(s)"
        )
    capture.write_connections_csv(conns, out / "connections.csv")
    stages.done("connections.csv")

    stages.start("features")
    seqs_sp = [c.f_sp for c in conns]
    seqs_dp = [c.f_dp for c in conns]
    vocabs = {
        "sp": features.build_vocabulary(seqs_sp, config.order),
        "dp": features.build_vocabulary(seqs_dp, config.order),
    }
    features.write_feature_dump(conns, vocabs["sp"], vocabs["dp"], out / "features.csv", config.bin_width)
    stages.done("features.csv")

    stages.start("distances")
    keys = [c.label for c in conns]
    reuse = (
        previous is not None
        and previous.get("inputs") == manifest["inputs"]
        and previous.get("config") == manifest["config"]
        and "distances" in previous.get("stages", [])
        and (out / "distances.csv").exists()
    )
    if reuse:
        dm = distance.read_distance_csv(out / "distances.csv")
        if dm.keys != keys:
            reuse = False
    if reuse:
        log.info("reusing distances.csv from previous run")
    elif config.baseline:
        feats = [features.baseline_features(c, config.bin_width) for c in conns]
        dm = distance.baseline_matrix(keys, feats)
    else:
        dm = distance.combined_matrix(
            conns, vocabs, order=config.order, features=config.features, workers=config.workers
        )
    manifest["distances_reused"] = reuse
    distance.write_distance_csv(dm, out / "distances.csv")
    stages.done("distances.csv")

    stages.start("clustering")
    result = clustering.cluster(dm.values, ClusterParams(config.min_cluster_size, config.k))
    write_clusters_csv(keys, result.labels, out / "clusters.csv")
    (out / "condensed_tree.json").write_text(clustering.tree_to_json(result) + "\n", encoding="utf-8")
    manifest["counts"]["clusters"] = result.n_clusters
    manifest["counts"]["noise"] = result.n_noise
    stages.done("clusters.csv", "condensed_tree.json")

    stages.start("profiles")
    family = profiles.read_label_csv(config.family_labels) if config.family_labels else {}
    profs = profiles.build_profiles(result, [c.key for c in conns])
    profiles.write_profiles_csv(profs, family, out / "profiles.csv")
    dag = profiles.build_dag(profs, family)
    (out / "dag.dot").write_text(profiles.dag_to_dot(dag), encoding="utf-8")
    written = ["profiles.csv", "dag.dot"]
    if family:
        report = profiles.label_agreement(family, {p.sample_id: p.cms for p in profs})
        profiles.write_agreement_csv(report, out / "agreement.csv")
        written.append("agreement.csv")
    stages.done(*written)

    stages.start("heatmaps")
    svgs = render_heatmaps(conns, result.labels, result.n_clusters, out / "heatmaps")
    stages.done(*(f"heatmaps/{p.name}" for p in svgs))

    stages.start("reports")
    caps = profiles.read_label_csv(config.capability_labels) if config.capability_labels else {}
    rows = reporting.cluster_summary(result.labels, conns, family, caps)
    reporting.write_summary_csv(rows, out / "summary.csv")
    banded = reporting.band_sequences(conns, reporting.fit_bands(conns))
    quality = reporting.quality_report(result.labels, result.n_clusters, dm.values, banded)
    reporting.write_quality_csv(quality, out / "quality_report.csv")
    (out / "summary.txt").write_text(reporting.summary_text(rows, quality), encoding="utf-8")
    manifest["mean_ce_rate"] = quality.mean_error_rate
    stages.done("summary.csv", "quality_report.csv", "summary.txt")

    manifest["status"] = "ok"
    _write_manifest(manifest, out)
    return RunResult(out, conns, dm, result, profs, quality, manifest)


@dataclass
class ComparisonReport:
    sequential: RunResult
    baseline: RunResult

    @property
    def sequential_ce(self) -> float:
        return self.sequential.quality.mean_error_rate

    @property
    def baseline_ce(self) -> float:
        return self.baseline.quality.mean_error_rate

    @property
    def difference(self) -> float:
        return self.baseline_ce - self.sequential_ce


def run_baseline_comparison(config: PipelineConfig) -> ComparisonReport:
    """Run the sequence features and the statistical baseline side by side.

    Results land in ``<out>/sequential`` and ``<out>/baseline``, plus
    ``<out>/comparison.csv``.
    """
    base = asdict(config)
    seq = run_pipeline(PipelineConfig(**{**base, "out": config.out / "sequential", "baseline": False}))
    bl = run_pipeline(PipelineConfig(**{**base, "out": config.out / "baseline", "baseline": True}))
    report = ComparisonReport(seq, bl)
    with open(config.out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "clusters", "noise", "mean_ce_rate"])
        for name, run in (("sequential", seq), ("baseline", bl)):
            w.writerow([name, run.clusters.n_clusters, run.clusters.n_noise, repr(run.quality.mean_error_rate)])
        w.writerow(["difference", "", "", repr(report.difference)])
    return report
