"""Command-line entry point: ``malpaca {run,baseline-compare,synth,render,dag}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import capture, pipeline, profiles, synth
from .errors import MalpacaError

log = logging.getLogger("malpaca")


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value settings file; flags override it")
    p.add_argument("--input", type=Path, action="append", help="capture directory or file (repeatable)")
    p.add_argument("--out", type=Path)
    p.add_argument("--len", dest="length", type=int)
    p.add_argument("--min-len", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--min-cluster-size", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--features", type=_csv_list, help="subset of ps,in,sp,dp")
    p.add_argument("--baseline", action="store_true", default=None, help="cluster on statistical features")
    p.add_argument("--bin-width", type=float, help="seconds per sample of the presence signal")
    p.add_argument("--localhost", type=_csv_list, help="comma-separated local addresses")
    p.add_argument("--family-labels", type=Path)
    p.add_argument("--capability-labels", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--resume", action="store_true", default=None,
                   help="reuse distances.csv when inputs and settings are unchanged")


def _config_from(args) -> pipeline.PipelineConfig:
    file_settings = pipeline.read_config_file(args.config) if args.config else {}
    cfg = pipeline.make_config(
        file_settings,
        input=args.input, out=args.out, length=args.length, min_len=args.min_len, order=args.order,
        min_cluster_size=args.min_cluster_size, k=args.k, features=args.features, baseline=args.baseline,
        bin_width=args.bin_width, localhost=args.localhost, family_labels=args.family_labels,
        capability_labels=args.capability_labels, workers=args.workers, resume=args.resume,
    )
    if not cfg.input:
        raise SystemExit("error: no --input given")
    return cfg


def cmd_run(args) -> int:
    res = pipeline.run_pipeline(_config_from(args))
    c = res.manifest["counts"]
    print(
        f"{c['connections_kept']} connections ({c['connections_discarded_short']} too short), "
        f"{c['clusters']} clusters, {c['noise']} noise; mean CE rate {res.quality.mean_error_rate:.4f}"
    )
    print(f"artifacts in {res.out_dir}")
    return 0


def cmd_compare(args) -> int:
    rep = pipeline.run_baseline_comparison(_config_from(args))
    print(f"sequential mean CE rate: {rep.sequential_ce:.4f}")
    print(f"baseline   mean CE rate: {rep.baseline_ce:.4f}")
    print(f"difference (baseline - sequential): {rep.difference:+.4f}")
    return 0


def cmd_synth(args) -> int:
    kinds = args.kinds or ["SystematicPortScan", "RandomizedPortScan", "PeriodicHeartbeat",
                           "BroadcastDiscovery", "BulkTransfer"]
    ds = synth.synth_dataset(kinds, args.per_kind, args.length, args.seed, args.samples)
    paths = synth.write_dataset(ds, args.out, args.format)
    print(f"wrote {len(paths)} capture files and ground_truth.csv to {args.out}")
    print(f"local host address: {synth.LOCAL_HOST} (pass --localhost {synth.LOCAL_HOST} to run)")
    return 0


def cmd_render(args) -> int:
    conns = capture.read_connections_csv(args.run / "connections.csv")
    assigned = pipeline.read_clusters_csv(args.run / "clusters.csv")
    labels = [assigned[c.label] for c in conns]
    n_clusters = max(labels, default=-1) + 1
    out = args.out or args.run / "heatmaps"
    written = pipeline.render_heatmaps(conns, labels, n_clusters, out)
    print(f"wrote {len(written)} heatmaps to {out}")
    return 0


def cmd_dag(args) -> int:
    profs, families = profiles.read_profiles_csv(args.profiles)
    if args.family_labels:
        families.update(profiles.read_label_csv(args.family_labels))
    dag = profiles.build_dag(profs, families)
    text = profiles.dag_to_dot(dag)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="malpaca", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline")
    _add_run_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("baseline-compare", help="sequence features vs statistical baseline")
    _add_run_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="generate captures with planted behaviors")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--kinds", type=_csv_list, help=f"comma-separated, from {[b.value for b in synth.Behavior]}")
    p.add_argument("--per-kind", type=int, default=15)
    p.add_argument("--len", dest="length", type=int, default=20)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("jsonl", "pcap"), default="jsonl")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="re-render heatmaps from a run directory")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("dag", help="rebuild the behavior DAG from profiles.csv")
    p.add_argument("--profiles", type=Path, required=True)
    p.add_argument("--family-labels", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_dag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except MalpacaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
