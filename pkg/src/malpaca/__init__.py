"""Behavioral clustering of malware network connections.

Connections are compared by dynamic time warping over packet sizes and
inter-arrival times plus n-gram cosine distance over port sequences, grouped
with HDBSCAN, and summarized per sample as cluster membership strings.
"""

from .capture import Connection, Direction, PacketRecord, extract_connections, parse_capture
from .clustering import NOISE, ClusterParams, ClusterResult, cluster
from .distance import DistanceMatrix, combined_matrix, cosine_distance, dtw_distance, normalize_matrix
from .features import baseline_features, build_vocabulary, ngram_profile
from .pipeline import PipelineConfig, run_baseline_comparison, run_pipeline
from .profiles import build_cms, build_dag, hamming

__version__ = "0.1.0"

__all__ = [
    "NOISE", "ClusterParams", "ClusterResult", "Connection", "Direction", "DistanceMatrix", "PacketRecord",
    "PipelineConfig", "baseline_features", "build_cms", "build_dag", "build_vocabulary", "cluster",
    "combined_matrix", "cosine_distance", "dtw_distance", "extract_connections", "hamming", "ngram_profile",
    "normalize_matrix", "parse_capture", "run_baseline_comparison", "run_pipeline",
]
