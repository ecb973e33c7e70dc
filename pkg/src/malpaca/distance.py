"""Pairwise connection distances.

Packet sizes and inter-arrival times are compared with dynamic time warping,
port sequences with cosine distance over n-gram profiles. The combined
distance is the plain mean of the selected per-feature distances, after each
DTW matrix has been min-max scaled on its own.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .capture import Connection
from .errors import EmptySequence, LengthMismatch, TooFewConnections
from .features import (
    BaselineFeatures,
    NgramProfile,
    NgramVocabulary,
    build_vocabulary,
    profile_matrix,
)

FEATURES = ("ps", "in", "sp", "dp")
NUMERIC_FEATURES = ("ps", "in")


@numba.njit(cache=True, nogil=True)
def _dtw(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.empty(m)
    cur = np.empty(m)
    acc = 0.0
    for j in range(m):
        acc += abs(a[0] - b[j])
        prev[j] = acc
    for i in range(1, n):
        cur[0] = prev[0] + abs(a[i] - b[0])
        for j in range(1, m):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = best + abs(a[i] - b[j])
        prev, cur = cur, prev
    return prev[m - 1]


@numba.njit(cache=True, nogil=True)
def _dtw_rows(flat, offsets, rows, out):
    # fills out[i, j] for j > i, for every i in rows; entries are disjoint per row
    n = offsets.shape[0] - 1
    for r in range(rows.shape[0]):
        i = rows[r]
        a = flat[offsets[i] : offsets[i + 1]]
        for j in range(i + 1, n):
            out[i, j] = _dtw(a, flat[offsets[j] : offsets[j + 1]])


def dtw_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Cumulative |a_i - b_j| cost along the optimal unconstrained warping path."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise EmptySequence("dtw_distance needs two non-empty sequences")
    return float(_dtw(a, b))


def dtw_matrix(seqs: Sequence[Sequence[float]], workers: int = 1) -> np.ndarray:
    """Raw symmetric DTW matrix.

    Rows are dealt round-robin to ``workers`` threads; every cell is written by
    exactly one kernel call, so the result does not depend on ``workers``.
    """
    n = len(seqs)
    lengths = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=n)
    if n and lengths.min() == 0:
        raise EmptySequence("every sequence must be non-empty")
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    flat = np.concatenate([np.asarray(s, dtype=float) for s in seqs]) if n else np.zeros(0)
    out = np.zeros((n, n))
    workers = max(1, int(workers))
    if workers == 1:
        _dtw_rows(flat, offsets, np.arange(n, dtype=np.int64), out)
    else:
        chunks = [np.arange(w, n, workers, dtype=np.int64) for w in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda rows: _dtw_rows(flat, offsets, rows, out), chunks))
    iu = np.triu_indices(n, 1)
    out[(iu[1], iu[0])] = out[iu]
    return out


def normalize_matrix(raw: np.ndarray) -> np.ndarray:
    """Min-max scale the off-diagonal entries into [0, 1]; the diagonal stays 0.

    Extremes are taken over distinct pairs only. If every pair has the same
    value the result is all zeros.
    """
    raw = np.asarray(raw, dtype=float)
    n = raw.shape[0]
    out = np.zeros_like(raw)
    if n < 2:
        return out
    off = ~np.eye(n, dtype=bool)
    lo = raw[off].min()
    hi = raw[off].max()
    if hi > lo:
        out[off] = (raw[off] - lo) / (hi - lo)
    return out


def _as_counts(v) -> np.ndarray:
    return np.asarray(v.counts if isinstance(v, NgramProfile) else v)


def _cosine_from_gram(dot, uu, vv):
    # zero vectors are maximally distant
    denom = np.sqrt(uu * vv)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 - dot / denom
    d = np.where(denom > 0, d, 1.0)
    return np.clip(d, 0.0, 1.0)


def cosine_distance(u, v) -> float:
    u, v = _as_counts(u), _as_counts(v)
    if u.shape != v.shape:
        raise LengthMismatch(f"profile lengths differ: {u.shape} vs {v.shape}")
    if np.issubdtype(u.dtype, np.integer) and np.issubdtype(v.dtype, np.integer):
        # exact integer products so identical profiles give exactly 0
        dot, uu, vv = int(u @ v), int(u @ u), int(v @ v)
    else:
        u, v = u.astype(float), v.astype(float)
        dot, uu, vv = float(u @ v), float(u @ u), float(v @ v)
    return float(_cosine_from_gram(np.float64(dot), np.float64(uu), np.float64(vv)))


def cosine_matrix(seqs: Sequence[Sequence[int]], vocab: NgramVocabulary) -> np.ndarray:
    p = profile_matrix(seqs, vocab)
    gram = (p @ p.T).toarray().astype(np.float64)
    sq = np.diag(gram).copy()
    out = _cosine_from_gram(gram, sq[:, None], sq[None, :])
    np.fill_diagonal(out, 0.0)
    return out


@dataclass
class DistanceMatrix:
    keys: list[str]
    values: np.ndarray
    component_matrices: dict[str, np.ndarray] | None = None

    @property
    def n(self) -> int:
        return len(self.keys)

    def __post_init__(self):
        if self.values.shape != (len(self.keys), len(self.keys)):
            raise ValueError("matrix shape does not match key count")


def _check_features(features: Sequence[str]) -> tuple[str, ...]:
    feats = tuple(f for f in FEATURES if f in set(features))
    unknown = set(features) - set(FEATURES)
    if unknown or not feats:
        raise ValueError(f"feature subset must be drawn from {FEATURES}, got {list(features)}")
    return feats


def combined_matrix(
    connections: Sequence[Connection],
    vocabularies: dict[str, NgramVocabulary] | None = None,
    retain_components: bool = False,
    *,
    order: int = 3,
    features: Sequence[str] = FEATURES,
    workers: int | None = 1,
) -> DistanceMatrix:
    """Mean of normalized DTW (sizes, gaps) and n-gram cosine (ports) distances.

    ``vocabularies`` maps ``"sp"``/``"dp"`` to prebuilt vocabularies; missing
    ones are built over ``connections`` with the given ``order``.
    ``workers=None`` uses every available core.
    """
    if len(connections) < 2:
        raise TooFewConnections(f"need at least 2 connections, got {len(connections)}")
    feats = _check_features(features)
    workers = (os.cpu_count() or 1) if workers is None else workers
    vocabularies = dict(vocabularies or {})
    comps: dict[str, np.ndarray] = {}
    for f in feats:
        seqs = [c.feature(f) for c in connections]
        if f in NUMERIC_FEATURES:
            comps[f] = normalize_matrix(dtw_matrix(seqs, workers))
        else:
            if f not in vocabularies:
                vocabularies[f] = build_vocabulary(seqs, order)
            comps[f] = cosine_matrix(seqs, vocabularies[f])
    total = np.zeros((len(connections), len(connections)))
    for f in feats:
        total += comps[f]
    values = np.clip(total / len(feats), 0.0, 1.0)
    return DistanceMatrix(
        keys=[c.label for c in connections],
        values=values,
        component_matrices=comps if retain_components else None,
    )


def baseline_matrix(keys: Sequence[str], feats: Sequence[BaselineFeatures]) -> DistanceMatrix:
    """Euclidean distance over min-max scaled statistical features.

    Divided by sqrt(4) so values stay in [0, 1]; a uniform rescale leaves the
    density clustering unchanged.
    """
    if len(feats) < 2:
        raise TooFewConnections(f"need at least 2 connections, got {len(feats)}")
    x = np.vstack([f.as_vector() for f in feats])
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    x = np.where(hi > lo, (x - lo) / span, 0.0)
    diff = x[:, None, :] - x[None, :, :]
    values = np.sqrt((diff**2).sum(axis=2)) / math.sqrt(x.shape[1])
    np.fill_diagonal(values, 0.0)
    return DistanceMatrix(list(keys), np.clip(values, 0.0, 1.0))


def write_distance_csv(dm: DistanceMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", *dm.keys])
        for key, row in zip(dm.keys, dm.values):
            w.writerow([key, *map(repr, row.tolist())])


def read_distance_csv(path) -> DistanceMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    keys = rows[0][1:]
    if [r[0] for r in rows[1:]] != keys:
        raise ValueError(f"{path}: row keys do not match header")
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float).reshape(len(keys), len(keys))
    return DistanceMatrix(keys, values)
