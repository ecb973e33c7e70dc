"""Distance-ready representations of connections.

Port sequences become n-gram count vectors over a dataset-wide vocabulary.
The statistical baseline reduces a connection to four aggregate numbers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy import sparse

from .capture import Connection

Gram = tuple


def windows(seq: Sequence, order: int):
    return [tuple(seq[i : i + order]) for i in range(len(seq) - order + 1)]


@dataclass(frozen=True)
class NgramVocabulary:
    order: int
    grams: tuple[Gram, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        grams = tuple(tuple(g) for g in self.grams)
        if len(set(grams)) != len(grams):
            raise ValueError("vocabulary grams must be unique")
        object.__setattr__(self, "grams", grams)
        object.__setattr__(self, "index", {g: i for i, g in enumerate(grams)})

    def __len__(self) -> int:
        return len(self.grams)


@dataclass(frozen=True)
class NgramProfile:
    counts: np.ndarray
    out_of_vocabulary: int = 0

    def __len__(self) -> int:
        return len(self.counts)


def build_vocabulary(sequences: Sequence[Sequence[Hashable]], order: int = 3) -> NgramVocabulary:
    """Sorted union of every length-``order`` window over all sequences."""
    if order < 1:
        raise ValueError("order must be >= 1")
    grams = set()
    for seq in sequences:
        grams.update(windows(seq, order))
    return NgramVocabulary(order, tuple(sorted(grams)))


def ngram_profile(seq: Sequence[Hashable], vocab: NgramVocabulary) -> NgramProfile:
    counts = np.zeros(len(vocab), dtype=np.int64)
    oov = 0
    for g in windows(seq, vocab.order):
        i = vocab.index.get(g)
        if i is None:
            oov += 1
        else:
            counts[i] += 1
    return NgramProfile(counts, oov)


def profile_matrix(seqs: Sequence[Sequence[Hashable]], vocab: NgramVocabulary) -> sparse.csr_matrix:
    """Sparse (n, |G|) int64 matrix whose rows are the n-gram profiles of ``seqs``."""
    rows, cols = [], []
    for r, seq in enumerate(seqs):
        for g in windows(seq, vocab.order):
            i = vocab.index.get(g)
            if i is not None:
                rows.append(r)
                cols.append(i)
    data = np.ones(len(rows), dtype=np.int64)
    m = sparse.coo_matrix((data, (rows, cols)), shape=(len(seqs), len(vocab)), dtype=np.int64)
    return m.tocsr()


@dataclass(frozen=True)
class BaselineFeatures:
    avg_size: float
    avg_interval: float
    duration: float
    max_psd: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.avg_size, self.avg_interval, self.duration, self.max_psd], dtype=float)


BASELINE_COLUMNS = ("avg_size", "avg_interval", "duration", "max_psd")


def presence_signal(offsets_s: np.ndarray, bin_width: float) -> np.ndarray:
    """0/1 signal sampled every ``bin_width`` seconds, 1 where a packet falls."""
    duration = float(offsets_s[-1])
    n_bins = int(math.floor(duration / bin_width)) + 1
    signal = np.zeros(n_bins)
    idx = np.minimum((offsets_s / bin_width).astype(np.int64), n_bins - 1)
    signal[idx] = 1.0
    return signal


def baseline_features(conn: Connection, bin_width: float = 1.0) -> BaselineFeatures:
    """Average size, average gap, duration, and peak non-DC power of the presence signal.

    A signal shorter than one bin has no spectrum to speak of; its max_psd is 0.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    sizes = np.asarray(conn.f_ps, dtype=float)
    gaps_ms = np.asarray(conn.f_in, dtype=float)
    avg_size = float(sizes.mean())
    avg_interval = float(gaps_ms[1:].mean()) if len(gaps_ms) > 1 else 0.0
    # offsets from the first packet; time translation cancels out here
    offsets_s = np.cumsum(gaps_ms) / 1000.0
    duration = float(offsets_s[-1])
    if duration < bin_width:
        return BaselineFeatures(avg_size, avg_interval, duration, 0.0)
    s = presence_signal(offsets_s, bin_width)
    power = np.abs(np.fft.rfft(s)) ** 2 / len(s)
    max_psd = float(power[1:].max()) if len(power) > 1 else 0.0
    return BaselineFeatures(avg_size, avg_interval, duration, max_psd)


def write_feature_dump(
    connections: Sequence[Connection],
    sp_vocab: NgramVocabulary,
    dp_vocab: NgramVocabulary,
    path,
    bin_width: float = 1.0,
) -> None:
    """Debug CSV, one row per connection.

    Columns: key, avg_size, avg_interval, duration, max_psd, sp_ngrams, dp_ngrams.
    The n-gram columns list ``gram:count`` pairs for non-zero entries, grams
    joined with ``-``, pairs separated by spaces, in vocabulary order.
    """

    def fmt(profile: NgramProfile, vocab: NgramVocabulary) -> str:
        nz = np.flatnonzero(profile.counts)
        return " ".join(f"{'-'.join(map(str, vocab.grams[i]))}:{profile.counts[i]}" for i in nz)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", *BASELINE_COLUMNS, "sp_ngrams", "dp_ngrams"])
        for c in connections:
            b = baseline_features(c, bin_width)
            w.writerow([
                c.label, repr(b.avg_size), repr(b.avg_interval), repr(b.duration), repr(b.max_psd),
                fmt(ngram_profile(c.f_sp, sp_vocab), sp_vocab),
                fmt(ngram_profile(c.f_dp, dp_vocab), dp_vocab),
            ])
