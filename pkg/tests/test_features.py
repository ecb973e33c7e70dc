import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malpaca import features
from malpaca.features import (
    NgramVocabulary,
    baseline_features,
    build_vocabulary,
    ngram_profile,
    profile_matrix,
)

from .conftest import make_conn

WORKED_G = NgramVocabulary(2, ("AB", "BC", "CB", "DA", "CA"))


def test_worked_example_profiles():
    assert ngram_profile("ABCBC", WORKED_G).counts.tolist() == [1, 2, 1, 0, 0]
    assert ngram_profile("DABCA", WORKED_G).counts.tolist() == [1, 1, 0, 1, 1]


def test_vocabulary_is_sorted_union():
    v = build_vocabulary(["ABCBC", "DABCA"], 2)
    assert set(v.grams) == set(WORKED_G.grams)
    assert list(v.grams) == sorted(v.grams)


def test_vocabulary_edge_cases():
    assert len(build_vocabulary(["A"], 2)) == 0
    assert build_vocabulary([(80, 80, 80)], 3).grams == ((80, 80, 80),)


def test_short_sequence_gives_zero_profile():
    p = ngram_profile("A", WORKED_G)
    assert p.counts.tolist() == [0] * 5 and p.out_of_vocabulary == 0


def test_out_of_vocabulary_windows_are_counted():
    p = ngram_profile("ZZAB", WORKED_G)
    assert p.counts.tolist() == [1, 0, 0, 0, 0] and p.out_of_vocabulary == 2


def test_duplicate_grams_rejected():
    with pytest.raises(ValueError):
        NgramVocabulary(1, ("A", "A"))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(st.integers(0, 4), max_size=12), min_size=1, max_size=6), st.integers(1, 4))
def test_profile_counts_sum_to_window_count(seqs, order):
    vocab = build_vocabulary(seqs, order)
    dense = profile_matrix(seqs, vocab).toarray()
    for row, s in zip(dense, seqs):
        assert row.sum() == max(0, len(s) - order + 1)
        assert row.tolist() == ngram_profile(s, vocab).counts.tolist()


def test_baseline_average_size():
    f = baseline_features(make_conn("x", [100, 200, 300], [0.0, 5.0, 15.0]))
    assert f.avg_size == 200
    assert f.avg_interval == 10.0
    assert f.duration == pytest.approx(0.02)


def test_baseline_single_packet():
    f = baseline_features(make_conn("x", [60], [0.0]))
    assert (f.avg_interval, f.duration, f.max_psd) == (0.0, 0.0, 0.0)


def _dft_power(signal):
    n = len(signal)
    out = []
    for k in range(n // 2 + 1):
        x = sum(signal[t] * cmath.exp(-2j * math.pi * k * t / n) for t in range(n))
        out.append(abs(x) ** 2 / n)
    return out


def test_baseline_psd_matches_direct_dft():
    conn = make_conn("x", [100] * 32, [0.0] + [1000.0] * 31)
    bw = 0.25
    f = baseline_features(conn, bin_width=bw)
    # 31 s of packets, one per second, sampled every 0.25 s
    n = math.floor(31 / bw) + 1
    signal = [1.0 if t % 4 == 0 else 0.0 for t in range(n)]
    power = _dft_power(signal)
    k = max(range(1, len(power)), key=lambda i: power[i])
    assert f.max_psd == pytest.approx(power[k], rel=1e-9)
    assert abs(k / (n * bw) - 1.0) <= 1 / (n * bw)


def test_presence_signal_marks_packets():
    s = features.presence_signal(np.array([0.0, 0.5, 2.0]), 1.0)
    assert s.tolist() == [1.0, 0.0, 1.0]


def test_baseline_is_translation_invariant():
    a = make_conn("x", [60, 70, 80, 90], [0.0, 400.0, 900.0, 700.0])
    b = make_conn(("other", "1.1.1.1", "2.2.2.2"), [60, 70, 80, 90], [0.0, 400.0, 900.0, 700.0])
    assert baseline_features(a) == baseline_features(b)


def test_bad_bin_width():
    with pytest.raises(ValueError):
        baseline_features(make_conn("x", [60, 60]), bin_width=0)


def test_feature_dump(tmp_path, five_kind_fixture):
    conns, _ = five_kind_fixture
    vocabs = {f: build_vocabulary([c.feature(f) for c in conns], 3) for f in ("sp", "dp")}
    path = tmp_path / "features.csv"
    features.write_feature_dump(conns, vocabs["sp"], vocabs["dp"], path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(conns) + 1
    assert lines[0].split(",")[:5] == ["key", *features.BASELINE_COLUMNS]
