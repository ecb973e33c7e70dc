import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malpaca import profiles
from malpaca.clustering import NOISE, ClusterResult
from malpaca.errors import LengthMismatch, UnknownSample
from malpaca.profiles import (
    BehavioralProfile,
    build_cms,
    build_dag,
    family_cluster_matrix,
    hamming,
    label_agreement,
)


def _result(labels, n_clusters):
    return ClusterResult(labels=np.array(labels), n_clusters=n_clusters)


def test_cms_bits_for_two_clusters():
    keys = [("s1", "a", "b"), ("s1", "a", "c"), ("s2", "a", "b")]
    res = _result([14, 16, 3], 18)
    assert build_cms("s1", res, keys).cms == "000000000000001010"


def test_cms_all_noise_and_empty():
    keys = [("s1", "a", "b"), ("s1", "a", "c")]
    assert build_cms("s1", _result([NOISE, NOISE], 4), keys).cms == "0000"
    assert build_cms("s1", _result([NOISE, NOISE], 0), keys).cms == ""
    with pytest.raises(UnknownSample):
        build_cms("nobody", _result([0, 0], 1), keys)


def test_build_profiles_covers_every_sample():
    keys = [("b", "x", "y"), ("a", "x", "y"), ("a", "x", "z")]
    profs = profiles.build_profiles(_result([0, NOISE, 1], 2), keys)
    assert profs == [BehavioralProfile("a", "01"), BehavioralProfile("b", "10")]


def test_hamming():
    assert hamming("011", "111") == 1
    assert hamming("101", "101") == 0
    assert hamming("000", "111") == 3
    with pytest.raises(LengthMismatch):
        hamming("0", "01")


def _dag(cmss):
    return build_dag([BehavioralProfile(f"s{i}", c) for i, c in enumerate(cmss)])


def test_dag_chain():
    dag = _dag(["110", "000", "100"])
    assert sorted(dag.edges) == [("000", "100"), ("100", "110")]
    assert dag.roots == ["000"]


def test_dag_two_parents():
    dag = _dag(["110", "101", "111"])
    assert sorted(dag.parents("111")) == ["101", "110"]


def test_dag_single_node():
    dag = _dag(["010"])
    assert dag.edges == [] and dag.roots == ["010"]


def test_dag_annotations_and_dot():
    profs = [BehavioralProfile("a", "01"), BehavioralProfile("b", "01"), BehavioralProfile("c", "11")]
    dag = build_dag(profs, {"a": "Zeus", "b": "Dridex"})
    assert dag.annotations["01"] == {"Zeus": 1, "Dridex": 1}
    assert dag.annotations["11"] == {"UNKNOWN": 1}
    dot = profiles.dag_to_dot(dag)
    assert dot.startswith("digraph") and "->" in dot


def brute_force_edges(nodes):
    bits = {v: {i for i, c in enumerate(v) if c == "1"} for v in nodes}
    edges = set()
    for v in nodes:
        subs = [u for u in nodes if bits[u] < bits[v]]
        if subs:
            best = min(len(bits[v] - bits[u]) for u in subs)
            edges |= {(u, v) for u in subs if len(bits[v] - bits[u]) == best}
    return edges


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12).flatmap(
    lambda n: st.lists(st.text("01", min_size=n, max_size=n), min_size=1, max_size=15)))
def test_dag_matches_brute_force(cmss):
    dag = _dag(cmss)
    assert set(dag.edges) == brute_force_edges(set(cmss))
    assert sorted(dag.nodes) == sorted(set(cmss))
    for u, v in dag.edges:
        pu, pv = u.count("1"), v.count("1")
        assert pu < pv and sum(a == b == "1" for a, b in zip(u, v)) == pu
    zero = "0" * len(cmss[0])
    if zero in cmss:
        assert dag.roots == [zero]


def test_dag_rejects_mixed_lengths():
    with pytest.raises(LengthMismatch):
        _dag(["01", "011"])


def test_agreement_identity():
    a = {"s1": "X", "s2": "Y", "s3": "Y"}
    rep = label_agreement(a, a)
    assert rep.crosstab == {("X", "X"): 1, ("Y", "Y"): 2}
    assert rep.mean_distinct_a == 1.0 and rep.mean_distinct_b == 1.0


def test_agreement_split():
    rep = label_agreement({"s1": "X", "s2": "X"}, {"s1": "P", "s2": "Q"})
    assert rep.distinct_counterparts("a") == {"X": 2}
    assert rep.mean_distinct_a == 2.0 and rep.mean_distinct_b == 1.0


def test_agreement_three_families():
    fam = {"s1": "A", "s2": "A", "s3": "A", "s4": "B", "s5": "B", "s6": "C", "s7": "C", "s8": "C"}
    cms = {"s1": "01", "s2": "01", "s3": "11", "s4": "11", "s5": "10", "s6": "10", "s7": "10", "s9": "00"}
    rep = label_agreement(fam, cms)
    assert rep.crosstab == {("A", "01"): 2, ("A", "11"): 1, ("B", "10"): 1, ("B", "11"): 1, ("C", "10"): 2}
    assert rep.mean_distinct_a == pytest.approx(5 / 3)
    assert rep.mean_distinct_b == pytest.approx(5 / 3)
    assert (rep.only_a, rep.only_b) == (1, 1)


def test_agreement_csv(tmp_path):
    rep = label_agreement({"s1": "X", "s2": "X"}, {"s1": "P", "s2": "Q"})
    profiles.write_agreement_csv(rep, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines() == ["label,P,Q", "X,1,1"]


def test_family_matrix_union():
    m = family_cluster_matrix([BehavioralProfile("a", "101")], {"a": "F"})
    assert m.cluster_counts() == {"F": 2}
    m = family_cluster_matrix([BehavioralProfile("a", "100"), BehavioralProfile("b", "001")], {"a": "F", "b": "F"})
    assert m.presence.tolist() == [[True, False, True]] and m.cluster_counts() == {"F": 2}


def test_family_matrix_brute_force():
    rng = np.random.default_rng(0)
    fams = ["A", "B", "C"]
    profs, labels = [], {}
    for i in range(9):
        cms = "".join(rng.choice(["0", "1"], 6))
        profs.append(BehavioralProfile(f"s{i}", cms))
        labels[f"s{i}"] = fams[i % 3]
    m = family_cluster_matrix(profs, labels)
    for f, row in zip(m.families, m.presence):
        ref = [any(p.cms[j] == "1" for p in profs if labels[p.sample_id] == f) for j in range(6)]
        assert row.tolist() == ref


def test_profiles_csv_roundtrip(tmp_path):
    profs = [BehavioralProfile("a", "01"), BehavioralProfile("b", "11")]
    profiles.write_profiles_csv(profs, {"a": "Zeus"}, tmp_path / "p.csv")
    back, fams = profiles.read_profiles_csv(tmp_path / "p.csv")
    assert back == profs and fams == {"a": "Zeus", "b": "UNKNOWN"}


def test_label_csv_header_skipped(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("sample,label\na,Zeus\nb,Emotet\n")
    assert profiles.read_label_csv(p) == {"a": "Zeus", "b": "Emotet"}
