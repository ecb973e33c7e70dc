"""HDBSCAN over a precomputed distance matrix.

Steps: core distances, mutual reachability, minimum spanning tree, a
single-linkage hierarchy read off the sorted tree edges, the condensed tree,
and excess-of-mass cluster selection. Every tie is broken by point index so
results are reproducible.

Merges that happen at exactly the same distance are treated as one
simultaneous split when condensing. This makes the condensed tree depend only
on the connected components at each distance level, not on which of several
equal-weight edges the spanning tree happened to contain.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import KTooLarge, TooFewPoints

log = logging.getLogger(__name__)

NOISE = -1


@dataclass(frozen=True)
class ClusterParams:
    min_cluster_size: int = 7
    k_nearest_neighbors: int = 7

    def __post_init__(self):
        if self.min_cluster_size < 1 or self.k_nearest_neighbors < 1:
            raise ValueError("min_cluster_size and k_nearest_neighbors must be >= 1")


@dataclass(frozen=True)
class CondensedRecord:
    parent: int
    child: int
    lambda_val: float
    child_size: int


@dataclass
class ClusterResult:
    labels: np.ndarray
    n_clusters: int
    condensed_tree: list[CondensedRecord] = field(default_factory=list)
    stabilities: list[float] = field(default_factory=list)
    mst: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def n_noise(self) -> int:
        return int((self.labels == NOISE).sum())

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)

    def sizes(self) -> list[int]:
        return [int((self.labels == c).sum()) for c in range(self.n_clusters)]


def _as_array(d) -> np.ndarray:
    return np.asarray(getattr(d, "values", d), dtype=float)


def core_distances(D, k: int) -> np.ndarray:
    """Distance from each point to its k-th nearest other point."""
    d = _as_array(D)
    n = d.shape[0]
    if k < 1 or k > n - 1:
        raise KTooLarge(f"k={k} needs 1 <= k <= n-1 = {n - 1}")
    core = np.empty(n)
    idx = np.arange(n)
    for p in range(n):
        others = idx[idx != p]
        # stable sort keeps index order among equal distances
        order = np.argsort(d[p, others], kind="stable")
        core[p] = d[p, others[order[k - 1]]]
    return core


def mutual_reachability(D, core: np.ndarray) -> np.ndarray:
    d = _as_array(D)
    core = np.asarray(core, dtype=float)
    m = np.maximum(d, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(m, 0.0)
    return m


def minimum_spanning_tree(mreach: np.ndarray) -> list[tuple[int, int, float]]:
    """Kruskal over all pairs, edges ordered by (weight, smaller index, larger index).

    The returned edges are in that same order, which is the merge order of
    the single-linkage hierarchy.
    """
    n = mreach.shape[0]
    iu, ju = np.triu_indices(n, 1)
    w = mreach[iu, ju]
    order = np.lexsort((ju, iu, w))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for e in order:
        a, b = int(iu[e]), int(ju[e])
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        parent[max(ra, rb)] = min(ra, rb)
        edges.append((a, b, float(w[e])))
        if len(edges) == n - 1:
            break
    return edges


def single_linkage(edges: list[tuple[int, int, float]], n: int):
    """Binary merge tree; node ids >= n are merges, numbered in merge order.

    Returns (children, distance, size) arrays indexed by node id.
    """
    total = 2 * n - 1
    children = np.full((total, 2), -1, dtype=np.int64)
    distance = np.zeros(total)
    size = np.ones(total, dtype=np.int64)
    uf = list(range(total))
    top = list(range(n))  # union-find root -> current tree node

    def find(x):
        while uf[x] != x:
            uf[x] = uf[uf[x]]
            x = uf[x]
        return x

    for m, (a, b, w) in enumerate(edges):
        node = n + m
        ra, rb = find(a), find(b)
        na, nb = top[ra], top[rb]
        children[node] = (min(na, nb), max(na, nb))
        distance[node] = w
        size[node] = size[na] + size[nb]
        keep = min(ra, rb)
        uf[max(ra, rb)] = keep
        top[keep] = node
    return children, distance, size


def _leaves(node: int, children: np.ndarray, n: int) -> list[int]:
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(int(x))
        else:
            stack.extend(children[x])
    return sorted(out)


def _components_at(node: int, children, distance, n: int) -> list[int]:
    """Subtrees hanging below ``node`` once every merge at its distance is undone."""
    level = distance[node]
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x >= n and distance[x] == level:
            stack.extend(children[x])
        else:
            out.append(x)
    return sorted(out, key=lambda c: _leaves(c, children, n)[0])


def _lam(dist: float) -> float:
    return np.inf if dist <= 0 else 1.0 / dist


def condense_tree(children, distance, size, n: int, min_cluster_size: int) -> list[CondensedRecord]:
    """Cluster labels start at ``n`` for the root and grow in breadth-first order."""
    records: list[CondensedRecord] = []
    if n < 2:
        return records
    root = 2 * n - 2
    queue = [(root, n)]
    next_label = n + 1
    while queue:
        node, label = queue.pop(0)
        lam = _lam(distance[node])
        comps = _components_at(node, children, distance, n)
        big = [c for c in comps if size[c] >= min_cluster_size]
        if len(big) >= 2:
            for c in comps:
                if size[c] >= min_cluster_size:
                    records.append(CondensedRecord(label, next_label, lam, int(size[c])))
                    queue.append((c, next_label))
                    next_label += 1
                else:
                    records.extend(CondensedRecord(label, int(p), lam, 1) for p in _leaves(c, children, n))
            continue
        for c in comps:
            if big and c == big[0]:
                if c >= n:
                    queue.append((c, label))
                else:
                    records.append(CondensedRecord(label, int(c), np.inf, 1))
            else:
                records.extend(CondensedRecord(label, int(p), lam, 1) for p in _leaves(c, children, n))
    return records


def compute_stability(records: list[CondensedRecord], n: int) -> dict[int, float]:
    """Excess of mass per condensed cluster.

    Infinite lambdas (zero distances between distinct points) are clamped to
    the largest finite lambda in the tree, so every contribution is finite.
    """
    finite = [r.lambda_val for r in records if np.isfinite(r.lambda_val)]
    cap = max(finite) if finite else 1.0
    birth = {n: 0.0}
    for r in records:
        if r.child >= n:
            birth[r.child] = min(r.lambda_val, cap)
    stability = {c: 0.0 for c in birth}
    for r in records:
        stability[r.parent] += (min(r.lambda_val, cap) - birth[r.parent]) * r.child_size
    return stability


def select_clusters(records: list[CondensedRecord], n: int) -> tuple[set[int], dict[int, float]]:
    stability = compute_stability(records, n)
    child_clusters: dict[int, list[int]] = {c: [] for c in stability}
    for r in records:
        if r.child >= n:
            child_clusters[r.parent].append(r.child)
    candidates = sorted((c for c in stability if c != n), reverse=True)
    if not candidates:
        # no split ever produced two large enough sides: the whole set is one cluster
        return ({n} if records else set()), stability
    selected = {}
    propagated = dict(stability)
    for c in candidates:
        sub = sum(propagated[ch] for ch in child_clusters[c])
        if sub > propagated[c]:
            propagated[c] = sub
            selected[c] = False
        else:
            selected[c] = True
            stack = list(child_clusters[c])
            while stack:
                x = stack.pop()
                selected[x] = False
                stack.extend(child_clusters[x])
    return {c for c, s in selected.items() if s}, stability


def _label_points(records, selected: set[int], n: int) -> np.ndarray:
    parent_of = {r.child: r.parent for r in records}
    labels = np.full(n, NOISE, dtype=np.int64)
    for p in range(n):
        x = parent_of.get(p)
        while x is not None:
            if x in selected:
                labels[p] = x
                break
            x = parent_of.get(x)
    return labels


def _canonicalize(raw: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Renumber clusters 0..C-1 in order of their smallest member index."""
    order: list[int] = []
    for v in raw:
        if v != NOISE and v not in order:
            order.append(int(v))
    mapping = {old: new for new, old in enumerate(order)}
    out = np.array([mapping.get(int(v), NOISE) for v in raw], dtype=np.int64)
    return out, order


def cluster(D, params: ClusterParams = ClusterParams()) -> ClusterResult:
    d = _as_array(D)
    n = d.shape[0]
    if n < 2:
        raise TooFewPoints(f"need at least 2 points, got {n}")
    # sizes below 2 would make single points into clusters
    mcs = max(2, params.min_cluster_size)
    if n < mcs:
        return ClusterResult(labels=np.full(n, NOISE, dtype=np.int64), n_clusters=0)
    k = params.k_nearest_neighbors
    if k > n - 1:
        log.warning("k_nearest_neighbors=%d exceeds n-1=%d; using %d", k, n - 1, n - 1)
        k = n - 1
    core = core_distances(d, k)
    mreach = mutual_reachability(d, core)
    edges = minimum_spanning_tree(mreach)
    children, distance, size = single_linkage(edges, n)
    records = condense_tree(children, distance, size, n, mcs)
    selected, stability = select_clusters(records, n)
    labels, order = _canonicalize(_label_points(records, selected, n))
    return ClusterResult(
        labels=labels,
        n_clusters=len(order),
        condensed_tree=records,
        stabilities=[stability[c] for c in order],
        mst=edges,
    )


def tree_to_json(result: ClusterResult) -> str:
    """Condensed tree as JSON; infinite lambdas are written as null."""
    doc = {
        "n_clusters": result.n_clusters,
        "stabilities": [float(s) for s in result.stabilities],
        "condensed_tree": [
            {
                "parent": int(r.parent),
                "child": int(r.child),
                "lambda": float(r.lambda_val) if np.isfinite(r.lambda_val) else None,
                "child_size": int(r.child_size),
            }
            for r in result.condensed_tree
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)
