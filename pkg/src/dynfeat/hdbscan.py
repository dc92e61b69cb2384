"""Hierarchical density clustering over mutual-reachability distance.

Pipeline: core distances -> dense Prim MST -> level hierarchy -> condensed tree
-> excess-of-mass selection. All merges at one edge weight happen simultaneously,
so the hierarchy does not depend on how ties in the MST were broken.
"""
from dataclasses import dataclass, field
from typing import List

import numba
import numpy as np
from scipy.spatial.distance import cdist

NOISE = -1


def _as_features(points) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("feature vectors must form a 2-D array")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature vectors must be finite")
    return X


def pairwise_distances(points) -> np.ndarray:
    X = _as_features(points)
    return cdist(X, X)


def core_distance(points, k: int, dist=None) -> np.ndarray:
    """Distance from each point to its k-th nearest other point."""
    X = _as_features(points)
    n = len(X)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    D = pairwise_distances(X) if dist is None else np.array(dist, dtype=np.float64)
    np.fill_diagonal(D, np.inf)
    return np.partition(D, k - 1, axis=1)[:, k - 1]


def mutual_reachability(i, j, kappa, d_ij) -> float:
    if i == j:
        return 0.0
    return max(kappa[i], kappa[j], d_ij)


def mutual_reachability_matrix(points, k: int) -> np.ndarray:
    D = pairwise_distances(points)
    kappa = core_distance(points, k, dist=D)
    M = np.maximum(D, np.maximum.outer(kappa, kappa))
    np.fill_diagonal(M, 0.0)
    return M


@dataclass(frozen=True)
class MstEdge:
    i: int
    j: int
    weight: float


@numba.njit(cache=True)
def _prim_edges(M):
    n = M.shape[0]
    in_tree = np.zeros(n, dtype=np.bool_)
    best = np.full(n, np.inf)
    src = np.zeros(n, dtype=np.int64)
    ei = np.empty(n - 1, dtype=np.int64)
    ej = np.empty(n - 1, dtype=np.int64)
    ew = np.empty(n - 1)
    v = 0
    for e in range(n - 1):
        in_tree[v] = True
        u = -1
        bu = np.inf
        for x in range(n):
            if in_tree[x]:
                continue
            if M[v, x] < best[x]:
                best[x] = M[v, x]
                src[x] = v
            if u < 0 or best[x] < bu:
                u = x
                bu = best[x]
        ei[e] = min(u, src[u])
        ej[e] = max(u, src[u])
        ew[e] = bu
        v = u
    return ei, ej, ew


def _prim(M: np.ndarray):
    """Dense Prim on a mutual-reachability matrix; edges as (i, j, w) sorted by (w, i, j)."""
    ei, ej, ew = _prim_edges(np.ascontiguousarray(M, dtype=np.float64))
    order = np.lexsort((ej, ei, ew))
    return [(int(ei[k]), int(ej[k]), float(ew[k])) for k in order]


def build_mst(points, k: int) -> List[MstEdge]:
    """Minimum spanning tree of the mutual-reachability graph, sorted by
    (weight, min index, max index)."""
    X = _as_features(points)
    if len(X) < 2:
        raise ValueError("build_mst needs at least 2 points")
    M = mutual_reachability_matrix(X, k)
    return [MstEdge(i, j, w) for i, j, w in _prim(M)]


@dataclass
class ClusterNode:
    id: int
    parent: int
    lambda_birth: float
    lambda_death: float
    size: int
    stability: float = 0.0
    children: List[int] = field(default_factory=list)


@dataclass
class CondensedTree:
    """Clusters plus, per point, the cluster it finally left and the lambda it left at.

    Node 0 is the root and covers every point.
    """

    nodes: List[ClusterNode]
    point_cluster: np.ndarray
    point_lambda: np.ndarray
    min_cluster_size: int

    @property
    def n_points(self) -> int:
        return len(self.point_cluster)

    def subtree(self, cid: int) -> List[int]:
        out, stack = [], [cid]
        while stack:
            c = stack.pop()
            out.append(c)
            stack.extend(self.nodes[c].children)
        return sorted(out)

    def members(self, cid: int) -> np.ndarray:
        """Indices of points that belong to cluster ``cid`` at its birth."""
        return np.flatnonzero(np.isin(self.point_cluster, self.subtree(cid)))


class _LevelTree:
    """n-ary single-linkage hierarchy; leaves 0..n-1 are points."""

    def __init__(self, n, edges):
        self.n = n
        self.children = [[] for _ in range(n)]
        self.weight = [0.0] * n
        self.size = [1] * n
        self.min_point = list(range(n))
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        node_of = list(range(n))
        edges = sorted(edges, key=lambda e: (e[2], e[0], e[1]))
        pos = 0
        while pos < len(edges):
            w = edges[pos][2]
            end = pos + 1
            while end < len(edges) and edges[end][2] == w:
                end += 1
            if end == pos + 1:
                i, j, _ = edges[pos]
                ri, rj = find(i), find(j)
                ni, nj = node_of[ri], node_of[rj]
                root = min(ri, rj)
                parent[max(ri, rj)] = root
                self._add(sorted((ni, nj), key=self.min_point.__getitem__), w)
                node_of[root] = len(self.children) - 1
                pos = end
                continue
            group = edges[pos:end]
            pre = [(node_of[find(i)], node_of[find(j)]) for i, j, _ in group]
            for i, j, _ in group:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
            merged = {}
            for (i, j, _), (ni, nj) in zip(group, pre):
                merged.setdefault(find(i), set()).update((ni, nj))
            for root in sorted(merged):
                self._add(sorted(merged[root], key=self.min_point.__getitem__), w)
                node_of[root] = len(self.children) - 1
            pos = end
        self.root = len(self.children) - 1

    def _add(self, kids, w):
        self.children.append(kids)
        self.weight.append(w)
        self.size.append(sum(self.size[c] for c in kids))
        self.min_point.append(min(self.min_point[c] for c in kids))

    def leaves(self, node):
        out, stack = [], [node]
        while stack:
            x = stack.pop()
            if x < self.n:
                out.append(x)
            else:
                stack.extend(self.children[x])
        return out


def condense(mst, min_cluster_size: int = 10, n_points=None) -> CondensedTree:
    """Condense the MST hierarchy: splits leaving a side smaller than
    ``min_cluster_size`` shed those points instead of spawning clusters.

    Stability of a cluster is the sum over its points of (lambda_exit - lambda_birth),
    with lambda = 1 / weight. Zero-weight merges are assigned the largest finite
    lambda in the tree, i.e. they happen together with the tightest positive merge.
    """
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be >= 2")
    edges = [(e.i, e.j, e.weight) if isinstance(e, MstEdge) else tuple(e) for e in mst]
    n = len(edges) + 1 if n_points is None else n_points
    if len(edges) != n - 1:
        raise ValueError("MST must have exactly n - 1 edges")
    positive = [w for _, _, w in edges if w > 0]
    lam_cap = 1.0 / min(positive) if positive else 1.0

    def lam(w):
        return 1.0 / w if w > 0 else lam_cap

    point_cluster = np.zeros(n, dtype=np.int64)
    point_lambda = np.zeros(n)
    nodes = [ClusterNode(0, -1, 0.0, np.inf, n)]
    if n == 1:
        return CondensedTree(nodes, point_cluster, point_lambda, min_cluster_size)
    lt = _LevelTree(n, edges)

    queue = [(lt.root, 0)]
    qpos = 0
    while qpos < len(queue):
        node, cid = queue[qpos]
        qpos += 1
        cl = nodes[cid]
        while True:
            lvl = lam(lt.weight[node])
            kids = lt.children[node]
            big = [c for c in kids if lt.size[c] >= min_cluster_size]
            for c in kids:
                if lt.size[c] < min_cluster_size:
                    pts = lt.leaves(c)
                    point_cluster[pts] = cid
                    point_lambda[pts] = lvl
                    cl.stability += len(pts) * (lvl - cl.lambda_birth)
            if len(big) == 1:
                node = big[0]
                continue
            cl.lambda_death = lvl
            for c in big:
                cl.stability += lt.size[c] * (lvl - cl.lambda_birth)
                child = ClusterNode(len(nodes), cid, lvl, np.inf, lt.size[c])
                nodes.append(child)
                cl.children.append(child.id)
                queue.append((c, child.id))
            break
    return CondensedTree(nodes, point_cluster, point_lambda, min_cluster_size)


@dataclass
class ClusterLabeling:
    labels: np.ndarray
    degenerate: bool = False

    @property
    def n_clusters(self) -> int:
        return len(set(self.labels.tolist()) - {NOISE})


def select_clusters(tree: CondensedTree) -> List[int]:
    """Excess-of-mass selection. The root is only selected when it has no children."""
    nodes = tree.nodes
    if not nodes[0].children:
        return [0]
    best = [0.0] * len(nodes)
    chosen = [False] * len(nodes)
    # children always have larger ids than their parent
    for node in reversed(nodes):
        if not node.children:
            chosen[node.id] = True
            best[node.id] = node.stability
            continue
        below = sum(best[c] for c in node.children)
        if node.id != 0 and node.stability > below:
            chosen[node.id] = True
            best[node.id] = node.stability
            for d in tree.subtree(node.id):
                if d != node.id:
                    chosen[d] = False
        else:
            best[node.id] = below
    return [c for c in range(len(nodes)) if chosen[c]]


def extract_clusters(tree: CondensedTree) -> ClusterLabeling:
    """Labels 0, 1, ... in order of each selected cluster's smallest member index;
    points in no selected cluster are NOISE."""
    members = [tree.members(cid) for cid in select_clusters(tree)]
    members.sort(key=lambda m: m[0])
    labels = np.full(tree.n_points, NOISE, dtype=np.int64)
    for label, m in enumerate(members):
        labels[m] = label
    return ClusterLabeling(labels)


def hdbscan(points, k: int = 10, min_cluster_size: int = 10) -> ClusterLabeling:
    X = _as_features(points)
    tree = condense(build_mst(X, k), min_cluster_size, n_points=len(X))
    return extract_clusters(tree)


def extract_two_clusters(points, k: int = 10, min_cluster_size: int = 10) -> ClusterLabeling:
    """Force a foreground/background bipartition.

    Uses the first split of the root into >= 2 clusters of at least
    ``min_cluster_size`` points (the two largest if more appear at once). Points
    outside those two clusters go to the side holding their nearest member in
    mutual-reachability distance. Without such a split every point gets label 0
    and the result is flagged degenerate.
    """
    X = _as_features(points)
    n = len(X)
    if n < 2 * min_cluster_size:
        raise ValueError(f"need at least {2 * min_cluster_size} points, got {n}")
    M = mutual_reachability_matrix(X, k)
    tree = condense([MstEdge(i, j, w) for i, j, w in _prim(M)], min_cluster_size, n_points=n)
    root_kids = tree.nodes[0].children
    if len(root_kids) < 2:
        return ClusterLabeling(np.zeros(n, dtype=np.int64), degenerate=True)
    sides = [tree.members(c) for c in root_kids]
    order = sorted(range(len(sides)), key=lambda s: (-len(sides[s]), sides[s][0]))
    a, b = sides[order[0]], sides[order[1]]
    if b[0] < a[0]:
        a, b = b, a
    labels = np.full(n, NOISE, dtype=np.int64)
    labels[a] = 0
    labels[b] = 1
    rest = np.flatnonzero(labels == NOISE)
    if len(rest):
        da = M[np.ix_(rest, a)].min(axis=1)
        db = M[np.ix_(rest, b)].min(axis=1)
        labels[rest] = np.where(db < da, 1, 0)
    return ClusterLabeling(labels)
