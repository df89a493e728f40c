"""Evaluation metrics for the joint-embedding task plus shared graph tools.

Everything is exact (full pairwise distances, exact kNN, exhaustive
connected components); no subsampling or approximate neighbors. All
functions are pure.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass

import numpy as np


# ---------------------------------------------------------------------------
# kNN graph


@dataclass
class KnnGraph:
    """Exact k-nearest-neighbor lists, sorted by (distance, index)."""

    n_nodes: int
    k: int
    neighbors: list[np.ndarray]
    distances: list[np.ndarray]

    def undirected_edges(self):
        """Each kNN edge once as (i, j, distance), symmetrized by union."""
        seen = {}
        for i in range(self.n_nodes):
            for j, d in zip(self.neighbors[i], self.distances[i]):
                key = (min(i, int(j)), max(i, int(j)))
                if key not in seen:
                    seen[key] = float(d)
        return [(i, j, d) for (i, j), d in sorted(seen.items())]


def knn_graph(points: np.ndarray, k: int) -> KnnGraph:
    """Brute-force exact neighbors; ties broken toward the lower index."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    k_eff = min(k, n - 1)
    sq = (pts * pts).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * pts @ pts.T, 0.0)
    dist = np.sqrt(d2)
    neighbors, distances = [], []
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, dist[i]))
        order = order[order != i][:k_eff]
        neighbors.append(order.astype(np.int64))
        distances.append(dist[i, order])
    return KnnGraph(n, k_eff, neighbors, distances)


def pseudotime_from_root(g: KnnGraph, root: int) -> np.ndarray:
    """Dijkstra distances over the symmetrized weighted kNN graph.

    Unreachable nodes get the maximum finite distance plus one.
    """
    adj: list[list[tuple[int, float]]] = [[] for _ in range(g.n_nodes)]
    for i, j, d in g.undirected_edges():
        adj[i].append((j, d))
        adj[j].append((i, d))
    dist = np.full(g.n_nodes, np.inf)
    dist[root] = 0.0
    heap = [(0.0, root)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        for nxt, w in adj[node]:
            nd = d + w
            if nd < dist[nxt]:
                dist[nxt] = nd
                heapq.heappush(heap, (nd, nxt))
    finite = dist[np.isfinite(dist)]
    dist[~np.isfinite(dist)] = finite.max() + 1.0
    return dist


def _connected_components(n: int, edges) -> np.ndarray:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    return np.array([find(i) for i in range(n)])


def graph_connectivity(embedding, cell_types, knn_k: int = 15) -> float:
    """Mean, over types, of the largest-component fraction of the type's
    induced kNN subgraph."""
    types = np.asarray(cell_types)
    g = knn_graph(np.asarray(embedding, dtype=np.float64), knn_k)
    scores = []
    for t in np.unique(types):
        members = np.flatnonzero(types == t)
        local = {int(m): pos for pos, m in enumerate(members)}
        edges = [
            (local[i], local[j])
            for i, j, _ in g.undirected_edges()
            if i in local and j in local
        ]
        comp = _connected_components(len(members), edges)
        _, counts = np.unique(comp, return_counts=True)
        scores.append(counts.max() / len(members))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Louvain community detection


def modularity(n: int, edges, labels, resolution: float) -> float:
    """Resolution-scaled Newman modularity of a labeled undirected graph."""
    labels = np.asarray(labels)
    degree = np.zeros(n)
    internal: dict[int, float] = {}
    total = 0.0
    for i, j, w in edges:
        if i == j:
            degree[i] += 2 * w
            total += 2 * w
            if labels[i] == labels[j]:
                internal[labels[i]] = internal.get(labels[i], 0.0) + 2 * w
            continue
        degree[i] += w
        degree[j] += w
        total += 2 * w
        if labels[i] == labels[j]:
            internal[labels[i]] = internal.get(labels[i], 0.0) + 2 * w
    if total == 0:
        return 0.0
    tot_per = {}
    for node, lab in enumerate(labels):
        tot_per[lab] = tot_per.get(lab, 0.0) + degree[node]
    return float(sum(
        internal.get(lab, 0.0) / total
        - resolution * (tot_per[lab] / total) ** 2
        for lab in tot_per
    ))


def _louvain_level(n, adj, self_w, resolution, order):
    """One Louvain level: local moves until none improves. Returns labels."""
    degree = np.array([sum(w for _, w in adj[i]) + 2 * self_w[i]
                       for i in range(n)])
    two_m = degree.sum()
    if two_m == 0:
        return np.arange(n)
    community = np.arange(n)
    tot = degree.astype(np.float64).copy()
    moved = True
    while moved:
        moved = False
        for node in order:
            com = community[node]
            weights_to: dict[int, float] = {}
            for nbr, w in adj[node]:
                weights_to[community[nbr]] = (
                    weights_to.get(community[nbr], 0.0) + w
                )
            tot[com] -= degree[node]
            base = weights_to.get(com, 0.0) - resolution * degree[node] * (
                tot[com] / two_m
            )
            best_com, best_gain = com, base
            for cand in sorted(weights_to):
                if cand == com:
                    continue
                gain = weights_to[cand] - resolution * degree[node] * (
                    tot[cand] / two_m
                )
                if gain > best_gain + 1e-12:
                    best_com, best_gain = cand, gain
            tot[best_com] += degree[node]
            if best_com != com:
                community[node] = best_com
                moved = True
    return community


def louvain_edges(n: int, edges, resolution: float, seed: int) -> np.ndarray:
    """Louvain over an explicit undirected weighted edge list.

    Node visit order is shuffled once per level by the seeded generator,
    then fixed, so results are reproducible.
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    rng = np.random.default_rng(seed)
    labels = np.arange(n)
    cur_n = n
    cur_edges = [(int(i), int(j), float(w)) for i, j, w in edges]
    while True:
        adj: list[list[tuple[int, float]]] = [[] for _ in range(cur_n)]
        self_w = np.zeros(cur_n)
        for i, j, w in cur_edges:
            if i == j:
                self_w[i] += w
            else:
                adj[i].append((j, w))
                adj[j].append((i, w))
        order = rng.permutation(cur_n)
        community = _louvain_level(cur_n, adj, self_w, resolution, order)
        packed = {c: idx for idx, c in enumerate(np.unique(community))}
        community = np.array([packed[c] for c in community])
        if len(packed) == cur_n:
            break
        labels = community[labels]
        merged: dict[tuple[int, int], float] = {}
        for i, j, w in cur_edges:
            a, b = community[i], community[j]
            key = (min(a, b), max(a, b))
            merged[key] = merged.get(key, 0.0) + w
        cur_edges = [(a, b, w) for (a, b), w in sorted(merged.items())]
        cur_n = len(packed)
    packed = {c: idx for idx, c in enumerate(np.unique(labels))}
    return np.array([packed[c] for c in labels])


def louvain(g: KnnGraph, resolution: float, seed: int) -> np.ndarray:
    """Louvain on the kNN graph with unit weights (edges symmetrized)."""
    edges = [(i, j, 1.0) for i, j, _ in g.undirected_edges()]
    return louvain_edges(g.n_nodes, edges, resolution, seed)


# ---------------------------------------------------------------------------
# partition agreement


def nmi(labels_a, labels_b) -> float:
    """Mutual information normalized by the mean of the two entropies."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label arrays must have equal length")
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    pij = table / n
    pa = pij.sum(axis=1)
    pb = pij.sum(axis=0)
    ha = -np.sum(pa[pa > 0] * np.log(pa[pa > 0]))
    hb = -np.sum(pb[pb > 0] * np.log(pb[pb > 0]))
    if ha == 0.0 and hb == 0.0:
        return 1.0  # both single-cluster: identical up to relabeling
    if ha == 0.0 or hb == 0.0:
        return 0.0
    mask = pij > 0
    mi = np.sum(pij[mask] * np.log(pij[mask] / np.outer(pa, pb)[mask]))
    return float(min(1.0, max(0.0, mi / ((ha + hb) / 2.0))))


def nmi_cluster_label(embedding, labels, knn_k: int = 15, seed: int = 0) -> float:
    """Best NMI against `labels` over a Louvain resolution sweep 0.1..2.0."""
    g = knn_graph(np.asarray(embedding, dtype=np.float64), knn_k)
    best = 0.0
    for step in range(1, 21):
        clusters = louvain(g, resolution=step / 10.0, seed=seed)
        best = max(best, nmi(clusters, labels))
    return best


# ---------------------------------------------------------------------------
# silhouettes


def _silhouette_samples(dist: np.ndarray, labels: np.ndarray) -> np.ndarray:
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least 2 distinct labels")
    s = np.zeros(len(labels))
    for i in range(len(labels)):
        own = labels == labels[i]
        n_own = own.sum()
        if n_own <= 1:
            s[i] = 0.0  # singleton cluster convention
            continue
        a = dist[i, own].sum() / (n_own - 1)
        b = min(dist[i, labels == other].mean()
                for other in uniq if other != labels[i])
        denom = max(a, b)
        s[i] = 0.0 if denom == 0 else (b - a) / denom
    return s


def _pairwise(points: np.ndarray) -> np.ndarray:
    sq = (points * points).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * points @ points.T, 0.0)
    return np.sqrt(d2)


def silhouette_asw(points, labels) -> float:
    """Mean silhouette width in [-1, 1]."""
    pts = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    return float(_silhouette_samples(_pairwise(pts), labels).mean())


def cell_type_asw(embedding, cell_types) -> float:
    """Silhouette on cell types, rescaled onto [0, 1]."""
    return (silhouette_asw(embedding, cell_types) + 1.0) / 2.0


def batch_asw(embedding, batch_labels, cell_types) -> float:
    """Batch-mixing score: mean over cell types of mean(1 - |s|).

    Silhouettes are computed on batch labels within each cell type; types
    containing a single batch are skipped.
    """
    pts = np.asarray(embedding, dtype=np.float64)
    batches = np.asarray(batch_labels)
    types = np.asarray(cell_types)
    scores = []
    for t in np.unique(types):
        members = types == t
        if len(np.unique(batches[members])) < 2:
            continue
        d = _pairwise(pts[members])
        s = _silhouette_samples(d, batches[members])
        scores.append(float((1.0 - np.abs(s)).mean()))
    if not scores:
        raise ValueError("no cell type contains two or more batches")
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# conservation metrics


def variance_explained(scores, coords) -> float:
    """R^2 of an ordinary least-squares fit of scores onto the coordinates."""
    y = np.asarray(scores, dtype=np.float64)
    x = np.asarray(coords, dtype=np.float64)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 0.0
    design = np.hstack([x, np.ones((len(y), 1))])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(max(0.0, 1.0 - (resid * resid).sum() / ss_tot))


def cell_cycle_conservation(program_scores, embedding, batch_labels,
                            var_before: dict) -> float:
    """Per-batch 1 - |Var_after - Var_before| / Var_before, averaged.

    Var_after is the R^2 of regressing the per-cell program score onto the
    embedding coordinates within the batch. var_before maps batch label to
    the caller-computed pre-integration value; batches with Var_before <= 0
    are skipped with a warning.
    """
    scores = np.asarray(program_scores, dtype=np.float64)
    emb = np.asarray(embedding, dtype=np.float64)
    batches = np.asarray(batch_labels)
    per_batch = []
    for b in np.unique(batches):
        vb = float(var_before[b])
        if vb <= 0:
            warnings.warn(f"batch {b!r} has Var_before <= 0; skipped")
            continue
        members = batches == b
        va = variance_explained(scores[members], emb[members])
        per_batch.append(min(1.0, max(0.0, 1.0 - abs(va - vb) / vb)))
    if not per_batch:
        raise ValueError("no batch with positive Var_before")
    return float(np.mean(per_batch))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Rank correlation with average-rank tie handling."""
    ra = _average_ranks(np.asarray(a, dtype=np.float64))
    rb = _average_ranks(np.asarray(b, dtype=np.float64))
    sa, sb = ra.std(), rb.std()
    if sa == 0 or sb == 0:
        raise ValueError("constant input: rank correlation undefined")
    return float(((ra - ra.mean()) * (rb - rb.mean())).mean() / (sa * sb))


def trajectory_conservation(pseudotime_before, pseudotime_after) -> float:
    """(Spearman + 1) / 2; constant inputs give 0.5 with a warning."""
    before = np.asarray(pseudotime_before, dtype=np.float64)
    after = np.asarray(pseudotime_after, dtype=np.float64)
    if before.shape != after.shape or len(before) < 2:
        raise ValueError("pseudotime arrays must have equal length >= 2")
    try:
        s = spearman(before, after)
    except ValueError:
        warnings.warn("constant pseudotime: correlation undefined, scoring 0.5")
        return 0.5
    return (s + 1.0) / 2.0


# ---------------------------------------------------------------------------
# aggregation and report IO


@dataclass
class MetricReport:
    nmi: float
    cell_type_asw: float
    cc_conservation: float
    trajectory_conservation: float
    batch_asw: float
    graph_connectivity: float
    s_bio: float
    s_batch: float
    overall: float

    FIELDS = ("nmi", "cell_type_asw", "cc_conservation",
              "trajectory_conservation", "batch_asw", "graph_connectivity",
              "s_bio", "s_batch", "overall")


def aggregate(nmi_score, cell_type_asw_score, cc_score, trajectory_score,
              batch_asw_score, connectivity_score) -> MetricReport:
    """Equal weights within each class, then 0.6 bio + 0.4 batch."""
    s_bio = float(np.mean([nmi_score, cell_type_asw_score, cc_score,
                           trajectory_score]))
    s_batch = float(np.mean([batch_asw_score, connectivity_score]))
    return MetricReport(
        nmi=nmi_score,
        cell_type_asw=cell_type_asw_score,
        cc_conservation=cc_score,
        trajectory_conservation=trajectory_score,
        batch_asw=batch_asw_score,
        graph_connectivity=connectivity_score,
        s_bio=s_bio,
        s_batch=s_batch,
        overall=0.6 * s_bio + 0.4 * s_batch,
    )


def write_report(report: MetricReport, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name in MetricReport.FIELDS:
            fh.write(f"{name} = {getattr(report, name):.6f}\n")


def read_report(path) -> dict[str, float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                key, _, value = line.partition("=")
                out[key.strip()] = float(value)
    return out
