"""Cell-feature bipartite graph construction and initial node embeddings.

Cells and measured features are the two node sets; an edge carries the
measured value. Pathway (gene-set) augmentation adds feature-feature edges
weighted by column cosine similarity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .linalg import (
    SparseMatrix,
    cosine_similarity_columns,
    min_max_scale,
    symmetric_edge_normalize,
)


class EdgeScaling(Enum):
    """How edge weights enter the aggregation.

    SYMMETRIC: divide by sqrt(deg_u)*sqrt(deg_v) over the whole graph.
    MIN_MAX: map all weights onto [0, 1], no degree normalization.
    POST_NORM: raw weights; aggregation results are normalized instead
        (group norm in the coupled network, row standardization in the
        decoupled propagation).
    """

    SYMMETRIC = "symmetric"
    MIN_MAX = "min_max"
    POST_NORM = "post_norm"


@dataclass
class CellFeatureGraph:
    """Bipartite cell-feature graph, optionally with feature-feature edges.

    cell_feature_* arrays hold one entry per edge (cell index, feature
    index, weight). feature_feature_* hold each undirected feature pair once
    with i < j. Instances are immutable in practice; mutating helpers return
    new graphs.
    """

    n_cells: int
    n_features: int
    cf_cells: np.ndarray
    cf_features: np.ndarray
    cf_weights: np.ndarray
    ff_i: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ff_j: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ff_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    normalization_mode: EdgeScaling = EdgeScaling.SYMMETRIC
    _operator_cache: dict = field(default_factory=dict, repr=False,
                                  compare=False)

    def __post_init__(self):
        self.cf_cells = np.asarray(self.cf_cells, dtype=np.int64)
        self.cf_features = np.asarray(self.cf_features, dtype=np.int64)
        self.cf_weights = np.asarray(self.cf_weights, dtype=np.float64)
        if len(self.cf_cells) and (
            self.cf_cells.max() >= self.n_cells
            or self.cf_features.max() >= self.n_features
        ):
            raise ValueError("edge endpoint out of range")

    @property
    def n_edges(self) -> int:
        return len(self.cf_weights)

    @property
    def has_pathways(self) -> bool:
        return len(self.ff_weights) > 0

    def scaled_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """(cell-feature, feature-feature) weights under normalization_mode.

        SYMMETRIC normalizes over the whole adjacency (both blocks share the
        degree sums, matching the block matrix view); MIN_MAX scales both
        blocks jointly onto [0, 1]; POST_NORM returns the raw weights.
        """
        mode = self.normalization_mode
        if mode is EdgeScaling.POST_NORM:
            return self.cf_weights.copy(), self.ff_weights.copy()
        if mode is EdgeScaling.MIN_MAX:
            both = np.concatenate([self.cf_weights, self.ff_weights])
            scaled = min_max_scale(both)
            return scaled[: self.n_edges], scaled[self.n_edges:]
        # SYMMETRIC: features live at ids [n_cells, n_cells + n_features)
        a = np.concatenate([self.cf_cells, self.n_cells + self.ff_i])
        b = np.concatenate(
            [self.n_cells + self.cf_features, self.n_cells + self.ff_j]
        )
        w = np.concatenate([self.cf_weights, self.ff_weights])
        norm = symmetric_edge_normalize(a, b, w, self.n_cells + self.n_features)
        return norm[: self.n_edges], norm[self.n_edges:]

    def operators(self):
        """Sparse operators for message passing under the scaling mode.

        Returns (cells_from_features, features_from_cells, features_from_features)
        where the first is N x k, the second k x N, the third k x k (None
        without pathway edges). The feature-feature operator is symmetric.
        Cached per scaling mode; training reuses them every step.
        """
        if self.normalization_mode in self._operator_cache:
            return self._operator_cache[self.normalization_mode]
        cf_w, ff_w = self.scaled_weights()
        cells_from_features = SparseMatrix.from_coo(
            self.n_cells, self.n_features, self.cf_cells, self.cf_features, cf_w,
            sum_duplicates=False,
        )
        features_from_cells = cells_from_features.transpose()
        features_from_features = None
        if self.has_pathways:
            features_from_features = SparseMatrix.from_coo(
                self.n_features,
                self.n_features,
                np.concatenate([self.ff_i, self.ff_j]),
                np.concatenate([self.ff_j, self.ff_i]),
                np.concatenate([ff_w, ff_w]),
                sum_duplicates=False,
            )
        triple = (cells_from_features, features_from_cells,
                  features_from_features)
        self._operator_cache[self.normalization_mode] = triple
        return triple

    def to_modality_matrix(self) -> SparseMatrix:
        """Reassemble the cell x feature matrix from the raw edges."""
        return SparseMatrix.from_coo(
            self.n_cells, self.n_features, self.cf_cells, self.cf_features,
            self.cf_weights, sum_duplicates=False,
        )


@dataclass
class GeneSetCollection:
    """Named groups of (possibly overlapping) feature indices."""

    sets: list[tuple[str, list[int]]]

    def validate(self, n_features: int):
        for name, members in self.sets:
            for m in members:
                if not 0 <= m < n_features:
                    raise ValueError(
                        f"gene set {name!r}: member index {m} out of range "
                        f"(n_features={n_features})"
                    )


@dataclass
class NodeEmbeddings:
    """Initial cell and feature node embeddings.

    feature_param names a trainable table in a ParamStore when the learned
    initialization is active; feature_embed then mirrors its initial value.
    """

    cell_embed: np.ndarray
    feature_embed: np.ndarray
    feature_param: str | None = None


def build_bipartite(m: SparseMatrix) -> CellFeatureGraph:
    """One weighted edge per nonzero entry of the modality matrix."""
    if m.nnz == 0:
        warnings.warn("modality matrix has no nonzero entries; graph is edgeless")
    return CellFeatureGraph(
        n_cells=m.n_rows,
        n_features=m.n_cols,
        cf_cells=m.row_indices(),
        cf_features=m.col_indices.copy(),
        cf_weights=m.values.copy(),
    )


def augment_with_pathways(
    g: CellFeatureGraph, sets: GeneSetCollection, m: SparseMatrix
) -> CellFeatureGraph:
    """Add feature-feature edges for every within-set pair.

    Weight is the cosine similarity of the two feature columns in m; pairs
    with non-positive cosine are dropped, pairs shared by several sets keep
    one edge. Cell-feature edges are untouched.
    """
    sets.validate(g.n_features)
    pairs = set()
    for _, members in sets.sets:
        uniq = sorted(set(members))
        for a in range(len(uniq)):
            for b in range(a + 1, len(uniq)):
                pairs.add((uniq[a], uniq[b]))
    ii, jj, ww = [], [], []
    for i, j in sorted(pairs):
        w = cosine_similarity_columns(m, i, j)
        if w > 0:
            ii.append(i)
            jj.append(j)
            ww.append(w)
    return CellFeatureGraph(
        n_cells=g.n_cells,
        n_features=g.n_features,
        cf_cells=g.cf_cells,
        cf_features=g.cf_features,
        cf_weights=g.cf_weights,
        ff_i=np.asarray(ii, dtype=np.int64),
        ff_j=np.asarray(jj, dtype=np.int64),
        ff_weights=np.asarray(ww, dtype=np.float64),
        normalization_mode=g.normalization_mode,
    )


def init_embeddings(
    g: CellFeatureGraph,
    feature_init: str = "auto",
    table_dim: int | None = None,
    store=None,
    seed: int = 0,
    param_name: str = "feature_table",
) -> NodeEmbeddings:
    """Initial embeddings: one-hot features (or a learned table), zero cells.

    feature_init is "one_hot", "learned", or "auto" (learned when the
    feature count exceeds 2000, one-hot otherwise). A learned table is
    seeded uniform in [-1/sqrt(d), 1/sqrt(d)] and registered in `store`
    when one is given.
    """
    k = g.n_features
    if feature_init == "auto":
        feature_init = "learned" if k > 2000 else "one_hot"
    cell_embed = np.zeros((g.n_cells, 1))
    if feature_init == "one_hot":
        return NodeEmbeddings(cell_embed, np.eye(k))
    if feature_init != "learned":
        raise ValueError(f"unknown feature_init {feature_init!r}")
    d = table_dim
    if not d or d < 1:
        raise ValueError("learned feature table needs a positive dimension")
    bound = 1.0 / np.sqrt(d)
    table = np.random.default_rng(seed).uniform(-bound, bound, size=(k, d))
    name = None
    if store is not None:
        store.register(param_name, table)
        name = param_name
    return NodeEmbeddings(cell_embed, table, feature_param=name)
