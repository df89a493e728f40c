"""Modality prediction: coupled GNN with a linear head and RMSE loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import ParamStore, Tape, glorot_uniform
from ..convnet import ConvConfig, forward, init_params
from ..graph import (CellFeatureGraph, GeneSetCollection, NodeEmbeddings,
                     augment_with_pathways, build_bipartite, init_embeddings)
from ..linalg import SparseMatrix, truncated_svd
from .common import (EpochRecord, TrainProtocol, run_training,
                     selector_matrix, split_cells)

PREDICTION_LR = 1e-3


def rmse_loss(pred, target) -> float:
    """Root mean squared error over all entries."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(np.sqrt(((p - t) ** 2).mean()))


def _edges_restricted_to(g: CellFeatureGraph, cells) -> CellFeatureGraph:
    """Same node sets, but only edges incident to the given cells."""
    keep = np.isin(g.cf_cells, cells)
    return CellFeatureGraph(
        n_cells=g.n_cells, n_features=g.n_features,
        cf_cells=g.cf_cells[keep], cf_features=g.cf_features[keep],
        cf_weights=g.cf_weights[keep],
        ff_i=g.ff_i, ff_j=g.ff_j, ff_weights=g.ff_weights,
        normalization_mode=g.normalization_mode,
    )


@dataclass
class PredictionModel:
    store: ParamStore
    cfg: ConvConfig
    graph: CellFeatureGraph
    embeddings: NodeEmbeddings
    validation_rmse: float
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None

    def predict(self, graph: CellFeatureGraph | None = None) -> np.ndarray:
        """Eval-mode forward pass through the trained head."""
        g = self.graph if graph is None else graph
        tape = Tape(self.store, train=False)
        h_hat = forward(tape, g, self.embeddings, self.cfg)
        out = tape.add(tape.matmul(h_hat, tape.param("head.w")),
                       tape.param("head.b"))
        return tape.value(out).copy()


def train_prediction(g: CellFeatureGraph, target, cfg: ConvConfig,
                     protocol: TrainProtocol, transductive: bool = True,
                     gene_sets: GeneSetCollection | None = None,
                     source: SparseMatrix | None = None) -> PredictionModel:
    """Train the prediction head; returns the best-validation model.

    Cells are split per the protocol; the loss is full-batch RMSE on the
    training rows. Transductive mode (default) keeps every cell's source
    features in the graph; otherwise validation cells' edges are removed
    during training and only rejoin for inference.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape[0] != g.n_cells:
        raise ValueError("target rows must match the cell count")
    if gene_sets is not None:
        if source is None:
            source = g.to_modality_matrix()
        g = augment_with_pathways(g, gene_sets, source)
    store = ParamStore()
    x = init_embeddings(g, "auto", table_dim=cfg.hidden_dim, store=store,
                        seed=protocol.seed)
    init_params(g, x, cfg, store, seed=protocol.seed)
    rng = np.random.default_rng(protocol.seed + 1)
    store.register("head.w", glorot_uniform(rng, cfg.hidden_dim,
                                            target.shape[1]))
    store.register("head.b", np.zeros((1, target.shape[1])))

    train_idx, val_idx = split_cells(g.n_cells, protocol.split_fraction,
                                     protocol.seed)
    g_train = g if transductive else _edges_restricted_to(g, train_idx)
    sel_train = selector_matrix(train_idx, g.n_cells)
    target_train = target[train_idx]

    def train_epoch(tape: Tape):
        h_hat = forward(tape, g_train, x, cfg)
        pred = tape.add(tape.matmul(h_hat, tape.param("head.w")),
                        tape.param("head.b"))
        return tape.rmse(tape.spmm_const(sel_train, pred), target_train)

    def validate() -> float:
        tape = Tape(store, train=False)
        h_hat = forward(tape, g, x, cfg)
        pred = tape.value(tape.add(tape.matmul(h_hat, tape.param("head.w")),
                                   tape.param("head.b")))
        return rmse_loss(pred[val_idx], target[val_idx])

    best_val, best_epoch, history = run_training(
        store, train_epoch, validate, protocol, PREDICTION_LR
    )
    return PredictionModel(store, cfg, g, x, best_val, best_epoch, history,
                           train_idx, val_idx)


def predict_from_matrix(m: SparseMatrix, target, cfg: ConvConfig,
                        protocol: TrainProtocol, **kwargs) -> PredictionModel:
    """Convenience wrapper: build the bipartite graph, then train."""
    return train_prediction(build_bipartite(m), target, cfg, protocol,
                            source=m, **kwargs)


def svd_linear_baseline(m_source: SparseMatrix, target, train_idx, val_idx,
                        rank: int, seed: int) -> float:
    """Truncated-SVD coordinates plus least squares; validation RMSE."""
    target = np.asarray(target, dtype=np.float64)
    rank = min(rank, min(m_source.shape) - 1)
    u, s = truncated_svd(m_source, rank, seed)
    coords = u * s
    design = np.hstack([coords, np.ones((coords.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(design[train_idx], target[train_idx],
                               rcond=None)
    return rmse_loss(design[val_idx] @ coef, target[val_idx])


def mean_predictor_rmse(target, train_idx, val_idx) -> float:
    """RMSE of predicting each target column's training mean."""
    target = np.asarray(target, dtype=np.float64)
    mean = target[train_idx].mean(axis=0, keepdims=True)
    return rmse_loss(np.repeat(mean, len(val_idx), axis=0), target[val_idx])
