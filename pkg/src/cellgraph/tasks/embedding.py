"""Joint embedding: LSI-preprocessed concatenated modalities through the
decoupled network, trained with reconstruction + cell-type + norm losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import ParamStore, Tape, glorot_uniform
from ..convnet import ConvConfig, decoupled_forward, decoupled_propagate, \
    init_decoupled_params
from ..graph import EdgeScaling, build_bipartite
from ..linalg import SparseMatrix, lsi_embedding, truncated_svd
from .common import (EpochRecord, TrainProtocol, run_training,
                     selector_matrix, split_cells)

EMBED_LR = 1e-2


@dataclass
class JointEmbedding:
    """Final per-cell representation; the first cell_type_dims columns are
    the supervised cell-type logits."""

    embedding: np.ndarray
    cell_type_dims: int
    beta: float

    def type_probabilities(self) -> np.ndarray:
        logits = self.embedding[:, : self.cell_type_dims]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)


def register_embed_params(store: ParamStore, d: int, target_dim: int,
                          seed: int, prefix: str = ""):
    """The two-layer reconstruction perceptron f from the representation
    back to the LSI coordinates."""
    rng = np.random.default_rng(seed)
    store.register(prefix + "je.w1", glorot_uniform(rng, d, d))
    store.register(prefix + "je.b1", np.zeros((1, d)))
    store.register(prefix + "je.w2", glorot_uniform(rng, d, target_dim))
    store.register(prefix + "je.b2", np.zeros((1, target_dim)))


def joint_embedding_loss(tape: Tape, h: int, x_lsi, cell_types, n_types: int,
                         beta: float, prefix: str = ""):
    """(total, recon, celltype, regular) loss handles.

    recon is the MSE of the two-layer perceptron against the LSI input;
    celltype is softmax cross entropy of the first n_types columns over
    labeled cells (label -1 means unlabeled); regular is beta times the
    mean Euclidean norm of the remaining columns.
    """
    d = tape.value(h).shape[1]
    if not 0 < n_types < d:
        raise ValueError("need 0 < n_types < hidden dim")
    labels = np.asarray(cell_types, dtype=np.int64)
    if labels.max(initial=-1) >= n_types:
        raise ValueError("label index out of range")
    hidden = tape.relu(tape.add(tape.matmul(h, tape.param(prefix + "je.w1")),
                                tape.param(prefix + "je.b1")))
    recon = tape.mse(tape.add(tape.matmul(hidden, tape.param(prefix + "je.w2")),
                              tape.param(prefix + "je.b2")),
                     np.asarray(x_lsi, dtype=np.float64))
    eye = np.eye(d)
    logits = tape.matmul(h, tape.constant(eye[:, :n_types]))
    celltype = tape.cross_entropy_rows(logits, np.maximum(labels, 0),
                                       mask=labels >= 0, reduction="mean")
    rest = tape.matmul(h, tape.constant(eye[:, n_types:]))
    regular = tape.scalar_mix([tape.l2_penalty(rest)], np.array([beta]))
    total = tape.add(tape.add(recon, celltype), regular)
    return total, recon, celltype, regular


@dataclass
class EmbedConfig:
    conv: ConvConfig = field(default_factory=lambda: ConvConfig(
        n_layers=2, hidden_dim=48, decoupled=True,
        aggregation_norm=EdgeScaling.POST_NORM, dropout_rate=0.2))
    lsi_rank: int = 32
    beta: float = 0.01


@dataclass
class EmbedModel:
    store: ParamStore
    cfg: EmbedConfig
    states: list[np.ndarray]
    n_types: int
    validation_loss: float
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)

    def embed(self) -> JointEmbedding:
        tape = Tape(self.store, train=False)
        h = tape.value(decoupled_forward(tape, self.states, self.cfg.conv))
        return JointEmbedding(h.copy(), self.n_types, self.cfg.beta)


def train_joint_embedding(m1: SparseMatrix, m2: SparseMatrix, cell_types,
                          protocol: TrainProtocol,
                          cfg: EmbedConfig | None = None) -> EmbedModel:
    """LSI both modalities, concatenate, propagate, train the decoupled head.

    cell_types uses -1 for unlabeled cells; the supervised dimension count
    is the number of distinct labels present.
    """
    if m1.n_rows != m2.n_rows:
        raise ValueError("modalities must be row-aligned")
    cfg = cfg or EmbedConfig()
    cfg.conv.decoupled = True
    labels = np.asarray(cell_types, dtype=np.int64)
    labeled = labels[labels >= 0]
    if labeled.size == 0:
        raise ValueError("joint embedding needs at least one labeled cell")
    n_types = int(labeled.max()) + 1
    if n_types >= cfg.conv.hidden_dim:
        raise ValueError("hidden_dim must exceed the number of cell types")
    rank = min(cfg.lsi_rank, min(m1.shape) - 1, min(m2.shape) - 1)
    x = np.hstack([
        lsi_embedding(m1, rank, protocol.seed),
        lsi_embedding(m2, rank, protocol.seed + 1),
    ])
    g = build_bipartite(SparseMatrix.from_dense(x))
    g.normalization_mode = cfg.conv.aggregation_norm
    states = [x] + decoupled_propagate(g, x, cfg.conv.n_layers)

    store = ParamStore()
    init_decoupled_params(x.shape[1], cfg.conv, store, protocol.seed)
    register_embed_params(store, cfg.conv.hidden_dim, x.shape[1],
                          protocol.seed + 1)

    n = m1.n_rows
    train_idx, val_idx = split_cells(n, protocol.split_fraction, protocol.seed)
    sel_train = selector_matrix(train_idx, n)
    sel_val = selector_matrix(val_idx, n)

    def build_loss(tape: Tape, sel, rows):
        h_all = decoupled_forward(tape, states, cfg.conv)
        h_sub = tape.spmm_const(sel, h_all)
        total, _, _, _ = joint_embedding_loss(
            tape, h_sub, x[rows], labels[rows], n_types, cfg.beta
        )
        return total

    def train_epoch(tape: Tape):
        return build_loss(tape, sel_train, train_idx)

    def validate() -> float:
        tape = Tape(store, train=False)
        return float(np.asarray(tape.value(build_loss(tape, sel_val, val_idx))))

    best_val, best_epoch, history = run_training(
        store, train_epoch, validate, protocol, EMBED_LR
    )
    return EmbedModel(store, cfg, states, n_types, best_val, best_epoch,
                      history)


def pca_concat_baseline(m1: SparseMatrix, m2: SparseMatrix, rank: int,
                        seed: int) -> np.ndarray:
    """Column-centered truncated SVD per modality, concatenated."""
    parts = []
    for offset, m in enumerate((m1, m2)):
        dense = m.to_dense()
        centered = dense - dense.mean(axis=0, keepdims=True)
        r = min(rank, min(centered.shape) - 1)
        u, s = truncated_svd(SparseMatrix.from_dense(centered), r,
                             seed + offset)
        parts.append(u * s)
    return np.hstack(parts)
