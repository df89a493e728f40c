"""Modality matching: bidirectional softmax loss, auxiliary losses, and
batch-partitioned assignment inference."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assignment import AssignmentProblem, percentile_filter, solve
from ..autodiff import ParamStore, Tape, glorot_uniform
from ..convnet import ConvConfig, decoupled_forward, decoupled_propagate, \
    init_decoupled_params
from ..graph import EdgeScaling, build_bipartite
from ..linalg import SparseMatrix, l2_normalize_rows, truncated_svd
from .common import (EpochRecord, TrainProtocol, run_training,
                     selector_matrix, split_cells)

MATCHING_LR = 1e-2


def _check_bijection(truth, n: int) -> np.ndarray:
    t = np.asarray(truth, dtype=np.int64)
    if t.shape != (n,) or not np.array_equal(np.sort(t), np.arange(n)):
        raise ValueError("truth pairing must be a bijection on the rows")
    return t


def _invert(t: np.ndarray) -> np.ndarray:
    inv = np.empty_like(t)
    inv[t] = np.arange(len(t))
    return inv


def register_aux_params(store: ParamStore, d: int, f1: int, f2: int,
                        seed: int, prefix: str = ""):
    """Two one-hidden-layer reconstruction networks, one per modality."""
    rng = np.random.default_rng(seed)
    for name, width in (("aux1", f1), ("aux2", f2)):
        store.register(f"{prefix}{name}.w1", glorot_uniform(rng, d, d))
        store.register(f"{prefix}{name}.b1", np.zeros((1, d)))
        store.register(f"{prefix}{name}.w2", glorot_uniform(rng, d, width))
        store.register(f"{prefix}{name}.b2", np.zeros((1, width)))


def _aux_net(tape: Tape, h: int, name: str, prefix: str = "") -> int:
    p = f"{prefix}{name}"
    hidden = tape.relu(tape.add(tape.matmul(h, tape.param(p + ".w1")),
                                tape.param(p + ".b1")))
    return tape.add(tape.matmul(hidden, tape.param(p + ".w2")),
                    tape.param(p + ".b2"))


def matching_losses(tape: Tape, h1: int, h2: int, truth,
                    aux_targets=None, aux_weight: float = 1.0,
                    prefix: str = ""):
    """(total, match, aux) loss handles.

    The match part is the summed row- and column-softmax cross entropy of
    the cosine score matrix over the true pairs. The aux part adds the four
    prediction/reconstruction mean-squared errors through the two
    one-hidden-layer networks; pass aux_targets=(x1, x2) in each modality's
    own row order, or None to disable.
    """
    n = tape.value(h1).shape[0]
    if tape.value(h2).shape[0] != n:
        raise ValueError("h1 and h2 must pair the same number of cells")
    t = _check_bijection(truth, n)
    inv = _invert(t)
    h1n = tape.l2_normalize_rows(h1)
    h2n = tape.l2_normalize_rows(h2)
    score = tape.matmul(h1n, h2n, transpose_b=True)
    score_t = tape.matmul(h2n, h1n, transpose_b=True)
    match = tape.add(
        tape.cross_entropy_rows(score, t, reduction="sum"),
        tape.cross_entropy_rows(score_t, inv, reduction="sum"),
    )
    if aux_targets is None:
        return match, match, tape.constant(np.asarray(0.0))
    x1 = np.asarray(aux_targets[0], dtype=np.float64)
    x2 = np.asarray(aux_targets[1], dtype=np.float64)
    aux = tape.add(
        tape.add(tape.mse(_aux_net(tape, h1, "aux2", prefix), x2[t]),
                 tape.mse(_aux_net(tape, h2, "aux1", prefix), x1[inv])),
        tape.add(tape.mse(_aux_net(tape, h1, "aux1", prefix), x1),
                 tape.mse(_aux_net(tape, h2, "aux2", prefix), x2)),
    )
    total = tape.add(match, tape.scalar_mix([aux], np.array([aux_weight])))
    return total, match, aux


def score_probabilities(score: np.ndarray):
    """(row softmax, column softmax) of a dense score matrix."""
    s = np.asarray(score, dtype=np.float64)
    se = np.exp(s - s.max(axis=1, keepdims=True))
    row = se / se.sum(axis=1, keepdims=True)
    ce = np.exp(s - s.max(axis=0, keepdims=True))
    col = ce / ce.sum(axis=0, keepdims=True)
    return row, col


def competition_match_score(prob: np.ndarray, truth) -> float:
    """Probability mass placed on the true correspondences."""
    prob = np.asarray(prob, dtype=np.float64)
    t = np.asarray(truth, dtype=np.int64)
    return float(prob[np.arange(len(t)), t].sum())


@dataclass
class MatchOutput:
    """Scores, probability views and the assignment for one inference run.

    Probabilities are blockwise within shared batches: rows/columns whose
    batch is missing on the other side are all zero and listed in
    unmatched_left/unmatched_right.
    """

    score: np.ndarray
    row_prob: np.ndarray
    col_prob: np.ndarray
    assignment: list[tuple[int, int]]
    unmatched_left: list[int] = field(default_factory=list)
    unmatched_right: list[int] = field(default_factory=list)

    def assignment_matrix(self) -> np.ndarray:
        out = np.zeros_like(self.row_prob)
        for i, j in self.assignment:
            out[i, j] = 1.0
        return out


def match_inference(h1, h2, batch_labels_1, batch_labels_2,
                    percentile: float = 95.0) -> MatchOutput:
    """Batch-partitioned scoring, percentile filtering and assignment.

    Scores and softmax probabilities are computed within each shared batch;
    the assignment solves a maximum-weight rectangular matching over the
    percentile-filtered scores of that batch.
    """
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    b1 = np.asarray(batch_labels_1)
    b2 = np.asarray(batch_labels_2)
    if len(b1) != h1.shape[0] or len(b2) != h2.shape[0]:
        raise ValueError("batch labels must align with embedding rows")
    n1, n2 = h1.shape[0], h2.shape[0]
    score = np.zeros((n1, n2))
    row_prob = np.zeros((n1, n2))
    col_prob = np.zeros((n1, n2))
    pairs: list[tuple[int, int]] = []
    shared = sorted(set(b1.tolist()) & set(b2.tolist()))
    for batch in shared:
        idx1 = np.flatnonzero(b1 == batch)
        idx2 = np.flatnonzero(b2 == batch)
        block = l2_normalize_rows(h1[idx1]) @ l2_normalize_rows(h2[idx2]).T
        score[np.ix_(idx1, idx2)] = block
        rp, cp = score_probabilities(block)
        row_prob[np.ix_(idx1, idx2)] = rp
        col_prob[np.ix_(idx1, idx2)] = cp
        keep = percentile_filter(block, percentile)
        result = solve(AssignmentProblem(block, keep))
        pairs.extend((int(idx1[i]), int(idx2[j])) for i, j in result.pairs)
    matched_left = {i for i, _ in pairs}
    matched_right = {j for _, j in pairs}
    unmatched_left = [i for i in range(n1) if i not in matched_left]
    unmatched_right = [j for j in range(n2) if j not in matched_right]
    return MatchOutput(score, row_prob, col_prob, sorted(pairs),
                       unmatched_left, unmatched_right)


def match_scores(output: MatchOutput, truth) -> dict[str, float]:
    """Symmetric softmax score, one-hot assignment score, top-1 accuracy."""
    t = np.asarray(truth, dtype=np.int64)
    softmax_score = 0.5 * (
        competition_match_score(output.row_prob, t)
        + competition_match_score(output.col_prob, t)
    )
    correct = sum(1 for i, j in output.assignment if t[i] == j)
    return {
        "score_softmax": float(softmax_score),
        "score_assignment": float(correct),
        "top1_accuracy": correct / len(t),
    }


# ---------------------------------------------------------------------------
# training pipeline


@dataclass
class MatcherConfig:
    conv: ConvConfig = field(default_factory=lambda: ConvConfig(
        n_layers=3, hidden_dim=64, decoupled=True,
        aggregation_norm=EdgeScaling.POST_NORM, dropout_rate=0.5))
    reduce_rank: int = 32
    aux_weight: float = 1.0
    use_aux: bool = True
    percentile: float = 95.0


@dataclass
class MatcherModel:
    store: ParamStore
    cfg: MatcherConfig
    states1: list[np.ndarray]
    states2: list[np.ndarray]
    validation_loss: float
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)

    def embeddings(self):
        """Eval-mode cell representations for both modalities."""
        tape = Tape(self.store, train=False)
        h1 = tape.value(decoupled_forward(tape, self.states1, self.cfg.conv,
                                          prefix="m1."))
        h2 = tape.value(decoupled_forward(tape, self.states2, self.cfg.conv,
                                          prefix="m2."))
        return h1.copy(), h2.copy()

    def infer(self, batch_labels_1, batch_labels_2,
              percentile: float | None = None) -> MatchOutput:
        h1, h2 = self.embeddings()
        pct = self.cfg.percentile if percentile is None else percentile
        return match_inference(h1, h2, batch_labels_1, batch_labels_2, pct)


def reduce_modality(m: SparseMatrix, rank: int, seed: int) -> np.ndarray:
    """SVD coordinates (U * s) used both as graph weights and node input."""
    rank = min(rank, min(m.shape))
    u, s = truncated_svd(m, rank, seed)
    return u * s


def train_matcher(m1: SparseMatrix, m2: SparseMatrix, correspondence,
                  protocol: TrainProtocol,
                  cfg: MatcherConfig | None = None) -> MatcherModel:
    """Train the two decoupled towers against the known train pairing.

    correspondence[i] is the modality-2 row of the cell in modality-1 row i.
    Propagation runs once over all cells (it is parameter-free); the loss is
    evaluated on the train split and early stopping watches the same loss on
    the validation split.
    """
    cfg = cfg or MatcherConfig()
    cfg.conv.decoupled = True
    n = m1.n_rows
    t_all = _check_bijection(correspondence, n)
    x1 = reduce_modality(m1, cfg.reduce_rank, protocol.seed)
    x2 = reduce_modality(m2, cfg.reduce_rank, protocol.seed + 1)
    g1 = build_bipartite(SparseMatrix.from_dense(x1))
    g2 = build_bipartite(SparseMatrix.from_dense(x2))
    g1.normalization_mode = cfg.conv.aggregation_norm
    g2.normalization_mode = cfg.conv.aggregation_norm
    states1 = [x1] + decoupled_propagate(g1, x1, cfg.conv.n_layers)
    states2 = [x2] + decoupled_propagate(g2, x2, cfg.conv.n_layers)

    store = ParamStore()
    init_decoupled_params(x1.shape[1], cfg.conv, store, protocol.seed,
                          prefix="m1.")
    init_decoupled_params(x2.shape[1], cfg.conv, store, protocol.seed + 1,
                          prefix="m2.")
    if cfg.use_aux:
        register_aux_params(store, cfg.conv.hidden_dim, x1.shape[1],
                            x2.shape[1], protocol.seed + 2)

    train_idx, val_idx = split_cells(n, protocol.split_fraction, protocol.seed)
    sel = {
        "train1": selector_matrix(train_idx, n),
        "train2": selector_matrix(t_all[train_idx], n),
        "val1": selector_matrix(val_idx, n),
        "val2": selector_matrix(t_all[val_idx], n),
    }
    aux_train = (x1[train_idx], x2[t_all[train_idx]]) if cfg.use_aux else None
    aux_val = (x1[val_idx], x2[t_all[val_idx]]) if cfg.use_aux else None
    identity_train = np.arange(len(train_idx))
    identity_val = np.arange(len(val_idx))

    def build_loss(tape: Tape, which: str, truth, aux):
        h1_all = decoupled_forward(tape, states1, cfg.conv, prefix="m1.")
        h2_all = decoupled_forward(tape, states2, cfg.conv, prefix="m2.")
        h1_sub = tape.spmm_const(sel[which + "1"], h1_all)
        h2_sub = tape.spmm_const(sel[which + "2"], h2_all)
        return matching_losses(tape, h1_sub, h2_sub, truth, aux_targets=aux,
                               aux_weight=cfg.aux_weight)

    def train_epoch(tape: Tape):
        total, _, _ = build_loss(tape, "train", identity_train, aux_train)
        return total

    def validate() -> float:
        # early stopping watches the negated validation competition score:
        # the held-out cross-entropy plateaus long before the probability
        # mass on true pairs (the task metric) stops improving
        tape = Tape(store, train=False)
        h1 = tape.value(decoupled_forward(tape, states1, cfg.conv,
                                          prefix="m1."))
        h2 = tape.value(decoupled_forward(tape, states2, cfg.conv,
                                          prefix="m2."))
        block = (l2_normalize_rows(h1[val_idx])
                 @ l2_normalize_rows(h2[t_all[val_idx]]).T)
        rp, cp = score_probabilities(block)
        mass = 0.5 * (np.trace(rp) + np.trace(cp))
        return -mass

    best_val, best_epoch, history = run_training(
        store, train_epoch, validate, protocol, MATCHING_LR
    )
    return MatcherModel(store, cfg, states1, states2, best_val, best_epoch,
                        history)
