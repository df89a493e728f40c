"""Shared training protocol: splits, the early-stopping loop, run logs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ParamStore, Tape, adam_step, lr_decay
from ..linalg import SparseMatrix


@dataclass
class TrainProtocol:
    """Split/stopping/optimizer schedule shared by all three task heads.

    lr of None picks the task default (1e-3 for the coupled prediction
    network, 1e-2 for the decoupled heads).
    """

    split_fraction: float = 0.85
    patience_epochs: int = 300
    max_epochs: int = 2000
    seed: int = 0
    lr: float | None = None
    weight_decay: float = 0.0
    lr_decay_rate: float = 1.0
    lr_decay_every: int = 100

    def validate(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must be in (0, 1)")
        if self.patience_epochs < 1:
            raise ValueError("patience_epochs must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")

    def resolved_lr(self, task_default: float) -> float:
        return task_default if self.lr is None else self.lr


def split_cells(n: int, fraction: float, seed: int):
    """Shuffled (train, validation) index split."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(n - 1, max(1, int(round(n * fraction))))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def selector_matrix(indices, n_cols: int) -> SparseMatrix:
    """Sparse row-selection operator: (len(indices) x n_cols) one-hot rows."""
    idx = np.asarray(indices, dtype=np.int64)
    return SparseMatrix(
        len(idx), n_cols,
        np.arange(len(idx) + 1, dtype=np.int64), idx, np.ones(len(idx)),
    )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    lr: float

    def format(self) -> str:
        return (f"epoch={self.epoch} train_loss={self.train_loss:.6f} "
                f"val={self.val_metric:.6f} lr={self.lr:.6f}")


def write_run_log(history: list[EpochRecord], path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(rec.format() + "\n")


def run_training(store: ParamStore, train_epoch, validate,
                 protocol: TrainProtocol, task_default_lr: float,
                 adam_betas=(0.9, 0.999), adam_eps: float = 1e-8):
    """Full-batch loop with early stopping on the validation metric.

    train_epoch(tape) records one forward pass and returns the loss handle;
    validate() returns the (lower-is-better) validation metric. Training
    stops once the metric has failed to improve for patience epochs, and the
    best-epoch parameters are restored before returning.

    Returns (best_val, best_epoch, history).
    """
    protocol.validate()
    base_lr = protocol.resolved_lr(task_default_lr)
    best_val = np.inf
    best_epoch = -1
    best_snap = store.snapshot()
    history: list[EpochRecord] = []
    for epoch in range(protocol.max_epochs):
        lr = lr_decay(base_lr, epoch, protocol.lr_decay_rate,
                      protocol.lr_decay_every)
        tape = Tape(store, train=True,
                    rng=np.random.default_rng([protocol.seed, epoch]))
        loss = train_epoch(tape)
        loss_val = float(np.asarray(tape.value(loss)))
        if not np.isfinite(loss_val):
            raise RuntimeError(f"non-finite training loss at epoch {epoch}")
        tape.backward(loss)
        adam_step(store, lr=lr, beta1=adam_betas[0], beta2=adam_betas[1],
                  eps=adam_eps, weight_decay=protocol.weight_decay)
        val = float(validate())
        history.append(EpochRecord(epoch, loss_val, val, lr))
        if val < best_val - 1e-12:
            best_val = val
            best_epoch = epoch
            best_snap = store.snapshot()
        elif epoch - best_epoch >= protocol.patience_epochs:
            break
    store.restore(best_snap)
    return best_val, best_epoch, history
