"""Reverse-mode differentiation over a fixed op set, plus Adam and helpers.

A Tape records forward values in topological order; backward walks the
record once and deposits gradients into a ParamStore. The op set is exactly
what the three task heads need; there is no general graph optimizer.

64-bit floats throughout: finite-difference verification is part of the
contract and float32 would not survive it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .linalg import SparseMatrix, spmm


class TapeReuseError(RuntimeError):
    """A tape was asked to run backward twice without a fresh forward pass."""


class NonFiniteGradient(RuntimeError):
    """A parameter gradient contained NaN/Inf; the optimizer step aborted."""


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ParamEntry:
    value: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray


class ParamStore:
    """Named trainable parameters with their gradients and Adam state."""

    def __init__(self):
        self.entries: dict[str, ParamEntry] = {}
        self.step_count = 0

    def register(self, name: str, value) -> np.ndarray:
        if name in self.entries:
            raise ValueError(f"parameter {name!r} already registered")
        v = np.array(value, dtype=np.float64)
        if v.ndim == 1:
            v = v.reshape(1, -1)
        self.entries[name] = ParamEntry(
            v, np.zeros_like(v), np.zeros_like(v), np.zeros_like(v)
        )
        return self.entries[name].value

    def __contains__(self, name):
        return name in self.entries

    def names(self) -> list[str]:
        return list(self.entries)

    def value(self, name) -> np.ndarray:
        return self.entries[name].value

    def grad(self, name) -> np.ndarray:
        return self.entries[name].grad

    def zero_grads(self):
        for e in self.entries.values():
            e.grad[:] = 0.0

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of the current values (for best-epoch restore)."""
        return {k: e.value.copy() for k, e in self.entries.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for k, v in snap.items():
            self.entries[k].value[:] = v


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# tape


@dataclass
class Node:
    value: np.ndarray
    parents: tuple[int, ...] = ()
    vjp: object = None  # callable(grad) -> tuple of parent grads
    param_name: str | None = None
    needs_grad: bool = False


def _shape_error(kind, *shapes):
    return ValueError(f"{kind}: incompatible shapes {' vs '.join(map(str, shapes))}")


class Tape:
    """Append-only record of one forward pass.

    Confined to a single thread. `train` gates dropout; `rng` feeds it when
    no per-op seed is given. One backward() per tape.
    """

    def __init__(self, store: ParamStore | None = None, train: bool = True,
                 rng: np.random.Generator | None = None):
        self.store = store
        self.train = train
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.nodes: list[Node] = []
        self._spent = False

    # -- leaves ------------------------------------------------------------

    def constant(self, value) -> int:
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 1:
            v = v.reshape(1, -1)
        return self._append(Node(v))

    def param(self, name: str) -> int:
        if self.store is None or name not in self.store:
            raise KeyError(f"parameter {name!r} not registered")
        return self._append(
            Node(self.store.value(name), param_name=name, needs_grad=True)
        )

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def value(self, handle: int) -> np.ndarray:
        return self.nodes[handle].value

    def _val(self, handle):
        return self.nodes[handle].value

    def _derived(self, value, parents, vjp) -> int:
        needs = any(self.nodes[p].needs_grad for p in parents)
        return self._append(
            Node(np.asarray(value), tuple(parents), vjp if needs else None,
                 needs_grad=needs)
        )

    # -- generic dispatch (spec surface) ------------------------------------

    def record(self, op_kind: str, *inputs, **attrs) -> int:
        ops = {
            "matmul": self.matmul,
            "spmm_const": self.spmm_const,
            "add": self.add,
            "relu": self.relu,
            "softmax_rows": self.softmax_rows,
            "group_norm": self.group_norm,
            "l2_normalize_rows": self.l2_normalize_rows,
            "dropout": self.dropout,
            "scalar_mix": self.scalar_mix,
            "concat": self.concat,
            "mse": self.mse,
            "rmse": self.rmse,
            "cross_entropy_rows": self.cross_entropy_rows,
            "l2_penalty": self.l2_penalty,
        }
        if op_kind not in ops:
            raise ValueError(f"unknown op kind {op_kind!r}")
        return ops[op_kind](*inputs, **attrs)

    # -- ops -----------------------------------------------------------------

    def matmul(self, a: int, b: int, transpose_b: bool = False) -> int:
        av, bv = self._val(a), self._val(b)
        bT = bv.T if transpose_b else bv
        if av.shape[1] != bT.shape[0]:
            raise _shape_error("matmul", av.shape, bv.shape)
        out = av @ bT

        def vjp(g):
            if transpose_b:
                return g @ bv, g.T @ av
            return g @ bv.T, av.T @ g

        return self._derived(out, (a, b), vjp)

    def spmm_const(self, s: SparseMatrix, x: int) -> int:
        xv = self._val(x)
        out = spmm(s, xv)  # raises on shape mismatch
        st = s.transpose()

        def vjp(g):
            return (spmm(st, g),)

        return self._derived(out, (x,), vjp)

    def add(self, a: int, b: int) -> int:
        av, bv = self._val(a), self._val(b)
        if av.shape != bv.shape:
            # only row-vector bias broadcast is supported
            if not (bv.shape == (1, av.shape[1]) or av.shape == (1, bv.shape[1])):
                raise _shape_error("add", av.shape, bv.shape)
        out = av + bv

        def vjp(g):
            ga = g if av.shape == out.shape else g.sum(axis=0, keepdims=True)
            gb = g if bv.shape == out.shape else g.sum(axis=0, keepdims=True)
            return ga, gb

        return self._derived(out, (a, b), vjp)

    def relu(self, x: int) -> int:
        xv = self._val(x)
        mask = xv > 0

        def vjp(g):
            return (g * mask,)

        return self._derived(np.where(mask, xv, 0.0), (x,), vjp)

    def softmax_rows(self, x: int) -> int:
        xv = self._val(x)
        shifted = xv - xv.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)

        def vjp(g):
            return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

        return self._derived(p, (x,), vjp)

    def group_norm(self, x: int, gamma: int, beta: int, n_groups: int = 1,
                   eps: float = 1e-5) -> int:
        xv = self._val(x)
        gv, bv = self._val(gamma), self._val(beta)
        n, d = xv.shape
        if d % n_groups:
            raise ValueError(f"group_norm: {n_groups} groups do not divide dim {d}")
        if gv.shape != (1, d) or bv.shape != (1, d):
            raise _shape_error("group_norm affine", gv.shape, bv.shape, (1, d))
        grp = xv.reshape(n, n_groups, d // n_groups)
        mu = grp.mean(axis=2, keepdims=True)
        var = grp.var(axis=2, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = ((grp - mu) * inv).reshape(n, d)
        out = xhat * gv + bv

        def vjp(g):
            dgamma = (g * xhat).sum(axis=0, keepdims=True)
            dbeta = g.sum(axis=0, keepdims=True)
            gh = (g * gv).reshape(n, n_groups, d // n_groups)
            xh = xhat.reshape(n, n_groups, d // n_groups)
            m1 = gh.mean(axis=2, keepdims=True)
            m2 = (gh * xh).mean(axis=2, keepdims=True)
            dx = ((gh - m1 - xh * m2) * inv).reshape(n, d)
            return dx, dgamma, dbeta

        return self._derived(out, (x, gamma, beta), vjp)

    def l2_normalize_rows(self, x: int) -> int:
        xv = self._val(x)
        norms = np.linalg.norm(xv, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        y = np.where(norms > 0, xv / safe, 0.0)

        def vjp(g):
            dot = (g * y).sum(axis=1, keepdims=True)
            dx = np.where(norms > 0, (g - y * dot) / safe, 0.0)
            return (dx,)

        return self._derived(y, (x,), vjp)

    def dropout(self, x: int, rate: float, seed: int | None = None) -> int:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        xv = self._val(x)
        if rate == 0.0 or not self.train:
            return self._derived(xv.copy(), (x,), lambda g: (g,))
        rng = self.rng if seed is None else np.random.default_rng(seed)
        keep = rng.random(xv.shape) >= rate
        scale = 1.0 / (1.0 - rate)

        def vjp(g):
            return (g * keep * scale,)

        return self._derived(xv * keep * scale, (x,), vjp)

    def scalar_mix(self, tensors: list[int], weights, tied: bool = False) -> int:
        """Weighted sum of same-shape matrices.

        weights: a node handle (trainable) or a plain array (fixed). tied
        mixes exactly two tensors as w*A + (1-w)*B from a single scalar.
        """
        vals = [self._val(t) for t in tensors]
        for v in vals[1:]:
            if v.shape != vals[0].shape:
                raise _shape_error("scalar_mix", vals[0].shape, v.shape)
        w_handle = weights if isinstance(weights, (int, np.integer)) else None
        wv = self._val(w_handle) if w_handle is not None else np.asarray(
            weights, dtype=np.float64
        )
        wv = wv.reshape(-1)
        if tied:
            if len(tensors) != 2 or wv.size != 1:
                raise ValueError("tied scalar_mix needs 2 tensors and 1 weight")
            coef = np.array([wv[0], 1.0 - wv[0]])
        else:
            if wv.size != len(tensors):
                raise _shape_error("scalar_mix weights", (wv.size,), (len(tensors),))
            coef = wv
        out = sum(c * v for c, v in zip(coef, vals))
        parents = tuple(tensors) + ((w_handle,) if w_handle is not None else ())

        def vjp(g):
            grads = [c * g for c in coef]
            if w_handle is not None:
                if tied:
                    gw = np.array([[np.sum(g * (vals[0] - vals[1]))]])
                else:
                    gw = np.array([[np.sum(g * v) for v in vals]])
                grads.append(gw.reshape(self._val(w_handle).shape))
            return tuple(grads)

        return self._derived(out, parents, vjp)

    def concat(self, tensors: list[int], axis: int = 1) -> int:
        vals = [self._val(t) for t in tensors]
        out = np.concatenate(vals, axis=axis)
        sizes = [v.shape[axis] for v in vals]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g):
            return tuple(np.split(g, splits, axis=axis))

        return self._derived(out, tuple(tensors), vjp)

    def mse(self, pred: int, target) -> int:
        pv = self._val(pred)
        tv = np.asarray(target, dtype=np.float64)
        if pv.shape != tv.shape:
            raise _shape_error("mse", pv.shape, tv.shape)
        diff = pv - tv
        out = np.asarray((diff * diff).mean())

        def vjp(g):
            return (g * 2.0 * diff / diff.size,)

        return self._derived(out, (pred,), vjp)

    def rmse(self, pred: int, target) -> int:
        pv = self._val(pred)
        tv = np.asarray(target, dtype=np.float64)
        if pv.shape != tv.shape:
            raise _shape_error("rmse", pv.shape, tv.shape)
        diff = pv - tv
        val = float(np.sqrt((diff * diff).mean()))

        def vjp(g):
            if val == 0.0:
                return (np.zeros_like(diff),)
            return (g * diff / (diff.size * val),)

        return self._derived(np.asarray(val), (pred,), vjp)

    def cross_entropy_rows(self, logits: int, labels, mask=None,
                           reduction: str = "mean") -> int:
        """-log softmax(logits)[r, labels[r]] over selected rows.

        mask selects the rows that carry supervision; reduction is "mean"
        or "sum" over them. With an empty selection the loss is 0.
        """
        lv = self._val(logits)
        lab = np.asarray(labels, dtype=np.int64)
        if lab.shape != (lv.shape[0],):
            raise _shape_error("cross_entropy_rows labels", lab.shape, lv.shape)
        sel = np.ones(lv.shape[0], dtype=bool) if mask is None else np.asarray(
            mask, dtype=bool
        )
        if np.any((lab[sel] < 0) | (lab[sel] >= lv.shape[1])):
            raise ValueError("label index out of range")
        n_sel = int(sel.sum())
        shifted = lv - lv.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logz
        if n_sel == 0:
            return self._derived(np.asarray(0.0), (logits,),
                                 lambda g: (np.zeros_like(lv),))
        picked = logp[sel, lab[sel]]
        total = -picked.sum()
        scale = 1.0 / n_sel if reduction == "mean" else 1.0
        p = np.exp(logp)

        def vjp(g):
            dx = np.zeros_like(lv)
            dx[sel] = p[sel]
            dx[sel, lab[sel]] -= 1.0
            return (dx * (g * scale),)

        return self._derived(np.asarray(total * scale), (logits,), vjp)

    def l2_penalty(self, x: int) -> int:
        """Mean Euclidean norm of the rows."""
        xv = self._val(x)
        norms = np.linalg.norm(xv, axis=1, keepdims=True)
        out = np.asarray(norms.mean())
        safe = np.where(norms > 0, norms, 1.0)

        def vjp(g):
            return (g * np.where(norms > 0, xv / safe, 0.0) / xv.shape[0],)

        return self._derived(out, (x,), vjp)

    # -- reverse pass --------------------------------------------------------

    def backward(self, loss: int):
        """Accumulate d(loss)/d(param) into the store for every param leaf."""
        if self._spent:
            raise TapeReuseError("tape already ran backward; record a new pass")
        self._spent = True
        loss_val = self.nodes[loss].value
        if np.asarray(loss_val).size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss_val.shape}")
        grads: dict[int, np.ndarray] = {loss: np.ones_like(np.asarray(loss_val))}
        for idx in range(loss, -1, -1):
            node = self.nodes[idx]
            g = grads.pop(idx, None)
            if g is None or not node.needs_grad and node.param_name is None:
                continue
            if node.param_name is not None:
                self.store.entries[node.param_name].grad += g.reshape(
                    self.store.value(node.param_name).shape
                )
                continue
            if node.vjp is None:
                continue
            parent_grads = node.vjp(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not self.nodes[p].needs_grad:
                    continue
                if p in grads:
                    grads[p] = grads[p] + pg
                else:
                    grads[p] = pg


def backward(tape: Tape, loss: int, params: ParamStore | None = None):
    """Functional wrapper over Tape.backward (params must match tape.store)."""
    if params is not None and params is not tape.store:
        raise ValueError("params must be the store the tape recorded against")
    tape.backward(loss)


# ---------------------------------------------------------------------------
# optimizer


def adam_step(params: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0, step: int | None = None):
    """One Adam update with bias correction and decoupled weight decay.

    Aborts (no parameter touched) if any gradient is non-finite. Gradients
    are zeroed after a successful step.
    """
    for name, e in params.entries.items():
        if not np.all(np.isfinite(e.grad)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
    t = params.step_count + 1 if step is None else step
    for e in params.entries.values():
        e.adam_m[:] = beta1 * e.adam_m + (1 - beta1) * e.grad
        e.adam_v[:] = beta2 * e.adam_v + (1 - beta2) * e.grad * e.grad
        m_hat = e.adam_m / (1 - beta1 ** t)
        v_hat = e.adam_v / (1 - beta2 ** t)
        decay = weight_decay * e.value
        e.value -= lr * (m_hat / (np.sqrt(v_hat) + eps) + decay)
    params.step_count = t
    params.zero_grads()


def lr_decay(initial_lr: float, step: int, decay_rate: float,
             decay_every: int) -> float:
    if decay_every < 1:
        raise ValueError("decay_every must be >= 1")
    return initial_lr * decay_rate ** (step // decay_every)


# ---------------------------------------------------------------------------
# finite-difference verification


def finite_difference_check(build_loss, store: ParamStore, eps: float = 1e-5,
                            param_names=None) -> float:
    """Max relative error between backward() and central differences.

    build_loss(tape) must record one forward pass and return the loss
    handle; it is re-invoked for every probe, so it has to be deterministic
    (fixed dropout seeds and the like).
    """
    tape = Tape(store, train=True, rng=np.random.default_rng(0))
    loss = build_loss(tape)
    store.zero_grads()
    tape.backward(loss)
    analytic = {k: store.grad(k).copy() for k in store.names()}

    def eval_loss() -> float:
        t = Tape(store, train=True, rng=np.random.default_rng(0))
        return float(np.asarray(t.value(build_loss(t))))

    worst = 0.0
    names = param_names if param_names is not None else store.names()
    for name in names:
        value = store.value(name)
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = eval_loss()
            flat[i] = orig - eps
            down = eval_loss()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[name].reshape(-1)[i]
            # the floor keeps central-difference roundoff on (near-)zero
            # gradient components from registering as large relative error
            err = abs(a - numeric) / max(1e-4, abs(a), abs(numeric))
            worst = max(worst, err)
    store.zero_grads()
    return worst


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"CGCK"
_CKPT_VERSION = 1


def save_checkpoint(store: ParamStore, path):
    """Versioned binary dump: values plus Adam state and step counter."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ I", _CKPT_VERSION, store.step_count,
                             len(store.entries)))
        for name in sorted(store.entries):
            e = store.entries[name]
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", *e.value.shape))
            for arr in (e.value, e.adam_m, e.adam_v):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParamStore:
    store = ParamStore()
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a cellgraph checkpoint")
        version, step, count = struct.unpack("<IQ I", fh.read(16))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        store.step_count = step
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", fh.read(8))
            n = rows * cols
            arrays = []
            for _ in range(3):
                buf = fh.read(8 * n)
                arrays.append(
                    np.frombuffer(buf, dtype="<f8").reshape(rows, cols).copy()
                )
            store.register(name, arrays[0])
            store.entries[name].adam_m[:] = arrays[1]
            store.entries[name].adam_v[:] = arrays[2]
    return store
