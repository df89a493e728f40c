"""
The tape, finite-difference verification, and Adam
==================================================

A minimal tour of the differentiation engine: record a forward pass,
run backward, verify against central differences, and optimize.
"""

import numpy as np

from cellgraph.autodiff import (ParamStore, Tape, adam_step,
                                finite_difference_check, lr_decay)
from cellgraph.gradcheck import run_gradient_checks

# --- one forward/backward pass ---------------------------------------------
store = ParamStore()
rng = np.random.default_rng(0)
store.register("w", rng.standard_normal((4, 3)))
store.register("b", np.zeros((1, 3)))
x = rng.standard_normal((8, 4))
y = rng.standard_normal((8, 3))

tape = Tape(store)
pred = tape.relu(tape.add(tape.matmul(tape.constant(x), tape.param("w")),
                          tape.param("b")))
loss = tape.mse(pred, y)
print(f"loss before training: {float(tape.value(loss)):.4f}")
tape.backward(loss)
print(f"gradient norms: w {np.linalg.norm(store.grad('w')):.4f}, "
      f"b {np.linalg.norm(store.grad('b')):.4f}")

# --- the same gradients, checked numerically --------------------------------
def build(t):
    p = t.relu(t.add(t.matmul(t.constant(x), t.param("w")), t.param("b")))
    return t.mse(p, y)

store.zero_grads()
err = finite_difference_check(build, store)
print(f"max relative error vs central differences: {err:.2e}")

# --- a short Adam run with learning-rate decay -------------------------------
for epoch in range(200):
    t = Tape(store)
    t.backward(build(t))
    adam_step(store, lr=lr_decay(0.05, epoch, 0.5, 80))
t = Tape(store)
print(f"loss after 200 Adam steps: {float(t.value(build(t))):.4f}")

# --- the full op-set verification the gradcheck CLI runs --------------------
results, worst, passed = run_gradient_checks(n_seeds=5)
print(f"op suite over 5 seeds: worst {worst:.2e} "
      f"({'PASS' if passed else 'FAIL'})")
