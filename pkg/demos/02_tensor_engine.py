#!/usr/bin/env python3
"""
The numpy tensor engine behind the network
==========================================

  1. a 3x3 convolution on an all-ones image, by hand,
  2. reverse-mode gradients through conv -> relu -> dense -> mse,
  3. a central-difference check of those gradients in float64,
  4. Adam minimizing a small regression problem.

Run:  python demos/02_tensor_engine.py
"""

import numpy as np

from skycast import tensor as T

# --- 1: convolution -------------------------------------------------------
x = T.Tensor(np.ones((1, 1, 4, 4)))
w = T.Tensor(np.ones((1, 1, 3, 3)))
b = T.Tensor(np.zeros(1))
y = T.conv2d(x, w, b, stride=1)
print("ones * ones, zero padding 1 (corners see 4 pixels, the interior 9):")
print(y.data[0, 0])
print("stride 2 output shape:", T.conv2d(x, w, b, stride=2).shape)

# --- 2 + 3: gradients and a finite-difference check ---------------------
rng = np.random.default_rng(0)
img = T.Tensor(rng.normal(size=(2, 3, 6, 6)), dtype=np.float64)
cw = T.Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.3, dtype=np.float64, requires_grad=True)
cb = T.Tensor(np.zeros(4), dtype=np.float64, requires_grad=True)
dw = T.Tensor(rng.normal(size=(1, 4 * 3 * 3)) * 0.1, dtype=np.float64, requires_grad=True)
db = T.Tensor(np.zeros(1), dtype=np.float64, requires_grad=True)
target = T.Tensor(np.array([[0.5], [-0.2]]), dtype=np.float64)


def loss():
    hidden = T.relu(T.conv2d(img, cw, cb, stride=2))
    return T.mse(T.dense(T.flatten(hidden), dw, db), target)


for p in (cw, cb, dw, db):
    p.grad = None
T.backward(loss())
analytic = cw.grad[0, 0, 1, 1]
eps = 1e-3
cw.data[0, 0, 1, 1] += eps
up = float(loss().data)
cw.data[0, 0, 1, 1] -= 2 * eps
down = float(loss().data)
cw.data[0, 0, 1, 1] += eps
print(f"\ndL/dw[0,0,1,1]: analytic {analytic:.8f}, central difference {(up - down) / (2 * eps):.8f}")

# --- 4: Adam -------------------------------------------------------------------
X = rng.normal(size=(64, 5))
true_w = rng.normal(size=(1, 5))
Y = X @ true_w.T
W = T.Tensor(np.zeros((1, 5)), requires_grad=True)
B = T.Tensor(np.zeros(1), requires_grad=True)
state = T.AdamState(learning_rate=0.05)
for step in range(301):
    W.grad = B.grad = None
    L = T.mse(T.dense(T.Tensor(X), W, B), T.Tensor(Y))
    T.backward(L)
    state = T.adam_step([W, B], [W.grad, B.grad], state)
    if step % 100 == 0:
        print(f"adam step {step:3d}: loss {float(L.data):.6f}")
print("recovered weights:", np.round(W.data, 3), "\ntrue weights:     ", np.round(true_w, 3))
