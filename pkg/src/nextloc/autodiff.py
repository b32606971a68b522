"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations the recurrent predictor needs: linear maps, elementwise
gates, column concat/slice, embedding lookups, softmax cross-entropy, and a
circular absolute error. Values are float64 throughout. Each operation
records a closure on the built graph; `backward` replays them in reverse
topological order and accumulates into leaf `.grad` buffers, so repeated
calls without `zero_grad` add up.

Conventions: batched activations are (B, dim); weight matrices are
(out, in) and applied as ``x @ W.T``; no general broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GradError(Exception):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.value) if requires_grad else None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad."""
    if loss.value.size != 1:
        raise GradError(f"backward requires a scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}

    def getbuf(node: Tensor) -> np.ndarray:
        buf = grads.get(id(node))
        if buf is None:
            buf = np.zeros_like(node.value)
            grads[id(node)] = buf
        return buf

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            node._backward(g, getbuf)
        elif node.requires_grad:
            node.grad += g


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor) -> Tensor:
    """x (B, n) times w (m, n) transposed -> (B, m)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[1]:
        raise GradError(f"linear shape mismatch: {x.shape} x {w.shape}")
    out = Tensor(x.value @ w.value.T, parents=(x, w))

    def bw(g, getbuf):
        bx, bw_ = getbuf(x), getbuf(w)
        bx += g @ w.value
        bw_ += g.T @ x.value

    out._backward = bw
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.value.ndim != 1 or x.value.shape[-1] != b.value.shape[0]:
        raise GradError(f"bias shape mismatch: {x.shape} + {b.shape}")
    out = Tensor(x.value + b.value, parents=(x, b))

    def bw(g, getbuf):
        bx, bb = getbuf(x), getbuf(b)
        bx += g
        bb += g.sum(axis=0) if g.ndim == 2 else g

    out._backward = bw
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fully connected layer, x @ W.T + b."""
    return add_bias(linear(x, w), b)


def _binop(a: Tensor, b: Tensor, value, bw) -> Tensor:
    if a.value.shape != b.value.shape:
        raise GradError(f"shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(value, parents=(a, b))
    out._backward = bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g, getbuf):
        ba, bb = getbuf(a), getbuf(b)
        ba += g
        bb += g

    return _binop(a, b, a.value + b.value, bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g, getbuf):
        ba, bb = getbuf(a), getbuf(b)
        ba += g
        bb -= g

    return _binop(a, b, a.value - b.value, bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g, getbuf):
        ba, bb = getbuf(a), getbuf(b)
        ba += g * b.value
        bb += g * a.value

    return _binop(a, b, a.value * b.value, bw)


def cmul(x: Tensor, c) -> Tensor:
    """Multiply by a constant array broadcastable over x (e.g. step masks)."""
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(x.value * c, parents=(x,))
    if out.value.shape != x.value.shape:
        raise GradError(f"cmul constant {c.shape} expands {x.shape}")

    def bw(g, getbuf):
        bx = getbuf(x)
        bx += g * c

    out._backward = bw
    return out


def smul(x: Tensor, k: float) -> Tensor:
    out = Tensor(x.value * k, parents=(x,))

    def bw(g, getbuf):
        bx = getbuf(x)
        bx += g * k

    out._backward = bw
    return out


def one_minus(x: Tensor) -> Tensor:
    out = Tensor(1.0 - x.value, parents=(x,))

    def bw(g, getbuf):
        bx = getbuf(x)
        bx -= g

    out._backward = bw
    return out


def sigmoid(x: Tensor) -> Tensor:
    v = np.empty_like(x.value)
    pos = x.value >= 0
    v[pos] = 1.0 / (1.0 + np.exp(-x.value[pos]))
    ex = np.exp(x.value[~pos])
    v[~pos] = ex / (1.0 + ex)
    out = Tensor(v, parents=(x,))

    def bw(g, getbuf):
        bx = getbuf(x)
        bx += g * v * (1.0 - v)

    out._backward = bw
    return out


def tanh(x: Tensor) -> Tensor:
    v = np.tanh(x.value)
    out = Tensor(v, parents=(x,))

    def bw(g, getbuf):
        bx = getbuf(x)
        bx += g * (1.0 - v * v)

    out._backward = bw
    return out


def concat_cols(xs: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([x.value for x in xs], axis=1), parents=tuple(xs))
    offsets = np.cumsum([0] + [x.value.shape[1] for x in xs])

    def bw(g, getbuf):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            bx = getbuf(x)
            bx += g[:, lo:hi]

    out._backward = bw
    return out


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    out = Tensor(x.value[:, lo:hi], parents=(x,))

    def bw(g, getbuf):
        getbuf(x)[:, lo:hi] += g

    out._backward = bw
    return out


def embedding(table: Tensor, idx) -> Tensor:
    """Rows of `table` at integer indices (B,); gradient scatters into rows."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise GradError(f"embedding index out of range for table {table.shape}")
    out = Tensor(table.value[idx], parents=(table,))

    def bw(g, getbuf):
        np.add.at(getbuf(table), idx, g)

    out._backward = bw
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain (non-differentiated) softmax over the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: Tensor, targets, weights=None) -> Tensor:
    """Per-row weighted cross-entropy, -w_i * log softmax(logits_i)[t_i].

    `targets` (B,) and `weights` (B,) are constants; max-subtraction keeps the
    log-sum-exp stable. Returns a (B,) loss vector.
    """
    targets = np.asarray(targets, dtype=np.intp)
    n, k = logits.value.shape
    if targets.shape != (n,) or (targets.size and (targets.min() < 0 or targets.max() >= k)):
        raise GradError("softmax_xent target out of range")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise GradError("softmax_xent weights must be non-negative")
    m = logits.value.max(axis=1)
    lse = m + np.log(np.exp(logits.value - m[:, None]).sum(axis=1))
    out = Tensor(w * (lse - logits.value[np.arange(n), targets]), parents=(logits,))

    def bw(g, getbuf):
        p = softmax(logits.value)
        p[np.arange(n), targets] -= 1.0
        bl = getbuf(logits)
        bl += (g * w)[:, None] * p

    out._backward = bw
    return out


def circular_abs(pred: Tensor, targets) -> Tensor:
    """|delta| after wrapping delta = pred - target to [-1/2, 1/2].

    For |delta| <= 1 this equals min(|delta|, 1 - |delta|); used for errors on
    a unit-circle quantity such as normalized time of week. Returns (B,).
    """
    t = np.asarray(targets, dtype=np.float64)
    delta = pred.value.reshape(-1) - t
    wrapped = delta - np.round(delta)
    out = Tensor(np.abs(wrapped), parents=(pred,))

    def bw(g, getbuf):
        bp = getbuf(pred)
        bp += (g * np.sign(wrapped)).reshape(pred.value.shape)

    out._backward = bw
    return out


def mean(x: Tensor) -> Tensor:
    out = Tensor(x.value.mean(), parents=(x,))
    inv = 1.0 / x.value.size

    def bw(g, getbuf):
        bx = getbuf(x)
        bx += g * inv

    out._backward = bw
    return out


def total(x: Tensor) -> Tensor:
    out = Tensor(x.value.sum(), parents=(x,))

    def bw(g, getbuf):
        bx = getbuf(x)
        bx += g

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# GRU cell
# ---------------------------------------------------------------------------

@dataclass
class GRUWeights:
    """Gate weights stored fused along the first axis, ordered z, r, n:
    w_x (3H, in), w_h (3H, H), bias (3H,)."""

    w_x: Tensor
    w_h: Tensor
    bias: Tensor

    @property
    def hidden(self) -> int:
        return self.w_h.value.shape[1]


def gru_step(x: Tensor, h_prev: Tensor, w: GRUWeights, mask=None) -> Tensor:
    """One GRU step: z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
    n = tanh(Wn x + r * (Un h) + bn), h' = (1 - z) * n + z * h.

    `mask` (B, 1 or B,) of 0/1 passes h_prev through unchanged on masked rows,
    so padded steps contribute nothing to the state evolution.
    """
    hdim = w.hidden
    gx = add_bias(linear(x, w.w_x), w.bias)
    gh = linear(h_prev, w.w_h)
    z = sigmoid(add(slice_cols(gx, 0, hdim), slice_cols(gh, 0, hdim)))
    r = sigmoid(add(slice_cols(gx, hdim, 2 * hdim), slice_cols(gh, hdim, 2 * hdim)))
    n = tanh(add(slice_cols(gx, 2 * hdim, 3 * hdim), mul(r, slice_cols(gh, 2 * hdim, 3 * hdim))))
    h_new = add(mul(one_minus(z), n), mul(z, h_prev))
    if mask is None:
        return h_new
    m = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
    return add(cmul(h_new, m), cmul(h_prev, 1.0 - m))
