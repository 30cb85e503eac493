"""Reverse-mode automatic differentiation over numpy float64 arrays.

A `Tape` records primitive operations as they execute. Calling
`Tape.gradient` walks the recording backwards and accumulates vector-Jacobian
products. The op set is exactly what the models and attacks in this package
need: affine layers, ReLU, softmax cross-entropy, row-wise maxima with an
excluded column, elementwise maximum, and l2 normalization.

Subgradient conventions (deterministic by design):
  - relu'(0) = 0.
  - A tied max routes its entire gradient to the lowest participating index;
    for the binary `maximum(a, b)` the tie goes to `a`.

Replaying a tape re-executes the same numpy calls in the same order, so the
recomputed values are bit-for-bit identical to the recorded ones.
"""

from __future__ import annotations

import numpy as np


def _as_f64(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Node:
    __slots__ = ("value", "parents", "_vjp", "_recompute", "grad", "op")

    def __init__(self, value, parents=(), vjp=None, recompute=None, op="input"):
        self.value = value
        self.parents = parents
        self._vjp = vjp            # grad_out -> tuple of parent grads
        self._recompute = recompute  # parent values -> value
        self.grad = None
        self.op = op

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Records a forward computation and differentiates it in reverse."""

    def __init__(self):
        self._nodes: list[Node] = []

    def _record(self, node: Node) -> Node:
        self._nodes.append(node)
        return node

    # ---- leaves ----

    def input(self, value) -> Node:
        return self._record(Node(_as_f64(value).copy(), op="input"))

    # ---- elementwise / broadcast arithmetic ----

    def add(self, a: Node, b: Node) -> Node:
        value = a.value + b.value
        return self._record(Node(
            value, (a, b),
            vjp=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
            recompute=lambda va, vb: va + vb,
            op="add"))

    def sub(self, a: Node, b: Node) -> Node:
        value = a.value - b.value
        return self._record(Node(
            value, (a, b),
            vjp=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
            recompute=lambda va, vb: va - vb,
            op="sub"))

    def mul(self, a: Node, b: Node) -> Node:
        value = a.value * b.value
        return self._record(Node(
            value, (a, b),
            vjp=lambda g: (_unbroadcast(g * b.value, a.shape),
                           _unbroadcast(g * a.value, b.shape)),
            recompute=lambda va, vb: va * vb,
            op="mul"))

    def div(self, a: Node, b: Node) -> Node:
        value = a.value / b.value
        return self._record(Node(
            value, (a, b),
            vjp=lambda g: (_unbroadcast(g / b.value, a.shape),
                           _unbroadcast(-g * a.value / (b.value * b.value), b.shape)),
            recompute=lambda va, vb: va / vb,
            op="div"))

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        value = a.value * c
        return self._record(Node(
            value, (a,),
            vjp=lambda g: (g * c,),
            recompute=lambda va: va * c,
            op="scale"))

    def exp(self, a: Node) -> Node:
        value = np.exp(a.value)
        return self._record(Node(
            value, (a,),
            vjp=lambda g: (g * value,),
            recompute=np.exp,
            op="exp"))

    # ---- linear algebra ----

    def transpose(self, a: Node) -> Node:
        value = a.value.T.copy()
        return self._record(Node(
            value, (a,),
            vjp=lambda g: (g.T,),
            recompute=lambda va: va.T.copy(),
            op="transpose"))

    def matmul(self, a: Node, b: Node) -> Node:
        value = a.value @ b.value
        return self._record(Node(
            value, (a, b),
            vjp=lambda g: (g @ b.value.T, a.value.T @ g),
            recompute=lambda va, vb: va @ vb,
            op="matmul"))

    # ---- nonlinearities ----

    def relu(self, a: Node) -> Node:
        value = np.maximum(a.value, 0.0)
        mask = a.value > 0.0  # relu'(0) = 0
        return self._record(Node(
            value, (a,),
            vjp=lambda g: (g * mask,),
            recompute=lambda va: np.maximum(va, 0.0),
            op="relu"))

    def maximum(self, a: Node, b: Node) -> Node:
        """Elementwise max; a tie sends the whole gradient to `a`."""
        value = np.maximum(a.value, b.value)
        take_a = a.value >= b.value
        return self._record(Node(
            value, (a, b),
            vjp=lambda g: (_unbroadcast(g * take_a, a.shape),
                           _unbroadcast(g * ~take_a, b.shape)),
            recompute=lambda va, vb: np.maximum(va, vb),
            op="maximum"))

    # ---- reductions / selections ----

    def sum(self, a: Node) -> Node:
        value = np.array(a.value.sum())
        return self._record(Node(
            value, (a,),
            vjp=lambda g: (np.broadcast_to(g, a.shape).copy(),),
            recompute=lambda va: np.array(va.sum()),
            op="sum"))

    def gather_rows(self, a: Node, idx: np.ndarray) -> Node:
        """a[i, idx[i]] for each row i. idx is 0-based."""
        idx = np.asarray(idx, dtype=np.int64)
        rows = np.arange(a.shape[0])
        value = a.value[rows, idx].copy()

        def vjp(g):
            out = np.zeros_like(a.value)
            np.add.at(out, (rows, idx), g)
            return (out,)

        return self._record(Node(
            value, (a,), vjp=vjp,
            recompute=lambda va: va[rows, idx].copy(),
            op="gather_rows"))

    def rowmax_excluding(self, a: Node, banned: np.ndarray) -> Node:
        """Per-row max over columns j != banned[i].

        Gradient flows entirely to the lowest-index maximizer among the
        allowed columns of each row.
        """
        banned = np.asarray(banned, dtype=np.int64)
        rows = np.arange(a.shape[0])

        def compute(va):
            masked = va.copy()
            masked[rows, banned] = -np.inf
            return masked.max(axis=1)

        masked_now = a.value.copy()
        masked_now[rows, banned] = -np.inf
        winners = masked_now.argmax(axis=1)  # argmax takes the first maximizer
        value = masked_now[rows, winners].copy()

        def vjp(g):
            out = np.zeros_like(a.value)
            np.add.at(out, (rows, winners), g)
            return (out,)

        return self._record(Node(
            value, (a,), vjp=vjp, recompute=compute, op="rowmax_excluding"))

    def l2norm_rows(self, a: Node) -> Node:
        """Row-wise l2 norm with keepdims, shape (B, 1)."""
        def compute(va):
            return np.sqrt((va * va).sum(axis=1, keepdims=True))
        value = compute(a.value)
        return self._record(Node(
            value, (a,),
            vjp=lambda g: (g * a.value / value,),
            recompute=compute,
            op="l2norm_rows"))

    def softmax_cross_entropy(self, logits: Node, y_onebased: np.ndarray) -> Node:
        """Mean over the batch of -log softmax(logits)[y]; y is 1-based."""
        y0 = np.asarray(y_onebased, dtype=np.int64) - 1
        rows = np.arange(logits.shape[0])

        def compute(vl):
            m = vl.max(axis=1, keepdims=True)
            z = vl - m
            logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
            logp = z - logsumexp
            return np.array(-logp[rows, y0].mean())

        value = compute(logits.value)

        def vjp(g):
            m = logits.value.max(axis=1, keepdims=True)
            e = np.exp(logits.value - m)
            p = e / e.sum(axis=1, keepdims=True)
            p[rows, y0] -= 1.0
            return (g * p / logits.shape[0],)

        return self._record(Node(
            value, (logits,), vjp=vjp, recompute=compute,
            op="softmax_cross_entropy"))

    def multi_positive_nce(self, scores: Node, y_onebased: np.ndarray) -> Node:
        """Text-to-image contrastive loss over a score matrix (B, K).

        For each class c present in the batch, softmax column c over the
        batch and average -log p over that class's rows; the result is the
        mean over present classes. Absent classes contribute nothing.
        """
        y0 = np.asarray(y_onebased, dtype=np.int64) - 1
        present = np.unique(y0)

        def compute(vs):
            total = 0.0
            for c in present:
                col = vs[:, c]
                m = col.max()
                logp = (col - m) - np.log(np.exp(col - m).sum())
                rows = np.flatnonzero(y0 == c)
                total += -logp[rows].mean()
            return np.array(total / present.size)

        value = compute(scores.value)

        def vjp(g):
            out = np.zeros_like(scores.value)
            for c in present:
                col = scores.value[:, c]
                m = col.max()
                e = np.exp(col - m)
                p = e / e.sum()
                rows = np.flatnonzero(y0 == c)
                out[:, c] = p
                out[rows, c] -= 1.0 / rows.size
            return (g * out / present.size,)

        return self._record(Node(
            value, (scores,), vjp=vjp, recompute=compute,
            op="multi_positive_nce"))

    # ---- engine ----

    def gradient(self, output: Node, wrt) -> list[np.ndarray]:
        """Gradients of scalar `output` with respect to each node in `wrt`."""
        if output.value.size != 1:
            raise ValueError("gradient target must be scalar")
        for node in self._nodes:
            node.grad = None
        output.grad = np.ones_like(output.value)
        for node in reversed(self._nodes):
            if node.grad is None or node._vjp is None:
                continue
            parent_grads = node._vjp(node.grad)
            for parent, pg in zip(node.parents, parent_grads):
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad = parent.grad + pg
        out = []
        for node in wrt:
            out.append(node.grad.copy() if node.grad is not None
                       else np.zeros_like(node.value))
        return out

    def replay(self) -> bool:
        """Re-execute the recorded forward pass; True iff every value matches
        the recording bit-for-bit."""
        computed: dict[int, np.ndarray] = {}
        for node in self._nodes:
            if node._recompute is None:
                computed[id(node)] = node.value
                continue
            parent_values = [computed[id(p)] for p in node.parents]
            fresh = node._recompute(*parent_values)
            if not np.array_equal(
                    np.asarray(fresh), np.asarray(node.value)):
                return False
            computed[id(node)] = fresh
        return True


# ---- public elementary operations (plain numpy in / out) ----

def cosine_similarity(u, v) -> float:
    """(u . v) / (|u| |v|); raises on a zero-norm input."""
    u = _as_f64(u).ravel()
    v = _as_f64(v).ravel()
    if u.shape != v.shape:
        raise ValueError("cosine_similarity: length mismatch")
    nu = np.sqrt((u * u).sum())
    nv = np.sqrt((v * v).sum())
    if nu == 0.0 or nv == 0.0:
        raise ValueError("degenerate embedding")
    return float((u @ v) / (nu * nv))


def softmax_cross_entropy(logits, y: int) -> float:
    """-log softmax(logits)[y] for a single logit vector; y is 1-based."""
    logits = _as_f64(logits).ravel()
    K = logits.shape[0]
    if not (1 <= y <= K):
        raise ValueError(f"label {y} out of range 1..{K}")
    tape = Tape()
    node = tape.input(logits.reshape(1, K))
    loss = tape.softmax_cross_entropy(node, np.array([y]))
    return float(loss.value)


def input_gradient(objective, x) -> np.ndarray:
    """Reverse-mode gradient of `objective` at `x`.

    `objective(tape, x_node)` must build and return a scalar Node.
    """
    tape = Tape()
    x_node = tape.input(x)
    loss = objective(tape, x_node)
    (grad,) = tape.gradient(loss, [x_node])
    return grad
