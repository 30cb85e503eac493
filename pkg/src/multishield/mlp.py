"""Small fully-connected ReLU networks on top of the tape autodiff.

Parameters are a flat list of (W, b) pairs. Two forward paths exist: a plain
numpy one for inference speed and a taped one for gradients; both perform
the same float64 operations in the same order.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Node
from .data import read_checkpoint, write_checkpoint
from .rng import Rng

Params = list[tuple[np.ndarray, np.ndarray]]


def init_mlp(sizes: list[int], rng: Rng) -> Params:
    """He-initialized weights, zero biases. `sizes` includes input and
    output widths, e.g. [2, 32, 32, 3]."""
    if len(sizes) < 2:
        raise ValueError("sizes must list at least input and output widths")
    params: Params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        b = np.zeros(fan_out, dtype=np.float64)
        params.append((W, b))
    return params


def mlp_forward(params: Params, X: np.ndarray) -> np.ndarray:
    """Logits for a batch (n, d) -> (n, K). ReLU between layers, none after
    the last."""
    h = np.asarray(X, dtype=np.float64)
    squeeze = h.ndim == 1
    if squeeze:
        h = h.reshape(1, -1)
    for i, (W, b) in enumerate(params):
        h = h @ W + b
        if i < len(params) - 1:
            h = np.maximum(h, 0.0)
    return h[0] if squeeze else h


def mlp_forward_tape(tape: Tape, params: Params, x_node: Node) -> Node:
    """Taped forward pass; parameters enter the tape as constant leaves."""
    h = x_node
    last = len(params) - 1
    for i, (W, b) in enumerate(params):
        Wn = tape.input(W)
        bn = tape.input(b)
        h = tape.add(tape.matmul(h, Wn), bn)
        if i < last:
            h = tape.relu(h)
    return h


def mlp_params_nodes(tape: Tape, params: Params) -> tuple[list[Node], "ParamsForward"]:
    """Parameter leaves plus a forward closure, for training steps that need
    gradients with respect to the weights."""
    nodes = []
    for W, b in params:
        nodes.append(tape.input(W))
        nodes.append(tape.input(b))

    def forward(x_node: Node) -> Node:
        h = x_node
        last = len(params) - 1
        for i in range(len(params)):
            h = tape.add(tape.matmul(h, nodes[2 * i]), nodes[2 * i + 1])
            if i < last:
                h = tape.relu(h)
        return h

    return nodes, forward


ParamsForward = object  # closure type alias for documentation only


def flatten_params(params: Params) -> np.ndarray:
    return np.concatenate([a.ravel() for W, b in params for a in (W, b)])


def unflatten_params(sizes: list[int], flat: np.ndarray) -> Params:
    params: Params = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy()
        pos += fan_in * fan_out
        b = flat[pos:pos + fan_out].copy()
        pos += fan_out
        params.append((W, b))
    if pos != flat.size:
        raise ValueError(
            f"checkpoint holds {flat.size} parameters, architecture "
            f"{sizes} requires {pos}")
    return params


class MLPClassifier:
    """A K-way classifier. Labels are 1-based everywhere in the public API;
    `predict` breaks logit ties toward the lowest class index."""

    def __init__(self, sizes: list[int], params: Params, seed: int):
        self.sizes = list(sizes)
        self.params = params
        self.seed = int(seed)

    @property
    def d(self) -> int:
        return self.sizes[0]

    @property
    def K(self) -> int:
        return self.sizes[-1]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params, X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        logits = np.atleast_2d(self.logits(X))
        return (logits.argmax(axis=1) + 1).astype(np.int32)

    def logits_node(self, tape: Tape, x_node: Node) -> Node:
        return mlp_forward_tape(tape, self.params, x_node)

    def save(self, path: str) -> None:
        write_checkpoint(path, {
            "kind": "classifier",
            "architecture": self.sizes,
            "d": self.d, "K": self.K, "seed": self.seed,
        }, [a for W, b in self.params for a in (W, b)])

    @classmethod
    def load(cls, path: str) -> "MLPClassifier":
        header, flat = read_checkpoint(path)
        if header.get("kind") != "classifier":
            raise ValueError(
                f"header field 'kind' must be 'classifier', "
                f"got {header.get('kind')!r}")
        sizes = header.get("architecture")
        if (not isinstance(sizes, list) or len(sizes) < 2
                or not all(isinstance(s, int) for s in sizes)):
            raise ValueError("header field 'architecture' must be a list of ints")
        params = unflatten_params(sizes, flat)
        return cls(sizes, params, int(header.get("seed", 0)))
