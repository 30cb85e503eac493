"""Training loops for the unimodal classifier.

Both trainers run plain minibatch SGD on mean softmax cross-entropy. The
adversarial variant hardens each batch with a projected-gradient inner loop
before the update, in the style of min-max robust training.

Randomness is split into named substreams ("init", "shuffle", "attack") so
the two trainers consume shuffle draws identically; with a zero perturbation
radius the adversarial trainer touches no attack randomness and reproduces
the standard trajectory exactly.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape
from .data import Dataset
from .mlp import MLPClassifier, init_mlp, mlp_params_nodes
from .rng import Rng


def _sgd_epochs(X, y, params, epochs, batch_size, lr, shuffle_rng,
                craft_batch=None):
    n = X.shape[0]
    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = X[idx]
            if craft_batch is not None:
                xb = craft_batch(params, xb, y[idx])
            tape = Tape()
            nodes, forward = mlp_params_nodes(tape, params)
            logits = forward(tape.input(xb))
            loss = tape.softmax_cross_entropy(logits, y[idx])
            grads = tape.gradient(loss, nodes)
            for i in range(len(params)):
                W, b = params[i]
                params[i] = (W - lr * grads[2 * i], b - lr * grads[2 * i + 1])
    return params


def train_standard(train: Dataset, hidden: list[int], epochs: int,
                   batch_size: int, lr: float, rng: Rng) -> MLPClassifier:
    """SGD on clean minibatches."""
    sizes = [train.d] + list(hidden) + [train.K]
    params = init_mlp(sizes, rng.stream("init"))
    params = _sgd_epochs(train.X, train.y, params, epochs, batch_size, lr,
                         rng.stream("shuffle"))
    return MLPClassifier(sizes, params, rng.seed)


def _craft_pgd_batch(params, xb, yb, eps, steps, alpha, attack_rng):
    """Batched inner maximization: random start in the l-inf ball, signed
    gradient ascent on the training loss, projection after every step."""
    delta = attack_rng.uniform(-eps, eps, size=xb.shape)
    x_adv = np.clip(xb + delta, 0.0, 1.0)
    for _ in range(steps):
        tape = Tape()
        x_node = tape.input(x_adv)
        _, forward = mlp_params_nodes(tape, params)
        logits = forward(x_node)
        loss = tape.softmax_cross_entropy(logits, yb)
        (g,) = tape.gradient(loss, [x_node])
        x_adv = x_adv + alpha * np.sign(g)
        x_adv = xb + np.clip(x_adv - xb, -eps, eps)
        x_adv = np.clip(x_adv, 0.0, 1.0)
    return x_adv


def train_adversarial(train: Dataset, hidden: list[int], epochs: int,
                      batch_size: int, lr: float, rng: Rng, eps: float,
                      attack_steps: int = 10,
                      attack_alpha: float | None = None) -> MLPClassifier:
    """Minibatch SGD where each batch is first perturbed by an inner
    projected-gradient attack of radius `eps`.

    eps == 0 trains on clean batches and draws nothing from the attack
    stream, so it matches `train_standard` parameter for parameter.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if attack_steps < 1:
        raise ValueError("attack_steps must be at least 1")
    sizes = [train.d] + list(hidden) + [train.K]
    params = init_mlp(sizes, rng.stream("init"))
    if eps == 0:
        craft = None
    else:
        alpha = 2.5 * eps / attack_steps if attack_alpha is None else attack_alpha
        attack_rng = rng.stream("attack")

        def craft(p, xb, yb):
            return _craft_pgd_batch(p, xb, yb, eps, attack_steps, alpha,
                                    attack_rng)

    params = _sgd_epochs(train.X, train.y, params, epochs, batch_size, lr,
                         rng.stream("shuffle"), craft_batch=craft)
    return MLPClassifier(sizes, params, rng.seed)
