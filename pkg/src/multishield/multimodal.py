"""A miniature dual-encoder vision-language model.

The image tower is a ReLU MLP mapping inputs to an embedding space. The text
tower maps each prompt string to a fixed token vector (a deterministic hash
of the string, documented below) and pushes it through a trainable affine
head in the same embedding space. Training minimizes a symmetric contrastive
loss at a learnable temperature; zero-shot classification picks the prompt
with the highest cosine alignment.

Token vectors: component i of the vector for prompt `s` is
`blake2b(f"{s}|{i}", digest_size=8)` read as a little-endian unsigned
integer, scaled to [-1, 1). The same prompt always produces the same vector,
so checkpoints only need to store the prompt strings.

Alignment scores exposed to the rest of the package are raw cosines in
[-1, 1]; the temperature only scales the training loss.
"""

from __future__ import annotations

import hashlib
import logging
import math

import numpy as np

from .autodiff import Node, Tape
from .data import Dataset, PromptSet, read_checkpoint, write_checkpoint
from .mlp import Params, init_mlp, mlp_forward
from .rng import Rng

log = logging.getLogger(__name__)


def prompt_token_vector(prompt: str, embed_dim: int) -> np.ndarray:
    out = np.empty(embed_dim, dtype=np.float64)
    for i in range(embed_dim):
        digest = hashlib.blake2b(f"{prompt}|{i}".encode("utf-8"),
                                 digest_size=8).digest()
        u = int.from_bytes(digest, "little") / 2.0 ** 64
        out[i] = 2.0 * u - 1.0
    return out


def _token_table(prompts: list[str], embed_dim: int) -> np.ndarray:
    return np.stack([prompt_token_vector(p, embed_dim) for p in prompts])


class DualEncoder:
    """Image tower + hashed-token text head, compared by cosine."""

    differentiable = True

    def __init__(self, img_sizes: list[int], img_params: Params,
                 Wt: np.ndarray, bt: np.ndarray, log_tau: np.ndarray,
                 prompts: list[str], class_names: list[str], seed: int):
        self.img_sizes = list(img_sizes)
        self.img_params = img_params
        self.Wt = Wt
        self.bt = bt
        self.log_tau = np.asarray(log_tau, dtype=np.float64).reshape(1)
        self.prompts = list(prompts)
        self.class_names = list(class_names)
        self.seed = int(seed)
        self.tokens = _token_table(self.prompts, self.embed_dim)

    @property
    def d(self) -> int:
        return self.img_sizes[0]

    @property
    def embed_dim(self) -> int:
        return self.img_sizes[-1]

    @property
    def K(self) -> int:
        return len(self.prompts)

    # ---- plain numpy paths ----

    def encode_image(self, X: np.ndarray) -> np.ndarray:
        return mlp_forward(self.img_params, X)

    def encode_prompts(self) -> np.ndarray:
        return self.tokens @ self.Wt + self.bt

    def _normalized_prompts(self) -> np.ndarray:
        T = self.encode_prompts()
        norms = np.sqrt((T * T).sum(axis=1, keepdims=True))
        if (norms == 0.0).any():
            raise ValueError("degenerate embedding: a prompt embedding has zero norm")
        return T / norms

    def alignment_scores(self, X: np.ndarray) -> np.ndarray:
        """Cosine between each image embedding and every prompt embedding,
        shape (n, K)."""
        U = np.atleast_2d(self.encode_image(np.asarray(X, dtype=np.float64)))
        norms = np.sqrt((U * U).sum(axis=1, keepdims=True))
        if (norms == 0.0).any():
            raise ValueError("degenerate embedding: an image embedding has zero norm")
        return (U / norms) @ self._normalized_prompts().T

    def zero_shot_predict(self, X: np.ndarray) -> np.ndarray:
        scores = np.atleast_2d(self.alignment_scores(X))
        return (scores.argmax(axis=1) + 1).astype(np.int32)

    # ---- taped path for input gradients ----

    def alignment_node(self, tape: Tape, x_node: Node) -> Node:
        """Alignment scores as a tape node, (n, K). Prompt embeddings enter
        as constants; gradients flow through the image tower only."""
        h = x_node
        last = len(self.img_params) - 1
        for i, (W, b) in enumerate(self.img_params):
            h = tape.add(tape.matmul(h, tape.input(W)), tape.input(b))
            if i < last:
                h = tape.relu(h)
        norm = tape.l2norm_rows(h)
        if (norm.value == 0.0).any():
            raise ValueError("degenerate embedding: an image embedding has zero norm")
        u_n = tape.div(h, norm)
        t_n = tape.input(self._normalized_prompts())
        return tape.matmul(u_n, tape.transpose(t_n))

    # ---- persistence ----

    def save(self, path: str) -> None:
        write_checkpoint(path, {
            "kind": "dual-encoder",
            "architecture": self.img_sizes,
            "d": self.d, "K": self.K,
            "embed_dim": self.embed_dim,
            "prompts": self.prompts,
            "class_names": self.class_names,
            "seed": self.seed,
        }, [a for W, b in self.img_params for a in (W, b)]
           + [self.Wt, self.bt, self.log_tau])

    @classmethod
    def load(cls, path: str) -> "DualEncoder":
        header, flat = read_checkpoint(path)
        if header.get("kind") != "dual-encoder":
            raise ValueError(
                f"header field 'kind' must be 'dual-encoder', "
                f"got {header.get('kind')!r}")
        sizes = header.get("architecture")
        if (not isinstance(sizes, list) or len(sizes) < 2
                or not all(isinstance(s, int) for s in sizes)):
            raise ValueError("header field 'architecture' must be a list of ints")
        prompts = header.get("prompts")
        class_names = header.get("class_names")
        if not isinstance(prompts, list) or not prompts:
            raise ValueError("header field 'prompts' must be a non-empty list")
        if not isinstance(class_names, list) or len(class_names) != len(prompts):
            raise ValueError(
                "header field 'class_names' must match 'prompts' in length")
        e = sizes[-1]
        img_count = sum(fi * fo + fo for fi, fo in zip(sizes[:-1], sizes[1:]))
        want = img_count + e * e + e + 1
        if flat.size != want:
            raise ValueError(
                f"checkpoint holds {flat.size} parameters, architecture "
                f"{sizes} requires {want}")
        pos = 0
        img_params: Params = []
        for fi, fo in zip(sizes[:-1], sizes[1:]):
            W = flat[pos:pos + fi * fo].reshape(fi, fo).copy()
            pos += fi * fo
            b = flat[pos:pos + fo].copy()
            pos += fo
            img_params.append((W, b))
        Wt = flat[pos:pos + e * e].reshape(e, e).copy()
        pos += e * e
        bt = flat[pos:pos + e].copy()
        pos += e
        log_tau = flat[pos:pos + 1].copy()
        return cls(sizes, img_params, Wt, bt, log_tau, prompts, class_names,
                   int(header.get("seed", 0)))


def train_dual_encoder(train: Dataset, prompt_set: PromptSet,
                       hidden: list[int], embed_dim: int, epochs: int,
                       batch_size: int, lr: float, rng: Rng) -> DualEncoder:
    """Symmetric contrastive training.

    Image-to-text: softmax cross-entropy of each image's scores over the K
    prompts. Text-to-image: for each class present in the batch, softmax
    that prompt's scores over the batch with the class's images as
    positives. Both directions share one learnable temperature (initialized
    to 0.07, optimized as its log). A batch containing a single distinct
    class gives the text direction nothing to contrast, so it is skipped and
    logged.
    """
    if prompt_set.K != train.K:
        raise ValueError("prompt count does not match class count")
    sizes = [train.d] + list(hidden) + [embed_dim]
    img_params = init_mlp(sizes, rng.stream("init"))
    head_rng = rng.stream("head")
    Wt = head_rng.normal(size=(embed_dim, embed_dim)) / math.sqrt(embed_dim)
    bt = np.zeros(embed_dim, dtype=np.float64)
    log_tau = np.array([math.log(0.07)])
    tokens = _token_table(prompt_set.prompts, embed_dim)
    shuffle = rng.stream("shuffle")
    n = train.n
    skipped = 0

    for epoch in range(epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yb = train.y[idx]
            if np.unique(yb).size < 2:
                skipped += 1
                log.warning(
                    "skipping single-class batch (epoch %d, batch start %d)",
                    epoch, start)
                continue
            tape = Tape()
            param_nodes = []
            h = tape.input(train.X[idx])
            last = len(img_params) - 1
            for i, (W, b) in enumerate(img_params):
                Wn, bn = tape.input(W), tape.input(b)
                param_nodes += [Wn, bn]
                h = tape.add(tape.matmul(h, Wn), bn)
                if i < last:
                    h = tape.relu(h)
            norm = tape.l2norm_rows(h)
            if (norm.value == 0.0).any():
                raise ValueError(
                    "degenerate embedding: an image embedding has zero norm")
            u_n = tape.div(h, norm)
            Wt_n, bt_n = tape.input(Wt), tape.input(bt)
            lt_n = tape.input(log_tau)
            param_nodes += [Wt_n, bt_n, lt_n]
            t_emb = tape.add(tape.matmul(tape.input(tokens), Wt_n), bt_n)
            t_norm = tape.l2norm_rows(t_emb)
            if (t_norm.value == 0.0).any():
                raise ValueError(
                    "degenerate embedding: a prompt embedding has zero norm")
            t_n = tape.div(t_emb, t_norm)
            cos = tape.matmul(u_n, tape.transpose(t_n))
            inv_tau = tape.exp(tape.scale(lt_n, -1.0))
            s = tape.mul(cos, inv_tau)
            i2t = tape.softmax_cross_entropy(s, yb)
            t2i = tape.multi_positive_nce(s, yb)
            loss = tape.scale(tape.add(i2t, t2i), 0.5)
            grads = tape.gradient(loss, param_nodes)
            for i in range(len(img_params)):
                W, b = img_params[i]
                img_params[i] = (W - lr * grads[2 * i], b - lr * grads[2 * i + 1])
            Wt = Wt - lr * grads[-3]
            bt = bt - lr * grads[-2]
            log_tau = log_tau - lr * grads[-1]

    if skipped:
        log.info("skipped %d single-class batches in total", skipped)
    return DualEncoder(sizes, img_params, Wt, bt, log_tau,
                       prompt_set.prompts, prompt_set.class_names, rng.seed)


class FrozenEncoder:
    """Alignment scores served from precomputed embedding files.

    Supports decisions and clean evaluation by sample index; it cannot embed
    novel inputs and offers no input gradients, so gradient attacks on the
    alignment side are unavailable.
    """

    differentiable = False

    def __init__(self, image_embeddings: np.ndarray,
                 prompt_embeddings: np.ndarray):
        self.image_embeddings = np.asarray(image_embeddings, dtype=np.float64)
        self.prompt_embeddings = np.asarray(prompt_embeddings, dtype=np.float64)
        if self.image_embeddings.ndim != 2 or self.prompt_embeddings.ndim != 2:
            raise ValueError("embeddings must be 2-dimensional")
        if self.image_embeddings.shape[1] != self.prompt_embeddings.shape[1]:
            raise ValueError(
                f"image embed_dim {self.image_embeddings.shape[1]} does not "
                f"match prompt embed_dim {self.prompt_embeddings.shape[1]}")
        norms = np.sqrt((self.prompt_embeddings ** 2).sum(axis=1, keepdims=True))
        if (norms == 0.0).any():
            raise ValueError("degenerate embedding: a prompt embedding has zero norm")
        self._t_n = self.prompt_embeddings / norms

    @property
    def K(self) -> int:
        return self.prompt_embeddings.shape[0]

    @property
    def count(self) -> int:
        return self.image_embeddings.shape[0]

    def alignment_scores_by_index(self, indices) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        if (idx < 0).any() or (idx >= self.count).any():
            raise IndexError(
                f"sample index out of range 0..{self.count - 1}")
        U = self.image_embeddings[idx]
        norms = np.sqrt((U * U).sum(axis=1, keepdims=True))
        if (norms == 0.0).any():
            raise ValueError("degenerate embedding: an image embedding has zero norm")
        return (U / norms) @ self._t_n.T

    def zero_shot_predict_by_index(self, indices) -> np.ndarray:
        scores = self.alignment_scores_by_index(indices)
        return (scores.argmax(axis=1) + 1).astype(np.int32)
