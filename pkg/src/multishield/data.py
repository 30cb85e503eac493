"""Datasets, prompt sets, and the binary file formats.

All labels in public structures are 1-based: classes are 1..K and K+1 is
reserved for rejection. Files store a single-line JSON header followed by
raw little-endian payloads, so they are self-describing and diffable with
standard tools.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    """Points `X` (n, d) with 1-based integer labels `y` (n,)."""

    X: np.ndarray
    y: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int32)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("y length does not match X rows")
        K = len(self.class_names)
        if K < 2:
            raise ValueError("need at least two class names")
        bad = (self.y < 1) | (self.y > K)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(
                f"label out of range at index {i}: {int(self.y[i])} "
                f"(classes are 1..{K})")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return len(self.class_names)


def make_blobs(seed: int, K: int, d: int, n_per_class: int, spread: float,
               class_names: list[str] | None = None) -> Dataset:
    """Isotropic Gaussian blobs around uniform-random centers in [0.2, 0.8]^d.

    The centers are drawn first from a Philox generator keyed by `seed`, so a
    given seed fixes the geometry independently of the sample count.
    """
    if class_names is None:
        class_names = [f"class-{k + 1}" for k in range(K)]
    if len(class_names) != K:
        raise ValueError("class_names length must equal K")
    g = np.random.default_rng(np.random.Philox(key=seed))
    centers = g.uniform(0.2, 0.8, size=(K, d))
    parts = []
    labels = []
    for k in range(K):
        parts.append(centers[k] + g.normal(0.0, spread, size=(n_per_class, d)))
        labels.append(np.full(n_per_class, k + 1, dtype=np.int32))
    return Dataset(np.concatenate(parts), np.concatenate(labels), list(class_names))


def split_per_class(ds: Dataset, n_train_per_class: int) -> tuple[Dataset, Dataset]:
    """Deterministic stratified split: the first `n_train_per_class` points of
    each class go to train, the rest to test."""
    train_idx = []
    test_idx = []
    for k in range(1, ds.K + 1):
        idx = np.flatnonzero(ds.y == k)
        if idx.size < n_train_per_class:
            raise ValueError(
                f"class {k} has {idx.size} points, need {n_train_per_class}")
        train_idx.append(idx[:n_train_per_class])
        test_idx.append(idx[n_train_per_class:])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    return (Dataset(ds.X[tr], ds.y[tr], ds.class_names),
            Dataset(ds.X[te], ds.y[te], ds.class_names))


# ---- prompts ----

@dataclass
class PromptSet:
    """One text prompt per class, kept in class order."""

    prompts: list[str]
    class_names: list[str]

    @property
    def K(self) -> int:
        return len(self.prompts)


def build_prompts(template: str, class_names: list[str]) -> PromptSet:
    """Fill `template` with each class name. The template must contain exactly
    one `{}` placeholder."""
    if template.count("{}") != 1:
        raise ValueError(
            f"prompt template must contain exactly one {{}} placeholder, "
            f"got {template.count('{}')}: {template!r}")
    prompts = [template.replace("{}", name) for name in class_names]
    return PromptSet(prompts, list(class_names))


# ---- binary formats ----

def _write_header(f, header: dict) -> None:
    f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
    f.write(b"\n")


def _read_header(f) -> dict:
    line = f.readline()
    if not line:
        raise ValueError("empty file, expected a JSON header line")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"malformed header line: {e}") from e
    if not isinstance(header, dict):
        raise ValueError("header must be a JSON object")
    return header


def _require(header: dict, name: str, kind) -> object:
    if name not in header:
        raise ValueError(f"header is missing required field {name!r}")
    v = header[name]
    if kind is int and (not isinstance(v, int) or isinstance(v, bool)):
        raise ValueError(f"header field {name!r} must be an integer, got {v!r}")
    if kind is str and not isinstance(v, str):
        raise ValueError(f"header field {name!r} must be a string, got {v!r}")
    if kind is list and not isinstance(v, list):
        raise ValueError(f"header field {name!r} must be a list, got {v!r}")
    return v


def save_dataset(path: str, ds: Dataset) -> None:
    """Dataset file: JSON header line, then n*d float64 and n int32, all
    little-endian."""
    with open(path, "wb") as f:
        _write_header(f, {
            "d": ds.d, "K": ds.K, "n": ds.n,
            "class_names": ds.class_names,
            "endianness": "little",
        })
        f.write(np.ascontiguousarray(ds.X, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(ds.y, dtype="<i4").tobytes())


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        header = _read_header(f)
        d = _require(header, "d", int)
        K = _require(header, "K", int)
        n = _require(header, "n", int)
        class_names = _require(header, "class_names", list)
        endianness = _require(header, "endianness", str)
        if endianness != "little":
            raise ValueError(
                f"header field 'endianness' must be 'little', got {endianness!r}")
        if len(class_names) != K:
            raise ValueError(
                f"header field 'class_names' has {len(class_names)} entries, "
                f"header field 'K' says {K}")
        payload = f.read()
    want = n * d * 8 + n * 4
    if len(payload) != want:
        raise ValueError(
            f"payload is {len(payload)} bytes, fields n={n} d={d} "
            f"require {want}")
    X = np.frombuffer(payload[:n * d * 8], dtype="<f8").reshape(n, d)
    y = np.frombuffer(payload[n * d * 8:], dtype="<i4")
    bad = (y < 1) | (y > K)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"label field invalid at index {i}: {int(y[i])} is outside 1..{K} "
            f"(0 and K+1 are not storable labels)")
    return Dataset(X.astype(np.float64), y.astype(np.int32), list(class_names))


def save_embeddings(path: str, emb: np.ndarray, kind: str) -> None:
    """Embedding file: JSON header line, then count*embed_dim float64 LE."""
    if kind not in ("image", "prompt"):
        raise ValueError(f"kind must be 'image' or 'prompt', got {kind!r}")
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2:
        raise ValueError("embeddings must be 2-dimensional")
    with open(path, "wb") as f:
        _write_header(f, {
            "embed_dim": emb.shape[1], "count": emb.shape[0],
            "kind": kind, "endianness": "little",
        })
        f.write(np.ascontiguousarray(emb, dtype="<f8").tobytes())


def load_embeddings(path: str) -> tuple[np.ndarray, str]:
    with open(path, "rb") as f:
        header = _read_header(f)
        embed_dim = _require(header, "embed_dim", int)
        count = _require(header, "count", int)
        kind = _require(header, "kind", str)
        endianness = _require(header, "endianness", str)
        if endianness != "little":
            raise ValueError(
                f"header field 'endianness' must be 'little', got {endianness!r}")
        if kind not in ("image", "prompt"):
            raise ValueError(
                f"header field 'kind' must be 'image' or 'prompt', got {kind!r}")
        payload = f.read()
    want = count * embed_dim * 8
    if len(payload) != want:
        raise ValueError(
            f"payload is {len(payload)} bytes, fields count={count} "
            f"embed_dim={embed_dim} require {want}")
    emb = np.frombuffer(payload, dtype="<f8").reshape(count, embed_dim)
    return emb.astype(np.float64), kind


def write_checkpoint(path: str, header: dict, arrays: list[np.ndarray]) -> None:
    """Checkpoint file: JSON header line, then every array flattened to
    float64 LE in order."""
    flat = [np.ascontiguousarray(a, dtype="<f8").ravel() for a in arrays]
    total = int(sum(a.size for a in flat))
    full = dict(header)
    full["param_count"] = total
    full["endianness"] = "little"
    with open(path, "wb") as f:
        _write_header(f, full)
        for a in flat:
            f.write(a.tobytes())


def read_checkpoint(path: str) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as f:
        header = _read_header(f)
        count = _require(header, "param_count", int)
        endianness = _require(header, "endianness", str)
        if endianness != "little":
            raise ValueError(
                f"header field 'endianness' must be 'little', got {endianness!r}")
        payload = f.read()
    if len(payload) != count * 8:
        raise ValueError(
            f"payload is {len(payload)} bytes, field param_count={count} "
            f"requires {count * 8}")
    return header, np.frombuffer(payload, dtype="<f8").astype(np.float64)
