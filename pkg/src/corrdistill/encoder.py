"""Projection heads mapping feature vectors to unit-norm embeddings.

A head is a stack of affine layers with ReLU between them and an L2
normalisation at the end. Gradients are computed by hand in
:func:`forward_backward`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateEmbeddingError, ShapeError
from .numerics import NORM_EPS, as_matrix, col_sums, matmul, row_sums

DEFAULT_HIDDEN = (256,)
DEFAULT_EMBED_DIM = 64
ACTIVATION = "relu"


@dataclass
class EncoderParams:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = ACTIVATION

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        check_layer_dims(self.layer_dims)
        if self.activation != ACTIVATION:
            raise ConfigError(f"unsupported activation {self.activation!r}")
        n = len(self.layer_dims) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise ShapeError(f"expected {n} weight/bias pairs")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != want or b.shape != (want[0],):
                raise ShapeError(f"layer {l}: weight {w.shape}, bias {b.shape}, expected {want}")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def embed_dim(self) -> int:
        return self.layer_dims[-1]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays) -> "EncoderParams":
        arrays = list(arrays)
        return EncoderParams(self.layer_dims, arrays[0::2], arrays[1::2], self.activation)

    def copy(self) -> "EncoderParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vec) -> "EncoderParams":
        vec = np.asarray(vec, dtype=np.float64)
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != vec.size:
            raise ShapeError(f"vector has {vec.size} entries, params need {pos}")
        return self.with_arrays(arrays)

    def equals(self, other: "EncoderParams") -> bool:
        """Bit-for-bit equality."""
        return self.layer_dims == other.layer_dims and all(
            a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )


def check_layer_dims(layer_dims) -> None:
    if len(layer_dims) < 2:
        raise ConfigError(f"layer_dims needs at least input and output size, got {layer_dims}")
    if any(d < 1 for d in layer_dims):
        raise ConfigError(f"layer sizes must be positive, got {layer_dims}")
    if layer_dims[-1] < 2:
        raise ConfigError(f"embedding dimension must be >= 2, got {layer_dims[-1]}")


def init_params(layer_dims, seed: int) -> EncoderParams:
    """Uniform(+-sqrt(6 / fan_in)) weights, zero biases."""
    layer_dims = [int(d) for d in layer_dims]
    check_layer_dims(layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(layer_dims, weights, biases)


def forward_with_cache(params: EncoderParams, features):
    """Embed ``features`` and keep the activations :func:`backward` needs."""
    x = as_matrix(features)
    if x.shape[1] != params.layer_dims[0]:
        raise ShapeError(f"features have {x.shape[1]} columns, encoder expects {params.layer_dims[0]}")
    inputs, pre = [], []
    h = x
    last = params.num_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = matmul(h, w.T) + b
        pre.append(z)
        h = np.maximum(z, 0.0) if l < last else z
    norms = np.sqrt(row_sums(h * h))
    bad = np.flatnonzero(~(norms >= NORM_EPS))
    if bad.size:
        raise DegenerateEmbeddingError(f"embedding row {int(bad[0])} has norm {norms[bad[0]]:.3g}")
    emb = h / norms[:, None]
    return emb, (inputs, pre, norms, emb)


def forward(params: EncoderParams, features) -> np.ndarray:
    """Embed a batch of feature rows; every output row has unit norm."""
    return forward_with_cache(params, features)[0]


def backward(params: EncoderParams, cache, upstream) -> list[np.ndarray]:
    """Parameter gradients, ordered like ``params.arrays()``.

    ``upstream`` is dL/d(embeddings). ReLU uses subgradient 0 at exactly 0.
    """
    inputs, pre, norms, emb = cache
    g = as_matrix(upstream)
    if g.shape != emb.shape:
        raise ShapeError(f"upstream gradient {g.shape} does not match embeddings {emb.shape}")
    # through y = h / |h|
    proj = row_sums(emb * g)
    delta = (g - emb * proj[:, None]) / norms[:, None]
    n = params.num_layers
    grads = [None] * (2 * n)
    for l in range(n - 1, -1, -1):
        if l < n - 1:
            delta = delta * (pre[l] > 0.0)
        grads[2 * l] = matmul(delta.T, inputs[l])
        grads[2 * l + 1] = col_sums(delta)
        if l > 0:
            delta = matmul(delta, params.weights[l])
    return grads


def forward_backward(params: EncoderParams, features, upstream):
    """Return ``(embeddings, grads)`` with ``grads`` ordered like ``params.arrays()``."""
    emb, cache = forward_with_cache(params, features)
    return emb, backward(params, cache, upstream)
