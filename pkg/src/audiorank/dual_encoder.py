"""Dual encoder: two affine-ReLU-affine projection heads scored by cosine.

Backbone embeddings (audio and text) are given; only the heads are trained.
Gradients are derived by hand, from the score-matrix gradient back through
the cosine normalisation and both heads.
"""

from dataclasses import dataclass, field

import numpy as np

from ._random import stream
from .exceptions import DimensionMismatch, InvalidDimension, ShapeMismatch, StaleCache
from .linalg import as_matrix, row_norms

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class ProjectionHead:
    W1: np.ndarray  # d_in x d_hidden
    b1: np.ndarray
    W2: np.ndarray  # d_hidden x d_out
    b2: np.ndarray

    @property
    def d_in(self):
        return self.W1.shape[0]

    @property
    def d_hidden(self):
        return self.W1.shape[1]

    @property
    def d_out(self):
        return self.W2.shape[1]

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self):
        return ProjectionHead(*(p.copy() for p in self.params()))


@dataclass
class HeadCache:
    inputs: np.ndarray
    pre_activation: np.ndarray
    hidden: np.ndarray


@dataclass
class DualEncoder:
    audio_head: ProjectionHead
    text_head: ProjectionHead
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.audio_head.d_out != self.text_head.d_out:
            raise DimensionMismatch("audio and text heads must share d_out")

    @property
    def dims(self):
        """(d_audio, d_text, d_hidden, d_out)."""
        return (self.audio_head.d_in, self.text_head.d_in,
                self.audio_head.d_hidden, self.audio_head.d_out)

    def params(self):
        """All eight parameter arrays: audio head then text head, W1 b1 W2 b2 each."""
        return self.audio_head.params() + self.text_head.params()

    def mark_updated(self):
        self.version += 1

    def copy(self):
        return DualEncoder(self.audio_head.copy(), self.text_head.copy())


@dataclass
class ScoreCache:
    text: HeadCache
    audio: HeadCache
    text_unit: np.ndarray
    audio_unit: np.ndarray
    text_norms: np.ndarray
    audio_norms: np.ndarray
    version: int


def head_forward(head, inputs):
    """``ReLU(inputs @ W1 + b1) @ W2 + b2`` and the activations needed by backprop."""
    X = as_matrix(inputs, "inputs")
    if X.shape[1] != head.d_in:
        raise DimensionMismatch(f"input dim {X.shape[1]} != head input dim {head.d_in}")
    Z = X @ head.W1 + head.b1
    H = np.maximum(Z, 0.0)
    return H @ head.W2 + head.b2, HeadCache(X, Z, H)


def head_backward(head, cache, grad_out):
    """Gradients (dW1, db1, dW2, db2) of a head given d(loss)/d(outputs)."""
    dW2 = cache.hidden.T @ grad_out
    db2 = grad_out.sum(axis=0)
    dZ = (grad_out @ head.W2.T) * (cache.pre_activation > 0)
    dW1 = cache.inputs.T @ dZ
    db1 = dZ.sum(axis=0)
    return [dW1, db1, dW2, db2]


def score_matrix(model, text_in, audio_in):
    """Cosine scores between projected captions (rows) and audio items (columns)."""
    U, text_cache = head_forward(model.text_head, text_in)
    V, audio_cache = head_forward(model.audio_head, audio_in)
    nu = row_norms(U, "text projections")
    nv = row_norms(V, "audio projections")
    Un = U / nu[:, None]
    Vn = V / nv[:, None]
    S = np.clip(Un @ Vn.T, -1.0, 1.0)
    return S, ScoreCache(text_cache, audio_cache, Un, Vn, nu, nv, model.version)


def backward(model, cache, grad_scores):
    """Parameter gradients for all eight tensors, in :meth:`DualEncoder.params` order.

    For ``s = cos(u, v)``: ``ds/du = v / (|u||v|) - s * u / |u|^2``, applied
    here in the equivalent projected form on the unit vectors.
    """
    if cache.version != model.version:
        raise StaleCache("parameters changed since the forward pass")
    grad_scores = np.asarray(grad_scores, dtype=np.float64)
    expected = (cache.text_unit.shape[0], cache.audio_unit.shape[0])
    if grad_scores.shape != expected:
        raise ShapeMismatch(f"grad_scores shape {grad_scores.shape} != {expected}")
    Un, Vn = cache.text_unit, cache.audio_unit
    dUn = grad_scores @ Vn
    dVn = grad_scores.T @ Un
    dU = (dUn - np.einsum("ij,ij->i", dUn, Un)[:, None] * Un) / cache.text_norms[:, None]
    dV = (dVn - np.einsum("ij,ij->i", dVn, Vn)[:, None] * Vn) / cache.audio_norms[:, None]
    audio_grads = head_backward(model.audio_head, cache.audio, dV)
    text_grads = head_backward(model.text_head, cache.text, dU)
    return audio_grads + text_grads


def _init_head(rng, d_in, d_hidden, d_out):
    b1 = 1.0 / np.sqrt(d_in)
    b2 = 1.0 / np.sqrt(d_hidden)
    return ProjectionHead(
        rng.uniform(-b1, b1, size=(d_in, d_hidden)),
        np.zeros(d_hidden),
        rng.uniform(-b2, b2, size=(d_hidden, d_out)),
        np.zeros(d_out),
    )


def init_model(seed, d_a, d_t, d_hidden=256, d_out=256):
    """Fan-in uniform weights, zero biases; a pure function of the arguments."""
    for name, d in (("d_a", d_a), ("d_t", d_t), ("d_hidden", d_hidden), ("d_out", d_out)):
        if int(d) != d or d < 1:
            raise InvalidDimension(f"{name} must be a positive integer, got {d}")
    rng = stream(seed, "init")
    audio = _init_head(rng, d_a, d_hidden, d_out)
    text = _init_head(rng, d_t, d_hidden, d_out)
    return DualEncoder(audio, text)
