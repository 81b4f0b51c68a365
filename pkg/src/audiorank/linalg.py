"""Dense vector/matrix primitives: cosine similarity and temperature softmax.

All arithmetic is carried out in float64 regardless of the input dtype.
"""

import numpy as np

from .exceptions import (
    DegenerateVector,
    DimensionMismatch,
    EmptyInput,
    NonFiniteInput,
    NonPositiveTemperature,
)

#: Norms below this value mark a vector as corrupt rather than "zero similarity".
DEGENERATE_NORM = 1e-12


def as_matrix(values, name="matrix"):
    """Return `values` as a finite 2-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} contains NaN or Inf")
    return arr


def cosine_similarity(a, b):
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector lengths differ: {a.size} != {b.size}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na < DEGENERATE_NORM or nb < DEGENERATE_NORM:
        raise DegenerateVector("vector norm below 1e-12")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def row_norms(A, name="matrix"):
    """Euclidean norm of each row; raises DegenerateVector on the first bad row."""
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    bad = np.flatnonzero(norms < DEGENERATE_NORM)
    if bad.size:
        raise DegenerateVector(
            f"row {bad[0]} of {name} has norm below 1e-12", index=int(bad[0])
        )
    return norms


def pairwise_cosine(A, B):
    """Matrix of cosine similarities between the rows of `A` (n x d) and `B` (m x d)."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(
            f"inner dimensions differ: {A.shape[1]} != {B.shape[1]}"
        )
    An = A / row_norms(A, "A")[:, None]
    Bn = B / row_norms(B, "B")[:, None]
    return np.clip(An @ Bn.T, -1.0, 1.0)


def _check_temperature(temperature):
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")


def log_softmax(scores, temperature, axis=-1):
    """Log of :func:`stable_softmax`, computed without forming the softmax."""
    _check_temperature(temperature)
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or s.shape[axis] == 0:
        raise EmptyInput("softmax over an empty axis")
    if not np.all(np.isfinite(s)):
        raise NonFiniteInput("scores contain NaN or Inf")
    z = (s - s.max(axis=axis, keepdims=True)) / temperature
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def stable_softmax(scores, temperature=1.0, axis=-1):
    """Temperature softmax with max-subtraction.

    Works on vectors, or along `axis` for higher-rank input.

    >>> stable_softmax([0.0, 0.0])
    array([0.5, 0.5])
    """
    _check_temperature(temperature)
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or s.shape[axis] == 0:
        raise EmptyInput("softmax over an empty axis")
    if not np.all(np.isfinite(s)):
        raise NonFiniteInput("scores contain NaN or Inf")
    e = np.exp((s - s.max(axis=axis, keepdims=True)) / temperature)
    return e / e.sum(axis=axis, keepdims=True)
