"""Graded audio-caption relevance from caption-embedding similarity.

The relevance of audio ``y_j`` to caption ``x_i`` is a monotone function of
the cosine similarity between ``x_i`` and the caption annotated for ``y_j``.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, OutOfDomain, ShapeMismatch
from .linalg import pairwise_cosine

DEFAULT_INTERCEPT = 2.73
DEFAULT_SLOPE = 4.58

_DOMAIN_SLACK = 1e-9


def _check_domain(h):
    h = np.asarray(h, dtype=np.float64)
    if np.any(np.abs(h) > 1.0 + _DOMAIN_SLACK) or not np.all(np.isfinite(h)):
        raise OutOfDomain("similarity values must lie in [-1, 1]")
    return np.clip(h, -1.0, 1.0)


def logistic_transform(h, intercept=DEFAULT_INTERCEPT, slope=DEFAULT_SLOPE):
    """``1 / (1 + exp(intercept - slope * h))``, elementwise.

    Returns a float for scalar input and an array otherwise.
    """
    h = _check_domain(h)
    out = 1.0 / (1.0 + np.exp(intercept - slope * h))
    return float(out) if out.ndim == 0 else out


def minmax_transform(h):
    """Rescale the theoretical cosine range [-1, 1] onto [0, 1]."""
    h = _check_domain(h)
    out = (h + 1.0) / 2.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RelevanceTransform:
    """Monotone map from similarity to relevance.

    ``kind`` is ``"logistic"`` or ``"minmax"``; the coefficients are only used
    by the logistic variant.
    """

    kind: str = "logistic"
    intercept: float = DEFAULT_INTERCEPT
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if self.kind not in ("logistic", "minmax"):
            raise ConfigError(f"unknown relevance transform {self.kind!r}")
        if self.kind == "logistic" and self.slope < 0:
            # a negative slope would make the map decreasing
            raise ConfigError("logistic slope must be >= 0")

    def __call__(self, h):
        if self.kind == "minmax":
            return minmax_transform(h)
        return logistic_transform(h, self.intercept, self.slope)


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    row_ids: list = field(default_factory=list)
    col_ids: list = field(default_factory=list)


@dataclass
class RelevanceMatrix:
    """Target relevances; rows are query captions, columns are audio items."""

    values: np.ndarray
    row_ids: list = field(default_factory=list)
    col_ids: list = field(default_factory=list)


def textual_similarity(caption_embeds_a, caption_embeds_b, row_ids=None, col_ids=None):
    """Cosine similarity between every pair of caption embeddings."""
    values = pairwise_cosine(caption_embeds_a, caption_embeds_b)
    n, m = values.shape
    row_ids = list(range(n)) if row_ids is None else list(row_ids)
    col_ids = list(range(m)) if col_ids is None else list(col_ids)
    if len(row_ids) != n or len(col_ids) != m:
        raise ShapeMismatch("id lists do not match the similarity matrix shape")
    return SimilarityMatrix(values, row_ids, col_ids)


def relevance_matrix(sim, transform=None, audio_ids=None, clamp_diagonal=False):
    """Apply `transform` elementwise to a similarity matrix.

    Column ``j`` of `sim` is taken to be the annotated caption of audio ``j``,
    so the result's columns are relabelled with `audio_ids` when given.
    The annotated pairs are left at ``f(1)`` unless `clamp_diagonal` is set,
    in which case the main diagonal is forced to 1.
    """
    transform = transform or RelevanceTransform()
    if isinstance(sim, SimilarityMatrix):
        values, row_ids, col_ids = sim.values, sim.row_ids, sim.col_ids
    else:
        values = np.asarray(sim, dtype=np.float64)
        row_ids = list(range(values.shape[0]))
        col_ids = list(range(values.shape[1]))
    rel = np.asarray(transform(values), dtype=np.float64)
    if clamp_diagonal:
        rel = rel.copy()
        np.fill_diagonal(rel, 1.0)
    if audio_ids is not None:
        col_ids = list(audio_ids)
    return RelevanceMatrix(rel, list(row_ids), list(col_ids))


class RelevanceTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer turning caption embeddings into a relevance matrix.

    ``fit`` stores the annotated-caption embeddings (one row per audio item);
    ``transform`` maps query caption embeddings to relevances against them.

    Parameters
    ----------
    kind : {"logistic", "minmax"}
    intercept, slope : float
        Logistic coefficients.
    clamp_diagonal : bool
        Force the annotated pairs to relevance 1 (only meaningful when the
        queries are the fitted captions themselves).
    """

    def __init__(self, kind="logistic", intercept=DEFAULT_INTERCEPT,
                 slope=DEFAULT_SLOPE, clamp_diagonal=False):
        self.kind = kind
        self.intercept = intercept
        self.slope = slope
        self.clamp_diagonal = clamp_diagonal

    def fit(self, X, y=None):
        self.reference_ = check_array(X, dtype=np.float64)
        self.transform_ = RelevanceTransform(self.kind, self.intercept, self.slope)
        self.n_features_in_ = self.reference_.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "reference_")
        X = check_array(X, dtype=np.float64)
        sim = textual_similarity(X, self.reference_)
        return relevance_matrix(sim, self.transform_, clamp_diagonal=self.clamp_diagonal).values
