"""Listwise (ListNet) and contrastive (InfoNCE) objectives over in-batch lists.

Every loss returns its value together with the exact gradient with respect to
the predicted score matrix; rows index captions and columns index audio items.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, LengthMismatch, NonSquareBatch, ShapeMismatch
from .linalg import log_softmax, stable_softmax

DIRECTIONS = ("audio", "text", "audio+text")
OBJECTIVES = ("listnet", "infonce")


@dataclass(frozen=True)
class LossConfig:
    """Temperatures and routing for the training objective.

    ``direction`` selects which lists are ranked: ``"audio"`` ranks audio
    items for each caption (rows), ``"text"`` ranks captions for each audio
    item (columns), ``"audio+text"`` sums both.  InfoNCE ignores
    ``direction`` and ``omega``.
    """

    omega: float = 0.05
    tau: float = 0.05
    direction: str = "audio"
    objective: str = "listnet"

    def __post_init__(self):
        if not (self.omega > 0 and self.tau > 0):
            raise ConfigError("temperatures must be positive")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")


@dataclass
class LossResult:
    loss: float
    grad_scores: np.ndarray


def target_distribution(relevance_row, omega=0.05):
    """Top-one probabilities implied by graded relevances."""
    return stable_softmax(relevance_row, omega)


def predicted_distribution(score_row, tau=0.05):
    """Top-one probabilities implied by model scores."""
    return stable_softmax(score_row, tau)


def listnet_loss(P, Q):
    """Cross-entropy ``-sum(p * ln q)`` between two top-one distributions."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise LengthMismatch(f"distribution lengths differ: {P.shape} != {Q.shape}")
    return float(-np.sum(P * np.log(Q)))


def _rowwise_cross_entropy(P, S, tau):
    """Mean over rows of CE(P_i, softmax(S_i / tau)) and its gradient in S."""
    n = S.shape[0]
    logQ = log_softmax(S, tau, axis=1)
    loss = -np.sum(P * logQ) / n
    grad = (np.exp(logQ) - P) / (tau * n)
    return loss, grad


def _check_square(G, S):
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NonSquareBatch(f"score matrix must be square, got {S.shape}")
    if G is not None and G.shape != S.shape:
        raise ShapeMismatch(f"relevance {G.shape} and score {S.shape} shapes differ")


def listnet_from_targets(P_rows, P_cols, S, tau, direction="audio+text"):
    """ListNet loss given explicit target distributions.

    `P_rows` holds one target distribution per row of `S` (audio direction);
    `P_cols` holds one per column, stored column-wise (text direction).
    """
    S = np.asarray(S, dtype=np.float64)
    _check_square(None, S)
    loss = 0.0
    grad = np.zeros_like(S)
    if direction in ("audio", "audio+text"):
        l_a, g_a = _rowwise_cross_entropy(np.asarray(P_rows, dtype=np.float64), S, tau)
        loss += l_a
        grad += g_a
    if direction in ("text", "audio+text"):
        l_t, g_t = _rowwise_cross_entropy(np.asarray(P_cols, dtype=np.float64).T, S.T, tau)
        loss += l_t
        grad += g_t.T
    return LossResult(float(loss), grad)


def listnet_direction_loss(G, S, config=None):
    """In-batch ListNet loss between target relevances `G` and scores `S`.

    Both matrices are N x N with row ``i`` = caption ``x_i`` and column ``j`` =
    audio ``y_j``.  Losses are averaged over the ranked lists; the
    ``"audio+text"`` direction is the unweighted sum of the two directions.
    """
    config = config or LossConfig()
    G = np.asarray(G, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    _check_square(G, S)
    P_rows = stable_softmax(G, config.omega, axis=1)
    P_cols = stable_softmax(G, config.omega, axis=0)
    return listnet_from_targets(P_rows, P_cols, S, config.tau, config.direction)


def infonce_loss(S, tau=0.05):
    """Symmetric InfoNCE with the diagonal of `S` as the positive pairs.

    ``0.5 * (mean_i -ln softmax(S_i / tau)_i + mean_j -ln softmax(S_:j / tau)_j)``
    """
    S = np.asarray(S, dtype=np.float64)
    _check_square(None, S)
    n = S.shape[0]
    log_q_rows = log_softmax(S, tau, axis=1)
    log_q_cols = log_softmax(S, tau, axis=0)
    loss = -0.5 * (np.trace(log_q_rows) + np.trace(log_q_cols)) / n
    eye = np.eye(n)
    grad = (np.exp(log_q_rows) - eye + np.exp(log_q_cols) - eye) / (2.0 * tau * n)
    return LossResult(float(loss), grad)


def batch_loss(G, S, config):
    """Dispatch on ``config.objective``."""
    if config.objective == "infonce":
        return infonce_loss(S, config.tau)
    return listnet_direction_loss(G, S, config)


def degenerate_equivalence_check(S, tau=0.05, atol=1e-9):
    """True when one-hot-target ListNet (both directions) equals 2x InfoNCE.

    With binary relevance every target distribution puts all mass on the
    annotated pair, which makes the two objectives the same formula.
    """
    S = np.asarray(S, dtype=np.float64)
    _check_square(None, S)
    eye = np.eye(S.shape[0])
    listnet = listnet_from_targets(eye, eye, S, tau, "audio+text").loss
    infonce = infonce_loss(S, tau).loss
    return bool(abs(listnet - 2.0 * infonce) <= atol)
