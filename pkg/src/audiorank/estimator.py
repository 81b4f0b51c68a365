"""scikit-learn compatible front end for training and scoring a dual encoder."""

from types import SimpleNamespace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dual_encoder import head_forward, score_matrix
from .exceptions import ConfigError, DimensionMismatch, LengthMismatch
from .metrics import metrics_from_scores
from .objectives import LossConfig
from .relevance import DEFAULT_INTERCEPT, DEFAULT_SLOPE, RelevanceTransform
from .trainer import TrainConfig, train

OBJECTIVE_CHOICES = {
    "listnet-audio": ("listnet", "audio"),
    "listnet-text": ("listnet", "text"),
    "listnet-both": ("listnet", "audio+text"),
    "infonce": ("infonce", "audio"),
}


def loss_config_for(objective, omega=0.05, tau=0.05):
    try:
        kind, direction = OBJECTIVE_CHOICES[objective]
    except KeyError:
        raise ConfigError(f"unknown objective {objective!r}; "
                          f"choose from {sorted(OBJECTIVE_CHOICES)}") from None
    return LossConfig(omega=omega, tau=tau, direction=direction, objective=kind)


class ListwiseDualEncoder(BaseEstimator):
    """Dual encoder trained on graded caption-similarity relevances.

    ``fit`` takes paired text and audio backbone embeddings (row ``i`` of each
    describes the same pair) and, optionally, the caption sentence embeddings
    used to compute target relevances.  When omitted, the text inputs double
    as caption embeddings.

    Parameters
    ----------
    objective : {"listnet-audio", "listnet-text", "listnet-both", "infonce"}
    omega, tau : float
        Target and prediction softmax temperatures.
    transform : {"logistic", "minmax"}
    intercept, slope : float
        Logistic relevance coefficients.
    clamp_diagonal : bool
    batch_size, epochs : int
    lr_max, lr_min : float
        Cosine-annealing endpoints for Adam.
    d_hidden, d_out : int
        Projection head widths.
    random_state : int
        Seed for initialisation and shuffling.

    Attributes
    ----------
    model_ : DualEncoder
    history_ : TrainHistory
    """

    def __init__(self, objective="listnet-audio", omega=0.05, tau=0.05,
                 transform="logistic", intercept=DEFAULT_INTERCEPT, slope=DEFAULT_SLOPE,
                 clamp_diagonal=False, batch_size=32, epochs=25, lr_max=2e-5, lr_min=1e-7,
                 d_hidden=256, d_out=256, random_state=0):
        self.objective = objective
        self.omega = omega
        self.tau = tau
        self.transform = transform
        self.intercept = intercept
        self.slope = slope
        self.clamp_diagonal = clamp_diagonal
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.d_hidden = d_hidden
        self.d_out = d_out
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            lr_max=self.lr_max, lr_min=self.lr_min,
            loss=loss_config_for(self.objective, self.omega, self.tau),
            transform=RelevanceTransform(self.transform, self.intercept, self.slope),
            clamp_diagonal=self.clamp_diagonal, seed=self.random_state,
            d_hidden=self.d_hidden, d_out=self.d_out,
        )

    def fit(self, X_text, X_audio, caption_embeds=None):
        config = self._train_config()
        X_text = check_array(X_text, dtype=np.float64)
        X_audio = check_array(X_audio, dtype=np.float64)
        captions = X_text if caption_embeds is None else check_array(caption_embeds, dtype=np.float64)
        if not (X_text.shape[0] == X_audio.shape[0] == captions.shape[0]):
            raise LengthMismatch("text, audio and caption inputs must be paired row for row")
        data = SimpleNamespace(text_inputs=X_text, audio_inputs=X_audio, caption_embeds=captions)
        self.model_, self.history_ = train(data, config)
        self.n_text_features_in_ = X_text.shape[1]
        self.n_audio_features_in_ = X_audio.shape[1]
        return self

    def _check_inputs(self, X, n_features, name):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != n_features:
            raise DimensionMismatch(f"{name} has {X.shape[1]} features, expected {n_features}")
        return X

    def embed_text(self, X_text):
        """Projected caption embeddings (not normalised)."""
        check_is_fitted(self, "model_")
        X = self._check_inputs(X_text, self.n_text_features_in_, "X_text")
        return head_forward(self.model_.text_head, X)[0]

    def embed_audio(self, X_audio):
        check_is_fitted(self, "model_")
        X = self._check_inputs(X_audio, self.n_audio_features_in_, "X_audio")
        return head_forward(self.model_.audio_head, X)[0]

    def decision_function(self, X_text, X_audio):
        """Cosine score matrix, captions as rows and audio items as columns."""
        check_is_fitted(self, "model_")
        X_text = self._check_inputs(X_text, self.n_text_features_in_, "X_text")
        X_audio = self._check_inputs(X_audio, self.n_audio_features_in_, "X_audio")
        return score_matrix(self.model_, X_text, X_audio)[0]

    def predict(self, X_text, X_audio):
        """Index of the top-ranked audio item for every caption."""
        S = self.decision_function(X_text, X_audio)
        return np.argsort(-S, axis=1, kind="stable")[:, 0]

    def score(self, X_text, X_audio):
        """Text-to-audio mAP@10 when caption ``i`` is paired with audio ``i``."""
        S = self.decision_function(X_text, X_audio)
        if S.shape[0] != S.shape[1]:
            raise LengthMismatch("score() expects paired, equal-length inputs")
        ids = list(range(S.shape[0]))
        return metrics_from_scores(S, ids, ids, {i: {i} for i in ids}).map10
