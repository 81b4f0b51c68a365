"""Retrieval evaluation: ranking, AP@10, R@k, run aggregation and paired t-tests."""

import math
from dataclasses import dataclass, field

import numpy as np

from .dual_encoder import score_matrix
from .exceptions import (
    ConfigError,
    EmptyRelevantSet,
    InvalidDf,
    LengthMismatch,
    ZeroVariance,
)

CUTOFF = 10
RECALL_KS = (1, 5, 10)
METRIC_NAMES = ("mAP@10", "R@1", "R@5", "R@10")


@dataclass
class RankedResult:
    query_id: object
    item_ids: list
    scores: np.ndarray


def rank_items(score_row, item_ids=None, query_id=None):
    """Sort items by descending score; ties keep ascending item index."""
    scores = np.asarray(score_row, dtype=np.float64)
    if item_ids is None:
        item_ids = list(range(scores.size))
    elif len(item_ids) != scores.size:
        raise LengthMismatch("score_row and item_ids differ in length")
    order = np.argsort(-scores, kind="stable")
    return RankedResult(query_id, [item_ids[i] for i in order], scores[order])


def _hits(ranked, relevant):
    if not relevant:
        raise EmptyRelevantSet(f"query {ranked.query_id!r} has no relevant items")
    return np.array([item in relevant for item in ranked.item_ids], dtype=bool)


def average_precision_at_10(ranked, relevant):
    """Sum of precision@r over relevant ranks r <= 10, over min(|relevant|, 10)."""
    relevant = set(relevant)
    hits = _hits(ranked, relevant)[:CUTOFF]
    if not hits.any():
        return 0.0
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, ranks.size + 1) / ranks
    return float(precisions.sum() / min(len(relevant), CUTOFF))


def recall_at_k(ranked, relevant, k):
    if k < 1:
        raise ConfigError("k must be >= 1")
    relevant = set(relevant)
    hits = _hits(ranked, relevant)
    return float(hits[:k].sum() / len(relevant))


@dataclass
class MetricReport:
    """Single-run metrics plus the per-query AP@10 values behind ``mAP@10``."""

    metrics: dict
    query_ids: list
    per_query_ap: np.ndarray
    per_query_recall: dict = field(default_factory=dict)

    @property
    def map10(self):
        return self.metrics["mAP@10"]


def metrics_from_scores(scores, query_ids, item_ids, qrels):
    """Rank every row of `scores` and compute AP@10 and R@k per query."""
    scores = np.asarray(scores, dtype=np.float64)
    aps = np.empty(len(query_ids))
    recalls = {k: np.empty(len(query_ids)) for k in RECALL_KS}
    for q, qid in enumerate(query_ids):
        ranked = rank_items(scores[q], item_ids, qid)
        relevant = qrels[qid]
        aps[q] = average_precision_at_10(ranked, relevant)
        for k in RECALL_KS:
            recalls[k][q] = recall_at_k(ranked, relevant, k)
    metrics = {"mAP@10": float(aps.mean())}
    metrics.update({f"R@{k}": float(recalls[k].mean()) for k in RECALL_KS})
    return MetricReport(metrics, list(query_ids), aps, recalls)


def evaluate(model, eval_text_embeds, eval_audio_embeds, qrels, direction="text-to-audio",
             caption_ids=None, audio_ids=None):
    """Score all caption/audio pairs with `model` and compute retrieval metrics.

    ``"text-to-audio"`` uses captions as queries; ``"audio-to-text"`` ranks
    captions for each audio item.  `qrels` must be keyed by the query ids of
    the chosen direction.
    """
    S, _ = score_matrix(model, eval_text_embeds, eval_audio_embeds)
    caption_ids = list(range(S.shape[0])) if caption_ids is None else list(caption_ids)
    audio_ids = list(range(S.shape[1])) if audio_ids is None else list(audio_ids)
    if direction == "text-to-audio":
        return metrics_from_scores(S, caption_ids, audio_ids, qrels)
    if direction == "audio-to-text":
        return metrics_from_scores(S.T, audio_ids, caption_ids, qrels)
    raise ConfigError(f"unknown direction {direction!r}")


def aggregate_reports(reports):
    """Mean and sample standard deviation of each metric across runs.

    Returns ``{metric: (mean, sd)}``; sd is 0 for a single run.
    """
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([r.metrics[name] for r in reports])
        sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[name] = (float(vals.mean()), sd)
    return out


def mean_per_query_ap(reports):
    """Per-query AP@10 averaged across runs (runs must share query order)."""
    ids = reports[0].query_ids
    for r in reports[1:]:
        if r.query_ids != ids:
            raise LengthMismatch("runs were evaluated on different queries")
    return np.mean([r.per_query_ap for r in reports], axis=0)


def format_table(rows):
    """Aligned text table of ``{method: {metric: (mean, sd)}}`` in percent."""
    header = ["Method", *METRIC_NAMES]
    body = []
    for method, agg in rows.items():
        body.append([method] + [f"{100 * m:.1f} ± {100 * s:.1f}" for m, s in
                                (agg[name] for name in METRIC_NAMES)])
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
    fmt = lambda r: "  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule] + [fmt(r) for r in body]) + "\n"


# -- significance -------------------------------------------------------------

_CF_MAX_ITER = 20000
_CF_EPS = 1e-16
_TINY = 1e-300


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _stirling_correction(x):
    """lgamma(x) minus its Stirling approximation, for x >= 10."""
    x2 = x * x
    return (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * x2)) / x2) / x2) / x


def _lgamma_ratio(a, b):
    """lgamma(a + b) - lgamma(a), accurate when a is large and b moderate."""
    if a < 10.0:
        return math.lgamma(a + b) - math.lgamma(a)
    return ((a - 0.5) * math.log1p(b / a) + b * math.log(a + b) - b
            + _stirling_correction(a + b) - _stirling_correction(a))


def _log(x, one_minus_x):
    return math.log1p(-one_minus_x) if one_minus_x < 0.5 else math.log(x)


def regularized_incomplete_beta(x, a, b, one_minus_x=None):
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1.

    Pass `one_minus_x` when it is known more precisely than ``1 - x``.
    """
    y = 1.0 - x if one_minus_x is None else one_minus_x
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    big, small = (a, b) if a >= b else (b, a)
    log_front = (_lgamma_ratio(big, small) - math.lgamma(small)
                 + a * _log(x, y) + b * _log(y, x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def student_t_sf(t, df):
    """P(T > t) for Student's t with `df` degrees of freedom."""
    if not df >= 1:
        raise InvalidDf(f"degrees of freedom must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    denom = df + t * t
    tail = 0.5 * regularized_incomplete_beta(df / denom, 0.5 * df, 0.5, t * t / denom)
    return tail if t >= 0 else 1.0 - tail


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float


def paired_t_test(a, b):
    """Two-sided paired t-test on per-query values ``a - b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch("paired samples must be 1-D of equal length")
    n = a.size
    if n < 2:
        raise LengthMismatch("paired t-test needs at least two pairs")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ZeroVariance("all paired differences are identical")
    t = float(np.mean(d) / (sd / math.sqrt(n)))
    df = n - 1
    p = min(1.0, 2.0 * student_t_sf(abs(t), df))
    return TTestResult(t, df, p)
