"""Embedding bank files, JSON-lines manifests, CSV export and synthetic data.

EMB1 bank layout (little-endian)::

    b"EMB1" | version u16 | count u32 | dim u32 | count*dim float32, row-major

A manifest holds one JSON object per line::

    {"item_id": "a17", "split": "train", "audio_row": 17,
     "caption_rows": [17], "caption_texts": ["birds chirp"]}
"""

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ._fileutil import atomic_write
from ._random import stream
from .dual_encoder import DualEncoder, ProjectionHead
from .exceptions import (
    DuplicateItemId,
    FormatError,
    IndexOutOfRange,
    InvalidSpec,
    MissingCaption,
    MissingSplit,
    NonFiniteInput,
    NonFinitePayload,
)
from .linalg import pairwise_cosine

BANK_MAGIC = b"EMB1"
BANK_VERSION = 1
_BANK_HEADER = struct.Struct("<4sHII")
SPLITS = ("train", "valid", "eval")


# -- embedding banks ------------------------------------------------------------

def _first_nonfinite(arr):
    r, c = np.argwhere(~np.isfinite(arr))[0]
    return int(r), int(c)


def write_bank(path, matrix):
    """Store `matrix` as float32; refuses NaN/Inf."""
    arr = np.asarray(matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise FormatError(f"bank must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinitePayload(*_first_nonfinite(arr))
    header = _BANK_HEADER.pack(BANK_MAGIC, BANK_VERSION, *arr.shape)
    atomic_write(path, header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_bank(path, dtype=np.float64):
    """Read an EMB1 file; the float32 payload is promoted to `dtype`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _BANK_HEADER.size:
        raise FormatError("bank truncated: incomplete header")
    magic, version, count, dim = _BANK_HEADER.unpack_from(data)
    if magic != BANK_MAGIC:
        raise FormatError(f"bad bank magic {magic!r}")
    if version != BANK_VERSION:
        raise FormatError(f"unsupported bank version {version}")
    payload = len(data) - _BANK_HEADER.size
    if payload != count * dim * 4:
        raise FormatError(f"payload is {payload} bytes, header implies {count * dim * 4}")
    arr = np.frombuffer(data, dtype="<f4", offset=_BANK_HEADER.size).reshape(count, dim)
    if not np.all(np.isfinite(arr)):
        raise NonFinitePayload(*_first_nonfinite(arr))
    return arr.astype(dtype)


# -- manifests ------------------------------------------------------------------

@dataclass
class ManifestRecord:
    item_id: str
    split: str
    audio_row: int
    caption_rows: list
    caption_texts: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({
            "item_id": self.item_id, "split": self.split, "audio_row": self.audio_row,
            "caption_rows": self.caption_rows, "caption_texts": self.caption_texts,
        }, ensure_ascii=False)


def caption_id(item_id, k):
    return f"{item_id}#{k}"


def write_manifest(path, records):
    text = "".join(r.to_json() + "\n" for r in records)
    atomic_write(path, text.encode("utf-8"))


def read_manifest(path):
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = ManifestRecord(
                    str(obj["item_id"]), obj["split"], int(obj["audio_row"]),
                    [int(i) for i in obj["caption_rows"]],
                    list(obj.get("caption_texts", [])),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if rec.split not in SPLITS:
                raise FormatError(f"{path}:{lineno}: unknown split {rec.split!r}")
            if rec.item_id in seen:
                raise DuplicateItemId(f"{path}:{lineno}: duplicate item id {rec.item_id!r}")
            seen.add(rec.item_id)
            records.append(rec)
    return records


@dataclass
class TrainingSet:
    """Paired rows: one per (caption, audio) pair."""

    text_inputs: np.ndarray
    audio_inputs: np.ndarray
    caption_embeds: np.ndarray
    caption_ids: list
    audio_ids: list

    def __len__(self):
        return self.text_inputs.shape[0]


@dataclass
class EvalSet:
    """Every caption and every audio item of a split, plus both qrels maps."""

    text_inputs: np.ndarray
    audio_inputs: np.ndarray
    caption_embeds: np.ndarray
    caption_ids: list
    audio_ids: list
    text_to_audio: dict
    audio_to_text: dict

    def qrels(self, direction):
        return self.text_to_audio if direction == "text-to-audio" else self.audio_to_text


def _select(records, split, audio_bank, caption_bank):
    chosen = [r for r in records if r.split == split]
    if not chosen:
        raise MissingSplit(f"manifest has no {split!r} items")
    for r in chosen:
        if not r.caption_rows:
            raise MissingCaption(f"item {r.item_id!r} has no captions")
        if not 0 <= r.audio_row < audio_bank.shape[0]:
            raise IndexOutOfRange(f"item {r.item_id!r}: audio_row {r.audio_row} out of range")
        for c in r.caption_rows:
            if not 0 <= c < caption_bank.shape[0]:
                raise IndexOutOfRange(f"item {r.item_id!r}: caption_row {c} out of range")
    return chosen


def load_training_set(records, audio_bank, caption_bank, split="train", text_bank=None):
    """One row per caption; `text_bank` defaults to the caption bank."""
    text_bank = caption_bank if text_bank is None else text_bank
    chosen = _select(records, split, audio_bank, caption_bank)
    cap_rows, audio_rows, cap_ids, audio_ids = [], [], [], []
    for r in chosen:
        for k, c in enumerate(r.caption_rows):
            cap_rows.append(c)
            audio_rows.append(r.audio_row)
            cap_ids.append(caption_id(r.item_id, k))
            audio_ids.append(r.item_id)
    return TrainingSet(text_bank[cap_rows], audio_bank[audio_rows], caption_bank[cap_rows],
                       cap_ids, audio_ids)


def load_eval_set(records, audio_bank, caption_bank, split="eval", text_bank=None):
    text_bank = caption_bank if text_bank is None else text_bank
    chosen = _select(records, split, audio_bank, caption_bank)
    cap_rows, cap_ids, t2a, a2t = [], [], {}, {}
    for r in chosen:
        ids = [caption_id(r.item_id, k) for k in range(len(r.caption_rows))]
        cap_rows.extend(r.caption_rows)
        cap_ids.extend(ids)
        for cid in ids:
            t2a[cid] = {r.item_id}
        a2t[r.item_id] = set(ids)
    audio_rows = [r.audio_row for r in chosen]
    return EvalSet(text_bank[cap_rows], audio_bank[audio_rows], caption_bank[cap_rows],
                   cap_ids, [r.item_id for r in chosen], t2a, a2t)


def load_manifest(path, audio_bank, caption_bank, split="train", text_bank=None):
    """Read a manifest and materialise `split` as a TrainingSet (train/valid) or EvalSet."""
    records = read_manifest(path)
    if split == "train":
        return load_training_set(records, audio_bank, caption_bank, split, text_bank)
    return load_eval_set(records, audio_bank, caption_bank, split, text_bank)


# -- CSV ------------------------------------------------------------------------

def matrix_to_csv(values, row_ids, col_ids, corner="query_id"):
    """CSV text with a header of column ids and 9 significant digits per value."""
    values = np.asarray(values, dtype=np.float64).reshape(len(row_ids), len(col_ids))
    if not np.all(np.isfinite(values)):
        r, c = _first_nonfinite(values)
        raise NonFiniteInput(f"non-finite value at row {r} ({row_ids[r]!r}), col {c}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([corner, *col_ids])
    for rid, row in zip(row_ids, values):
        writer.writerow([rid, *(f"{v:.9g}" for v in row)])
    return buf.getvalue()


def export_scores(score_matrix, path, row_ids=None, col_ids=None):
    """Write a score (or relevance) matrix as CSV: rows are queries, columns audio ids."""
    values = np.asarray(score_matrix, dtype=np.float64)
    if values.size == 0:
        values = values.reshape(0 if row_ids is None else len(row_ids),
                                0 if col_ids is None else len(col_ids))
    row_ids = list(range(values.shape[0])) if row_ids is None else list(row_ids)
    col_ids = list(range(values.shape[1])) if col_ids is None else list(col_ids)
    atomic_write(path, matrix_to_csv(values, row_ids, col_ids).encode("utf-8"))


def read_matrix_csv(path):
    """Inverse of :func:`export_scores`: returns (values, row_ids, col_ids)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    col_ids = rows[0][1:]
    row_ids = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return values.reshape(len(row_ids), len(col_ids)), row_ids, col_ids


# -- synthetic data -------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Clustered latent vectors mapped linearly into audio and caption spaces.

    Item latents are ``normalize(prototype + noise_sigma * N(0, I))``; each
    caption adds its own ``caption_sigma`` noise on top of its item's latent.
    ``prototype_concentration`` in [0, 1) pulls all prototypes toward a shared
    direction, which raises cross-cluster similarity.
    """

    n_clusters: int = 8
    items_per_cluster: int = 64
    d_audio: int = 128
    d_text: int = 768
    d_latent: int = 16
    noise_sigma: float = 0.15
    caption_sigma: float = 0.05
    prototype_concentration: float = 0.0
    eval_fraction: float = 0.25
    train_captions: int = 1
    eval_captions: int = 5
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_clusters, self.items_per_cluster, self.d_audio, self.d_text,
                  self.d_latent, self.train_captions, self.eval_captions)
        if any(int(c) != c or c < 1 for c in counts):
            raise InvalidSpec("all counts and dimensions must be positive integers")
        if self.noise_sigma < 0 or self.caption_sigma < 0:
            raise InvalidSpec("noise levels must be >= 0")
        if not 0 <= self.prototype_concentration < 1:
            raise InvalidSpec("prototype_concentration must lie in [0, 1)")
        if not 0 <= self.eval_fraction < 1:
            raise InvalidSpec("eval_fraction must lie in [0, 1)")
        if self.d_latent > min(self.d_audio, self.d_text):
            raise InvalidSpec("d_latent cannot exceed d_audio or d_text")

    @property
    def n_eval_per_cluster(self):
        return int(round(self.eval_fraction * self.items_per_cluster))


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    audio_bank: np.ndarray
    caption_bank: np.ndarray
    records: list
    clusters: np.ndarray  # cluster label per item
    audio_map: np.ndarray  # d_latent x d_audio, orthonormal rows
    text_map: np.ndarray  # d_latent x d_text, orthonormal rows

    def caption_clusters(self):
        """Cluster label of every caption-bank row."""
        labels = np.empty(self.caption_bank.shape[0], dtype=int)
        for rec, c in zip(self.records, self.clusters):
            labels[rec.caption_rows] = c
        return labels

    def oracle_encoder(self):
        """Dual encoder that maps both modalities back to the shared latent space.

        The hidden layer holds ``[z, -z]`` so ReLU keeps both signs and the
        second layer recombines them exactly.
        """
        def head(mapping):
            d_latent = mapping.shape[0]
            W1 = np.hstack([mapping.T, -mapping.T])
            W2 = np.vstack([np.eye(d_latent), -np.eye(d_latent)])
            return ProjectionHead(W1, np.zeros(2 * d_latent), W2, np.zeros(d_latent))

        return DualEncoder(head(self.audio_map), head(self.text_map))


def _unit_rows(X):
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def _orthonormal_map(rng, d_latent, d_out):
    q, r = np.linalg.qr(rng.standard_normal((d_out, d_latent)))
    # sign fix makes the factorisation unique
    return (q * np.sign(np.diag(r))).T


def generate_synthetic(spec):
    """Deterministic synthetic corpus described by `spec`.

    Items are laid out cluster by cluster; the last ``n_eval_per_cluster``
    items of every cluster form the eval split.
    """
    rng = stream(spec.seed, "synth")
    k, per, dl = spec.n_clusters, spec.items_per_cluster, spec.d_latent
    common = _unit_rows(rng.standard_normal((1, dl)))
    raw = _unit_rows(rng.standard_normal((k, dl)))
    c = spec.prototype_concentration
    prototypes = _unit_rows(c * common + (1.0 - c) * raw)
    audio_map = _orthonormal_map(rng, dl, spec.d_audio)
    text_map = _orthonormal_map(rng, dl, spec.d_text)

    clusters = np.repeat(np.arange(k), per)
    latents = _unit_rows(prototypes[clusters] + spec.noise_sigma * rng.standard_normal((k * per, dl)))

    n_eval = spec.n_eval_per_cluster
    records, caption_latents = [], []
    for i in range(k * per):
        split = "eval" if i % per >= per - n_eval else "train"
        n_caps = spec.eval_captions if split == "eval" else spec.train_captions
        noisy = latents[i] + spec.caption_sigma * rng.standard_normal((n_caps, dl))
        first = len(caption_latents)
        caption_latents.extend(_unit_rows(noisy))
        item_id = f"c{clusters[i]}_{i % per:03d}"
        rows = list(range(first, first + n_caps))
        texts = [f"synthetic caption {j} of cluster {clusters[i]} item {i % per}"
                 for j in range(n_caps)]
        records.append(ManifestRecord(item_id, split, i, rows, texts))

    audio_bank = (latents @ audio_map).astype(np.float32)
    caption_bank = (np.asarray(caption_latents) @ text_map).astype(np.float32)
    return SyntheticDataset(spec, audio_bank, caption_bank, records, clusters, audio_map, text_map)


def cluster_cosine_summary(caption_bank, labels):
    """Mean caption cosine within clusters and across clusters (self-pairs excluded)."""
    sim = pairwise_cosine(caption_bank, caption_bank)
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(labels), dtype=bool)
    within = sim[same & off_diag]
    cross = sim[~same]
    return (float(within.mean()) if within.size else math.nan,
            float(cross.mean()) if cross.size else math.nan)
