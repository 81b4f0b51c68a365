"""Mini-batch training of the dual encoder with Adam and cosine annealing."""

import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from ._fileutil import atomic_write
from ._random import stream
from .dual_encoder import DualEncoder, ProjectionHead, backward, init_model, score_matrix
from .exceptions import (
    BatchTooLarge,
    ConfigError,
    DimensionMismatch,
    FormatError,
    NonFiniteGradient,
    NonFiniteLoss,
    ShapeMismatch,
    StepOutOfRange,
)
from .linalg import pairwise_cosine
from .objectives import LossConfig, batch_loss
from .relevance import RelevanceTransform, relevance_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 25
    lr_max: float = 2e-5
    lr_min: float = 1e-7
    loss: LossConfig = field(default_factory=LossConfig)
    transform: RelevanceTransform = field(default_factory=RelevanceTransform)
    clamp_diagonal: bool = False
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    d_hidden: int = 256
    d_out: int = 256

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (self.lr_max > self.lr_min > 0):
            raise ConfigError("learning rates must satisfy lr_max > lr_min > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ConfigError("invalid Adam hyper-parameters")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass
class TrainHistory:
    mean_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def to_csv(self, path, include_time=False):
        """Write ``epoch,mean_loss,lr[,seconds]``; timings are opt-in since they vary run to run."""
        header = "epoch,mean_loss,lr" + (",seconds" if include_time else "")
        lines = [header]
        for i, (loss, lr) in enumerate(zip(self.mean_loss, self.lr), start=1):
            row = f"{i},{loss:.17g},{lr:.17g}"
            if include_time:
                row += f",{self.seconds[i - 1]:.3f}"
            lines.append(row)
        atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def make_batches(n_items, batch_size, seed, epoch):
    """Shuffle ``range(n_items)`` for this epoch and cut it into full batches."""
    if batch_size > n_items:
        raise BatchTooLarge(f"batch_size {batch_size} exceeds {n_items} items")
    perm = stream(seed, "shuffle", epoch).permutation(n_items)
    n_full = n_items // batch_size
    return [perm[b * batch_size:(b + 1) * batch_size].tolist() for b in range(n_full)]


def cosine_annealed_lr(step, total_steps, lr_max=2e-5, lr_min=1e-7):
    """Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps}]")
    w = 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
    # interpolation form is exact at both endpoints
    return w * lr_max + (1.0 - w) * lr_min


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """One bias-corrected Adam update, applied to `params` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or Inf")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + epsilon)
    return params, state


def batch_targets(caption_embeds, config):
    """In-batch relevance matrix from the batch's caption embeddings."""
    sim = pairwise_cosine(caption_embeds, caption_embeds)
    return relevance_matrix(sim, config.transform, clamp_diagonal=config.clamp_diagonal).values


def train(dataset, config=None, model=None, on_epoch_end=None):
    """Train a dual encoder on paired rows of `dataset`.

    `dataset` needs ``text_inputs``, ``audio_inputs`` and ``caption_embeds``
    arrays with one row per audio-caption pair.  `on_epoch_end(epoch, model)`
    is called after each epoch and cannot influence training.
    """
    config = config or TrainConfig()
    text_in = np.asarray(dataset.text_inputs, dtype=np.float64)
    audio_in = np.asarray(dataset.audio_inputs, dtype=np.float64)
    captions = np.asarray(dataset.caption_embeds, dtype=np.float64)
    n = text_in.shape[0]
    if audio_in.shape[0] != n or captions.shape[0] != n:
        raise ShapeMismatch("dataset arrays must have one row per pair")
    if model is None:
        model = init_model(config.seed, audio_in.shape[1], text_in.shape[1],
                           config.d_hidden, config.d_out)
    elif model.dims[:2] != (audio_in.shape[1], text_in.shape[1]):
        raise DimensionMismatch("model input dims do not match the dataset")

    params = model.params()
    state = AdamState.zeros_like(params)
    batches_per_epoch = n // config.batch_size
    if batches_per_epoch == 0:
        raise BatchTooLarge(f"batch_size {config.batch_size} exceeds {n} items")
    total_steps = config.epochs * batches_per_epoch
    history = TrainHistory()
    step = 0
    for epoch in range(config.epochs):
        start = time.perf_counter()
        losses = []
        lr = config.lr_max
        for b, idx in enumerate(make_batches(n, config.batch_size, config.seed, epoch)):
            G = batch_targets(captions[idx], config)
            S, cache = score_matrix(model, text_in[idx], audio_in[idx])
            res = batch_loss(G, S, config.loss)
            if not math.isfinite(res.loss):
                raise NonFiniteLoss(epoch, b, res.loss)
            grads = backward(model, cache, res.grad_scores)
            lr = cosine_annealed_lr(step, total_steps, config.lr_max, config.lr_min)
            adam_step(params, grads, state, lr, config.beta1, config.beta2, config.epsilon)
            model.mark_updated()
            losses.append(res.loss)
            step += 1
        history.mean_loss.append(math.fsum(losses) / len(losses))
        history.lr.append(lr)
        history.seconds.append(time.perf_counter() - start)
        logger.info("epoch %d loss %.6f lr %.3g", epoch + 1, history.mean_loss[-1], lr)
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, model)
    return model, history


# -- checkpoints ------------------------------------------------------------

CHECKPOINT_MAGIC = b"DENC"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sH4I")


def _param_shapes(d_a, d_t, d_hidden, d_out):
    head = lambda d_in: [(d_in, d_hidden), (d_hidden,), (d_hidden, d_out), (d_out,)]
    return head(d_a) + head(d_t)


def save_checkpoint(model, path):
    """Write ``DENC`` header, dims, then the eight tensors as little-endian float64."""
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, *model.dims)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params())
    atomic_write(path, header + body)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError("checkpoint truncated: incomplete header")
    magic, version, *dims = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if min(dims) < 1:
        raise FormatError(f"invalid checkpoint dims {dims}")
    shapes = _param_shapes(*dims)
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        raise FormatError(f"checkpoint has {len(data)} bytes, expected {expected}")
    arrays = []
    offset = _HEADER.size
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        arrays.append(arr.astype(np.float64))
        offset += 8 * count
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise FormatError("checkpoint contains non-finite parameters")
    return DualEncoder(ProjectionHead(*arrays[:4]), ProjectionHead(*arrays[4:]))
