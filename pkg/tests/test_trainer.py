import math
from types import SimpleNamespace

import numpy as np
import pytest

from audiorank.data_io import SyntheticSpec, generate_synthetic, load_training_set
from audiorank.dual_encoder import init_model
from audiorank.exceptions import (
    BatchTooLarge,
    ConfigError,
    FormatError,
    NonFiniteGradient,
    ShapeMismatch,
    StepOutOfRange,
)
from audiorank.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    cosine_annealed_lr,
    load_checkpoint,
    make_batches,
    save_checkpoint,
    train,
)


def test_make_batches_deterministic_and_permutation():
    a = make_batches(6, 2, seed=3, epoch=0)
    assert a == make_batches(6, 2, seed=3, epoch=0)
    assert len(a) == 3
    assert sorted(i for b in a for i in b) == list(range(6))
    assert make_batches(50, 5, 3, 0) != make_batches(50, 5, 3, 1)


def test_make_batches_drops_remainder():
    batches = make_batches(7, 2, seed=1, epoch=4)
    flat = [i for b in batches for i in b]
    assert len(batches) == 3 and all(len(b) == 2 for b in batches)
    assert len(set(flat)) == 6 and set(flat) <= set(range(7))


def test_make_batches_too_large():
    with pytest.raises(BatchTooLarge):
        make_batches(3, 4, 0, 0)


def test_cosine_schedule_endpoints_and_midpoint():
    assert cosine_annealed_lr(0, 100, 2e-5, 1e-7) == 2e-5
    assert cosine_annealed_lr(100, 100, 2e-5, 1e-7) == 1e-7
    assert cosine_annealed_lr(50, 100, 2e-5, 1e-7) == pytest.approx(1.005e-5, rel=1e-12)


def test_cosine_schedule_monotone_bounded():
    lrs = [cosine_annealed_lr(s, 777) for s in range(778)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert min(lrs) >= 1e-7 and max(lrs) <= 2e-5


@pytest.mark.parametrize("step, total", [(-1, 10), (11, 10), (0, 0)])
def test_cosine_schedule_out_of_range(step, total):
    with pytest.raises(StepOutOfRange):
        cosine_annealed_lr(step, total)


def test_adam_first_step():
    p = [np.array([0.5])]
    state = AdamState.zeros_like(p)
    before = p[0].copy()
    adam_step(p, [np.array([1.0])], state, lr=0.001)
    assert p[0][0] - before[0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-15)
    assert state.step == 1


def test_adam_zero_gradient_is_noop():
    p = [np.arange(6.0).reshape(2, 3)]
    state = AdamState.zeros_like(p)
    adam_step(p, [np.zeros((2, 3))], state, lr=0.1)
    np.testing.assert_array_equal(p[0], np.arange(6.0).reshape(2, 3))


def test_adam_matches_unrolled_reference(rng):
    p = rng.standard_normal(4)
    params, state = [p.copy()], AdamState.zeros_like([p])
    m = v = np.zeros(4)
    ref = p.copy()
    for t in range(1, 6):
        g = rng.standard_normal(4)
        adam_step(params, [g], state, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params[0], ref, rtol=1e-13)


def test_adam_errors():
    p = [np.zeros(2)]
    with pytest.raises(ShapeMismatch):
        adam_step(p, [np.zeros(3)], AdamState.zeros_like(p), 0.1)
    with pytest.raises(NonFiniteGradient):
        adam_step(p, [np.array([np.nan, 0.0])], AdamState.zeros_like(p), 0.1)


@pytest.mark.parametrize("kwargs", [dict(lr_max=0.0), dict(lr_min=0.0), dict(lr_max=1e-7, lr_min=1e-6),
                                    dict(batch_size=1), dict(epochs=0)])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_default_recipe():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.epochs, cfg.lr_max, cfg.lr_min) == (32, 25, 2e-5, 1e-7)
    assert (cfg.loss.omega, cfg.loss.tau) == (0.05, 0.05)
    assert (cfg.transform.kind, cfg.transform.intercept, cfg.transform.slope) == ("logistic", 2.73, 4.58)


@pytest.fixture(scope="module")
def small_set():
    ds = generate_synthetic(SyntheticSpec(n_clusters=4, items_per_cluster=20, d_audio=24,
                                          d_text=32, d_latent=8, eval_fraction=0.2, seed=5))
    return load_training_set(ds.records, ds.audio_bank.astype(float), ds.caption_bank.astype(float))


def test_train_loss_decreases_and_is_deterministic(small_set):
    assert len(small_set) == 64
    cfg = TrainConfig(epochs=2, batch_size=16, lr_max=1e-3, lr_min=1e-5, d_hidden=32, d_out=16, seed=3)
    m1, h1 = train(small_set, cfg)
    m2, h2 = train(small_set, cfg)
    assert h1.mean_loss[-1] < h1.mean_loss[0]
    assert h1.mean_loss == h2.mean_loss and h1.lr == h2.lr
    assert len(h1.mean_loss) == len(h1.lr) == len(h1.seconds) == 2
    for a, b in zip(m1.params(), m2.params()):
        assert a.tobytes() == b.tobytes()


def test_train_epoch_callback(small_set):
    seen = []
    train(small_set, TrainConfig(epochs=3, batch_size=16, d_hidden=8, d_out=4),
          on_epoch_end=lambda e, m: seen.append(e))
    assert seen == [1, 2, 3]


def test_history_csv(tmp_path, small_set):
    _, h = train(small_set, TrainConfig(epochs=2, batch_size=32, d_hidden=8, d_out=4))
    h.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,lr" and len(lines) == 3
    assert float(lines[1].split(",")[1]) == h.mean_loss[0]
    h.to_csv(tmp_path / "t.csv", include_time=True)
    assert (tmp_path / "t.csv").read_text().splitlines()[0].endswith(",seconds")


def test_train_rejects_mismatched_rows():
    data = SimpleNamespace(text_inputs=np.ones((4, 3)), audio_inputs=np.ones((5, 3)),
                           caption_embeds=np.ones((4, 3)))
    with pytest.raises(ShapeMismatch):
        train(data, TrainConfig(batch_size=2))


def test_checkpoint_roundtrip(tmp_path):
    model = init_model(9, 6, 5, 7, 3)
    model.audio_head.b1[:] = np.pi
    path = tmp_path / "m.denc"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.dims == (6, 5, 7, 3)
    for a, b in zip(model.params(), loaded.params()):
        assert a.tobytes() == b.tobytes()
    raw = path.read_bytes()
    assert raw[:4] == b"DENC" and len(raw) == 4 + 2 + 16 + 8 * (6*7 + 7 + 7*3 + 3 + 5*7 + 7 + 7*3 + 3)


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "m.denc"
    save_checkpoint(init_model(0, 3, 3, 2, 2), path)
    raw = path.read_bytes()
    (tmp_path / "trunc.denc").write_bytes(raw[:-5])
    (tmp_path / "short.denc").write_bytes(raw[:10])
    (tmp_path / "magic.denc").write_bytes(b"XENC" + raw[4:])
    for name in ("trunc.denc", "short.denc", "magic.denc"):
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / name)
