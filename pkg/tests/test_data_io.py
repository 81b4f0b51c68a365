import json
import struct

import numpy as np
import pytest

from audiorank.data_io import (
    ManifestRecord,
    SyntheticSpec,
    cluster_cosine_summary,
    export_scores,
    generate_synthetic,
    load_eval_set,
    load_manifest,
    read_bank,
    read_manifest,
    read_matrix_csv,
    write_bank,
    write_manifest,
)
from audiorank.exceptions import (
    DuplicateItemId,
    FormatError,
    IndexOutOfRange,
    InvalidSpec,
    MissingCaption,
    MissingSplit,
    NonFiniteInput,
    NonFinitePayload,
)
from audiorank.linalg import pairwise_cosine
from audiorank.metrics import evaluate


def test_bank_roundtrip(tmp_path, rng):
    M = rng.standard_normal((5, 7)).astype(np.float32)
    write_bank(tmp_path / "b.emb", M)
    raw = (tmp_path / "b.emb").read_bytes()
    assert raw[:4] == b"EMB1" and struct.unpack_from("<HII", raw, 4) == (1, 5, 7)
    out = read_bank(tmp_path / "b.emb")
    assert out.dtype == np.float64
    assert out.astype(np.float32).tobytes() == M.tobytes()
    write_bank(tmp_path / "c.emb", out)
    assert (tmp_path / "c.emb").read_bytes() == raw


def test_bank_bad_length_and_magic(tmp_path):
    header = struct.pack("<4sHII", b"EMB1", 1, 2, 3)
    (tmp_path / "short.emb").write_bytes(header + b"\0" * 20)
    with pytest.raises(FormatError):
        read_bank(tmp_path / "short.emb")
    (tmp_path / "magic.emb").write_bytes(b"EMB2" + header[4:] + b"\0" * 24)
    with pytest.raises(FormatError):
        read_bank(tmp_path / "magic.emb")
    (tmp_path / "version.emb").write_bytes(struct.pack("<4sHII", b"EMB1", 9, 2, 3) + b"\0" * 24)
    with pytest.raises(FormatError):
        read_bank(tmp_path / "version.emb")


def test_bank_nan_payload(tmp_path):
    M = np.zeros((2, 3), dtype="<f4")
    M[1, 2] = np.nan
    (tmp_path / "nan.emb").write_bytes(struct.pack("<4sHII", b"EMB1", 1, 2, 3) + M.tobytes())
    with pytest.raises(NonFinitePayload) as info:
        read_bank(tmp_path / "nan.emb")
    assert (info.value.row, info.value.col) == (1, 2)
    with pytest.raises(NonFinitePayload):
        write_bank(tmp_path / "x.emb", M)


def _toy(tmp_path, records):
    path = tmp_path / "m.jsonl"
    write_manifest(path, records)
    return path


def test_manifest_eval_qrels(tmp_path, rng):
    records = [ManifestRecord(f"a{i}", "eval", i, list(range(5 * i, 5 * i + 5)), ["x"] * 5) for i in range(2)]
    path = _toy(tmp_path, records)
    ev = load_manifest(path, rng.standard_normal((2, 4)), rng.standard_normal((10, 3)), split="eval")
    assert len(ev.audio_to_text) == 2
    assert all(len(v) == 5 for v in ev.audio_to_text.values())
    assert ev.text_to_audio["a1#3"] == {"a1"}
    assert ev.text_inputs.shape == (10, 3) and ev.audio_inputs.shape == (2, 4)


def test_manifest_training_rows(tmp_path, rng):
    records = [ManifestRecord("a", "train", 1, [2, 0]), ManifestRecord("b", "train", 0, [1])]
    captions = rng.standard_normal((3, 4))
    audio = rng.standard_normal((2, 5))
    tr = load_manifest(_toy(tmp_path, records), audio, captions)
    assert tr.caption_ids == ["a#0", "a#1", "b#0"] and tr.audio_ids == ["a", "a", "b"]
    np.testing.assert_array_equal(tr.caption_embeds, captions[[2, 0, 1]])
    np.testing.assert_array_equal(tr.audio_inputs, audio[[1, 1, 0]])


def test_manifest_errors(tmp_path, rng):
    audio, captions = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    with pytest.raises(MissingCaption):
        load_manifest(_toy(tmp_path, [ManifestRecord("a", "train", 0, [])]), audio, captions)
    with pytest.raises(IndexOutOfRange):
        load_manifest(_toy(tmp_path, [ManifestRecord("a", "train", 0, [2])]), audio, captions)
    with pytest.raises(IndexOutOfRange):
        load_manifest(_toy(tmp_path, [ManifestRecord("a", "train", 5, [0])]), audio, captions)
    with pytest.raises(MissingSplit):
        load_manifest(_toy(tmp_path, [ManifestRecord("a", "train", 0, [0])]), audio, captions, "eval")
    dup = tmp_path / "dup.jsonl"
    line = json.dumps({"item_id": "a", "split": "train", "audio_row": 0, "caption_rows": [0]})
    dup.write_text(line + "\n" + line + "\n", encoding="utf-8")
    with pytest.raises(DuplicateItemId):
        read_manifest(dup)
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"item_id": "a"}\n', encoding="utf-8")
    with pytest.raises(FormatError):
        read_manifest(bad)


def test_manifest_roundtrip_is_order_stable(tmp_path):
    records = [ManifestRecord(f"id{i}", "train", i, [i], [f"caption ü {i}"]) for i in (3, 1, 2)]
    path = _toy(tmp_path, records)
    assert read_manifest(path) == records


def test_synthetic_zero_noise():
    ds = generate_synthetic(SyntheticSpec(n_clusters=3, items_per_cluster=6, noise_sigma=0.0,
                                          caption_sigma=0.0, seed=1))
    labels = ds.caption_clusters()
    sim = pairwise_cosine(ds.caption_bank, ds.caption_bank)
    same = labels[:, None] == labels[None, :]
    np.testing.assert_allclose(sim[same], 1.0, atol=1e-6)


def test_synthetic_deterministic():
    spec = SyntheticSpec(n_clusters=3, items_per_cluster=8, seed=42)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.audio_bank.tobytes() == b.audio_bank.tobytes()
    assert a.caption_bank.tobytes() == b.caption_bank.tobytes()
    assert a.records == b.records
    c = generate_synthetic(SyntheticSpec(n_clusters=3, items_per_cluster=8, seed=43))
    assert a.audio_bank.tobytes() != c.audio_bank.tobytes()


def test_synthetic_cluster_margin():
    ds = generate_synthetic(SyntheticSpec(n_clusters=4, items_per_cluster=16, noise_sigma=0.1, seed=3))
    within, cross = cluster_cosine_summary(ds.caption_bank, ds.caption_clusters())
    assert within - cross > 0.2
    assert np.all(np.linalg.norm(ds.caption_bank, axis=1) > 1e-3)


def test_synthetic_layout():
    ds = generate_synthetic(SyntheticSpec(n_clusters=8, items_per_cluster=64, seed=0))
    assert ds.audio_bank.shape == (512, 128) and ds.audio_bank.dtype == np.float32
    splits = [r.split for r in ds.records]
    assert splits.count("eval") == 128 and splits.count("train") == 384
    assert all(len(r.caption_rows) == (5 if r.split == "eval" else 1) for r in ds.records)
    assert ds.caption_bank.shape == (384 + 5 * 128, 768)


def test_oracle_encoder_is_perfect():
    ds = generate_synthetic(SyntheticSpec(n_clusters=4, items_per_cluster=20, caption_sigma=0.0, seed=2))
    ev = load_eval_set(ds.records, ds.audio_bank.astype(float), ds.caption_bank.astype(float))
    rep = evaluate(ds.oracle_encoder(), ev.text_inputs, ev.audio_inputs, ev.text_to_audio,
                   caption_ids=ev.caption_ids, audio_ids=ev.audio_ids)
    assert rep.map10 == 1.0


@pytest.mark.parametrize("kwargs", [dict(n_clusters=0), dict(noise_sigma=-1.0),
                                    dict(d_latent=1000), dict(prototype_concentration=1.0)])
def test_synthetic_invalid(kwargs):
    with pytest.raises(InvalidSpec):
        SyntheticSpec(**kwargs)


def test_export_scores_roundtrip(tmp_path):
    S = np.array([[0.123456789012, -1.0], [1 / 3, 2e-12]])
    export_scores(S, tmp_path / "s.csv", ["q0", "q1"], ["a0", "a1"])
    values, rows, cols = read_matrix_csv(tmp_path / "s.csv")
    assert rows == ["q0", "q1"] and cols == ["a0", "a1"]
    np.testing.assert_allclose(values, S, rtol=1e-8, atol=1e-9)
    assert (tmp_path / "s.csv").read_text().splitlines()[1] == "q0,0.123456789,-1"


def test_export_scores_empty_and_nonfinite(tmp_path):
    export_scores(np.zeros((0, 2)), tmp_path / "e.csv", [], ["a0", "a1"])
    assert (tmp_path / "e.csv").read_text() == "query_id,a0,a1\n"
    with pytest.raises(NonFiniteInput, match="row 1"):
        export_scores(np.array([[0.0], [np.inf]]), tmp_path / "x.csv")
