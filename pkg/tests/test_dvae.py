"""Tokenizer contracts: the x4 downsample fixes the token rates at 12.5 Hz
(phonetic) and 23.4375 Hz (acoustic), quantization is nearest-neighbor with
deterministic tie-breaking, and training runs on the straight-through
estimator."""

import numpy as np
import pytest

from conftest import noise, tone
from genvc import numerics as nm
from genvc.audio import FeatureSeq, mel_spectrogram, pseudo_phonetic, resample
from genvc.dvae import (
    DvaeModel,
    TokenSeq,
    decode,
    encode,
    quantize,
    read_token_stream,
    reconstruction_step,
    train_dvae,
    write_token_stream,
)
from genvc.errors import (
    DimensionError,
    IndexRangeError,
    LengthError,
    ParseError,
    RateError,
)


def _small(kind="phonetic", d_in=8, n_codes=16, hidden=12, code_dim=10, seed=0):
    return DvaeModel(kind, d_in=d_in, n_codes=n_codes, hidden=hidden,
                     code_dim=code_dim, seed=seed)


def _feats(rng, t, d, kind="phonetic"):
    rate = 50.0 if kind == "phonetic" else 93.75
    return FeatureSeq(rng.standard_normal((t, d)).astype(np.float32), rate, kind)


def test_token_rates_on_four_second_clip():
    wav = tone(220.0, 4.0)
    phonetic = encode(_small(d_in=64), pseudo_phonetic(resample(wav, 16000)))
    assert len(phonetic) == 50  # 4 s * 12.5 Hz, zero tolerance
    assert phonetic.token_rate == 12.5
    acoustic = encode(_small("acoustic", d_in=80), mel_spectrogram(wav))
    assert len(acoustic) == 94  # floor(96000/256)+1 = 376 frames -> /4
    assert acoustic.token_rate == 23.4375


def test_token_seq_rate_is_pinned():
    with pytest.raises(RateError):
        TokenSeq(np.array([1, 2]), 16, 50.0, "phonetic")
    with pytest.raises(IndexRangeError):
        TokenSeq(np.array([16]), 16, 12.5, "phonetic")
    ts = TokenSeq(np.array([0, 5]), 16, 12.5, "phonetic")
    assert ts.duration == pytest.approx(2 / 12.5)


def test_quantize_nearest_and_tie_break():
    codebook = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], dtype=np.float32)
    idx, row = quantize(codebook, np.array([0.9, 0.1], dtype=np.float32))
    assert idx == 1 and np.array_equal(row, codebook[1])
    # [0.5, 0] is equidistant from codes 0 and 1: lowest index wins
    assert quantize(codebook, np.array([0.5, 0.0], dtype=np.float32))[0] == 0
    idx, row = quantize(codebook, np.array([0.0, 2.0], dtype=np.float32))
    assert idx == 2 and np.array_equal(row, codebook[2])


def test_encode_truncates_to_multiple_of_four(rng):
    m = _small()
    tokens = encode(m, _feats(rng, 11, 8))
    assert len(tokens) == 2  # 11 -> 8 frames -> 2 tokens
    with pytest.raises(LengthError):
        encode(m, _feats(rng, 3, 8))


def test_decode_inverts_length(rng):
    m = _small()
    tokens = encode(m, _feats(rng, 12, 8))
    out = decode(m, tokens)
    assert out.num_frames == 12
    assert out.dim == 8
    assert out.frame_rate == 50.0


def test_encode_rejects_mismatches(rng):
    m = _small()
    with pytest.raises(DimensionError):
        encode(m, _feats(rng, 8, 9))
    with pytest.raises(DimensionError):
        encode(m, _feats(rng, 8, 8, kind="acoustic"))
    other = TokenSeq(np.array([0]), 99, 12.5, "phonetic")
    with pytest.raises(IndexRangeError):
        decode(m, other)


def test_straight_through_matches_codebook_rows(rng):
    m = _small()
    frames = rng.standard_normal((8, 8)).astype(np.float32)
    total, recon, vq = reconstruction_step(m, frames)
    assert np.isfinite(total.data)
    # loss composition: total = recon + vq and both parts are nonnegative
    assert total.data == pytest.approx(recon.data + vq.data, rel=1e-6)
    assert recon.data >= 0 and vq.data >= 0


def test_gradients_reach_encoder_and_codebook(rng):
    m = _small()
    frames = rng.standard_normal((8, 8)).astype(np.float32)
    total, _, _ = reconstruction_step(m, frames)
    total.backward()
    enc_grad = m.params["enc.in0.w"].grad
    cb_grad = m.params["codebook"].grad
    assert enc_grad is not None and float(np.abs(enc_grad).sum()) > 0
    assert cb_grad is not None and float(np.abs(cb_grad).sum()) > 0


def test_training_reduces_loss(rng):
    # smooth low-rank features: a compressible signal the codes can cover
    t = np.arange(48)[:, None]
    basis = np.stack([np.sin(0.2 * t[:, 0]), np.cos(0.13 * t[:, 0])], axis=1)
    mix = rng.standard_normal((2, 8))
    corpus = [FeatureSeq((basis @ mix).astype(np.float32), 50.0, "phonetic"),
              FeatureSeq((basis @ -mix).astype(np.float32), 50.0, "phonetic")]
    m = _small(hidden=16)
    curve = train_dvae(m, corpus, steps=250, lr=3e-3, seed=0)
    first = np.mean([r[1] for r in curve[:10]])
    last = np.mean([r[1] for r in curve[-10:]])
    assert last < first * 0.5


def test_training_is_seed_deterministic(rng):
    corpus = [_feats(rng, 24, 8)]
    a = train_dvae(_small(seed=3), corpus, steps=15, lr=1e-3, seed=9)
    b = train_dvae(_small(seed=3), corpus, steps=15, lr=1e-3, seed=9)
    assert a == b


def test_token_stream_round_trip(tmp_path):
    ts = TokenSeq(np.array([0, 1, 255, 17]), 256, 12.5, "phonetic")
    path = tmp_path / "t.gvct"
    write_token_stream(str(path), ts)
    back = read_token_stream(str(path), kind="phonetic")
    assert np.array_equal(back.ids, ts.ids)
    assert back.vocab == 256 and back.token_rate == 12.5


def test_token_stream_rejects_corruption(tmp_path):
    ts = TokenSeq(np.array([3, 4]), 1024, 23.4375, "acoustic")
    path = tmp_path / "t.gvct"
    write_token_stream(str(path), ts)
    blob = path.read_bytes()
    for bad in (b"ZZZZ" + blob[4:], blob[:-1], blob[:8]):
        path.write_bytes(bad)
        with pytest.raises(ParseError):
            read_token_stream(str(path), kind="acoustic")


def test_state_round_trip(rng):
    m = _small(seed=5)
    frames = rng.standard_normal((8, 8)).astype(np.float32)
    before = encode(m, FeatureSeq(frames, 50.0, "phonetic")).ids
    state = m.state()
    m2 = _small(seed=99)
    m2.load_state(state)
    after = encode(m2, FeatureSeq(frames, 50.0, "phonetic")).ids
    assert np.array_equal(before, after)
