"""Waveform IO, resampling, mel analysis, and the pseudo-phonetic features.

Frame-count formulas are load-bearing: downstream token rates (12.5 and
23.4375 Hz) depend on them exactly.
"""

import struct
import wave

import numpy as np
import pytest

from conftest import noise, tone
from genvc.audio import (
    ACOUSTIC_RATE,
    LOG_FLOOR,
    MEL_BINS,
    PHONETIC_AUDIO_RATE,
    FeatureSeq,
    Waveform,
    load_wav,
    mel_filterbank,
    mel_spectrogram,
    pseudo_phonetic,
    read_feature_dump,
    resample,
    save_wav,
    write_feature_dump,
)
from genvc.errors import DimensionError, LengthError, ParseError, RateError


def test_wav_round_trip_exact(tmp_path):
    # values on the int16 grid survive the write/read cycle exactly
    ids = np.array([-32767, -12345, 0, 1, 32767], dtype=np.int16)
    wav = Waveform((ids / 32767.0).astype(np.float32), ACOUSTIC_RATE)
    path = tmp_path / "grid.wav"
    save_wav(str(path), wav)
    back = load_wav(str(path))
    assert back.sample_rate == ACOUSTIC_RATE
    assert np.array_equal(np.rint(back.samples * 32768), ids.astype(np.float64))


def test_wav_stereo_averages(tmp_path):
    path = tmp_path / "st.wav"
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(2)
        fh.setsampwidth(2)
        fh.setframerate(24000)
        fh.writeframes(struct.pack("<4h", 1000, 3000, -2000, -2000))
    wav = load_wav(str(path))
    assert wav.samples.size == 2
    assert np.allclose(wav.samples * 32768, [2000, -2000])


def test_wav_rejects_other_sample_widths(tmp_path):
    path = tmp_path / "w32.wav"
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(4)
        fh.setframerate(24000)
        fh.writeframes(b"\x00" * 8)
    with pytest.raises(ParseError):
        load_wav(str(path))


def test_waveform_validation():
    with pytest.raises(LengthError):
        Waveform(np.zeros(0, dtype=np.float32), 24000)
    with pytest.raises(ParseError):
        Waveform(np.array([np.nan], dtype=np.float32), 24000)
    with pytest.raises(RateError):
        Waveform(np.zeros(10, dtype=np.float32), 0)
    with pytest.raises(ParseError):
        Waveform(np.array([1.5], dtype=np.float32), 24000)


def test_resample_ratio_and_content():
    wav = tone(440.0, 1.0, rate=16000)
    up = resample(wav, 24000)
    assert up.sample_rate == 24000
    assert up.samples.size == 24000
    t = np.arange(2000, 22000) / 24000.0
    ref = 0.5 * np.sin(2 * np.pi * 440.0 * t)
    assert np.abs(up.samples[2000:22000] - ref).max() < 1e-3


def test_resample_identity_rate():
    wav = tone(100.0, 0.5)
    same = resample(wav, ACOUSTIC_RATE)
    assert same.samples is wav.samples or np.array_equal(same.samples, wav.samples)


@pytest.mark.parametrize("n,expect", [(1024, 5), (1100, 5), (24000, 94), (96000, 376)])
def test_mel_frame_count(n, expect):
    wav = Waveform(np.zeros(n, dtype=np.float32) + 1e-4, ACOUSTIC_RATE)
    mel = mel_spectrogram(wav)
    assert mel.num_frames == n // 256 + 1 == expect
    assert mel.dim == MEL_BINS
    assert mel.frame_rate == 93.75
    assert mel.kind == "acoustic"


def test_mel_rejects_sub_window_input():
    with pytest.raises(LengthError):
        mel_spectrogram(Waveform(np.zeros(512, dtype=np.float32), ACOUSTIC_RATE))


def test_mel_silence_hits_log_floor():
    wav = Waveform(np.zeros(24000, dtype=np.float32), ACOUSTIC_RATE)
    mel = mel_spectrogram(wav)
    assert np.all(mel.frames == np.log(LOG_FLOOR).astype(np.float32))


def test_mel_tone_peaks_at_expected_bin():
    mel = mel_spectrogram(tone(1000.0, 1.0))
    mean = mel.frames.mean(axis=0)
    peak = int(np.argmax(mean))
    bank = mel_filterbank(MEL_BINS, 1024, ACOUSTIC_RATE, 0.0, 12000.0)
    centers = np.array([np.argmax(row) for row in bank]) * ACOUSTIC_RATE / 1024
    assert abs(centers[peak] - 1000.0) < 80.0


def test_mel_translation_by_one_hop():
    wav = noise(1.0, seed=3)
    shifted = Waveform(np.concatenate([np.zeros(256, dtype=np.float32),
                                       wav.samples]).astype(np.float32), ACOUSTIC_RATE)
    a = mel_spectrogram(wav).frames
    b = mel_spectrogram(shifted).frames
    # interior frames see identical samples once the pad region is cleared
    assert np.array_equal(a[4:80], b[5:81])


def test_mel_filterbank_shape_and_peak():
    bank = mel_filterbank(80, 1024, 24000, 0.0, 12000.0)
    assert bank.shape == (80, 513)
    # triangles peak at 1 in the continuous domain; the FFT grid samples
    # near but never above that
    assert bank.max() <= 1.0
    assert bank.max(axis=1).min() > 0.5
    assert np.all(bank.sum(axis=1) > 0)
    assert bank.max(axis=1)[-20:].min() > 0.95  # wide high filters hit the peak
    with pytest.raises(RateError):
        mel_filterbank(80, 1024, 24000, 0.0, 12001.0)


def test_pseudo_phonetic_frame_count_and_rate():
    wav = tone(300.0, 2.0, rate=PHONETIC_AUDIO_RATE)
    feats = pseudo_phonetic(wav)
    assert feats.num_frames == 100  # floor(32000/320)
    assert feats.frame_rate == 50.0
    assert feats.dim == 64
    assert feats.kind == "phonetic"


def test_pseudo_phonetic_gain_invariance_is_exact():
    wav = noise(1.5, rate=PHONETIC_AUDIO_RATE, seed=5, amp=0.2)
    quiet = Waveform((wav.samples * 0.125).astype(np.float32), PHONETIC_AUDIO_RATE)
    a = pseudo_phonetic(wav).frames
    b = pseudo_phonetic(quiet).frames
    # 0.125 is a power of two: scaling is exact in float, normalization removes it
    assert np.array_equal(a, b)


def test_pseudo_phonetic_is_normalized():
    feats = pseudo_phonetic(noise(2.0, rate=PHONETIC_AUDIO_RATE, seed=7)).frames
    assert np.abs(feats.mean(axis=0)).max() < 1e-4
    assert np.abs(feats.var(axis=0) - 1.0).max() < 1e-2


def test_pseudo_phonetic_rejects_wrong_rate():
    with pytest.raises(RateError):
        pseudo_phonetic(tone(100.0, 1.0, rate=ACOUSTIC_RATE))


def test_mel_rejects_wrong_rate():
    with pytest.raises(RateError):
        mel_spectrogram(tone(100.0, 1.0, rate=PHONETIC_AUDIO_RATE))


def test_feature_dump_round_trip(tmp_path, rng):
    frames = rng.standard_normal((37, 64)).astype(np.float32)
    fs = FeatureSeq(frames, 50.0, "phonetic")
    path = tmp_path / "f.gvcf"
    write_feature_dump(str(path), fs)
    back = read_feature_dump(str(path), kind="phonetic")
    assert np.array_equal(back.frames, frames)
    assert back.frame_rate == 50.0


def test_feature_dump_rejects_corruption(tmp_path, rng):
    fs = FeatureSeq(rng.standard_normal((5, 8)).astype(np.float32), 50.0, "phonetic")
    path = tmp_path / "f.gvcf"
    write_feature_dump(str(path), fs)
    blob = path.read_bytes()
    for bad in (b"XXXX" + blob[4:], blob[:-5], blob[:10]):
        path.write_bytes(bad)
        with pytest.raises(ParseError):
            read_feature_dump(str(path), kind="phonetic")


def test_feature_seq_validation(rng):
    with pytest.raises(DimensionError):
        FeatureSeq(rng.standard_normal((4, 3, 2)).astype(np.float32), 50.0, "phonetic")
    with pytest.raises(ParseError):
        FeatureSeq(np.full((2, 2), np.inf, dtype=np.float32), 50.0, "acoustic")
    with pytest.raises(LengthError):
        FeatureSeq(np.zeros((0, 4), dtype=np.float32), 50.0, "acoustic")
