"""Waveform I/O, resampling, and the two feature front ends.

Acoustic features are 80-band log-mel spectrograms of 24 kHz audio (window
1024, hop 256, 93.75 frames/s). Content features are a coarser 16 kHz
log-mel (hop 320, 50 frames/s) normalized per utterance and per dimension,
standing in for any external self-supervised feature stream of the same
rate; dumps of such streams can be imported instead.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window, resample_poly

from genvc.errors import DimensionError, LengthError, ParseError, RateError

ACOUSTIC_RATE = 24000
PHONETIC_AUDIO_RATE = 16000
MEL_WINDOW = 1024
MEL_HOP = 256
MEL_BINS = 80
MEL_FMIN = 0.0
MEL_FMAX = 12000.0
LOG_FLOOR = 1e-5
PHONETIC_WINDOW = 640
PHONETIC_HOP = 320
PHONETIC_FMAX = 8000.0

MEL_FRAME_RATE = ACOUSTIC_RATE / MEL_HOP          # 93.75 Hz
PHONETIC_FRAME_RATE = PHONETIC_AUDIO_RATE / PHONETIC_HOP  # 50 Hz

_DUMP_MAGIC = b"GVCF"
_DUMP_VERSION = 1


@dataclass
class Waveform:
    """Mono audio; samples are float32 with |s| <= 1."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise LengthError("waveform must be a nonempty 1-d sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ParseError("waveform contains non-finite samples")
        peak = float(np.abs(self.samples).max())
        if peak > 1.0 + 1e-6:
            raise ParseError(f"waveform peak {peak:.4f} exceeds 1.0; normalize first")
        if self.sample_rate <= 0:
            raise RateError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureSeq:
    """A (T, d) float32 frame matrix at a fixed frame rate."""

    frames: np.ndarray
    frame_rate: float
    kind: str  # "acoustic" or "phonetic"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise DimensionError(f"feature frames must be (T, d), got {self.frames.shape}")
        if self.frames.shape[0] == 0:
            raise LengthError("feature sequence is empty")
        if not np.all(np.isfinite(self.frames)):
            raise ParseError("feature frames contain non-finite values")
        if self.kind not in ("acoustic", "phonetic"):
            raise DimensionError(f"unknown feature kind '{self.kind}'")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def load_wav(path) -> Waveform:
    """Read a 16-bit PCM WAV; stereo is averaged down to mono."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n = fh.getnframes()
            raw = fh.readframes(n)
    except (wave.Error, EOFError, FileNotFoundError, IsADirectoryError) as exc:
        raise ParseError(f"cannot read WAV '{path}': {exc}") from exc
    if width != 2:
        raise ParseError(f"'{path}': only 16-bit PCM supported, got {8 * width}-bit")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return Waveform(data, rate)


def save_wav(path, wav: Waveform) -> None:
    """Write mono 16-bit PCM."""
    pcm = np.clip(np.rint(wav.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wav.sample_rate)
        fh.writeframes(pcm.tobytes())


def resample(wav: Waveform, target_rate: int) -> Waveform:
    """Band-limited polyphase resampling."""
    if target_rate <= 0:
        raise RateError(f"target rate must be positive, got {target_rate}")
    if target_rate == wav.sample_rate:
        return Waveform(wav.samples.copy(), wav.sample_rate)
    g = np.gcd(int(wav.sample_rate), int(target_rate))
    out = resample_poly(wav.samples.astype(np.float64), target_rate // g, wav.sample_rate // g)
    peak = float(np.abs(out).max())
    if peak > 1.0:
        out = out / peak  # tame band-limiting overshoot
    return Waveform(out.astype(np.float32), target_rate)


def _mel_scale(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_inverse(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bins: int, n_fft: int, sample_rate: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filters (n_bins, n_fft//2 + 1), peak one."""
    if fmax > sample_rate / 2:
        raise RateError(f"mel fmax {fmax} above Nyquist {sample_rate / 2}")
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    edges = _mel_inverse(np.linspace(_mel_scale(fmin), _mel_scale(fmax), n_bins + 2))
    bank = np.zeros((n_bins, freqs.size), dtype=np.float64)
    for i in range(n_bins):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - freqs) / max(hi - mid, 1e-12)
        bank[i] = np.clip(np.minimum(up, down), 0.0, 1.0)
    return bank.astype(np.float32)


def _stft_magnitude(samples: np.ndarray, window: int, hop: int, pad: int) -> np.ndarray:
    """(F, window//2+1) magnitudes; reflection-padded, periodic Hann."""
    x = np.pad(samples.astype(np.float64), pad, mode="reflect") if pad else samples.astype(np.float64)
    n_frames = 1 + (x.size - window) // hop
    idx = hop * np.arange(n_frames)[:, None] + np.arange(window)[None, :]
    frames = x[idx] * get_window("hann", window, fftbins=True)
    return np.abs(np.fft.rfft(frames, axis=1))


def mel_spectrogram(wav: Waveform) -> FeatureSeq:
    """80-band log-mel of 24 kHz audio; frame count is floor(T/256) + 1."""
    if wav.sample_rate != ACOUSTIC_RATE:
        raise RateError(f"mel_spectrogram expects {ACOUSTIC_RATE} Hz audio, got {wav.sample_rate}")
    if wav.samples.size < MEL_WINDOW:
        raise LengthError(f"audio shorter than one window ({MEL_WINDOW} samples)")
    mag = _stft_magnitude(wav.samples, MEL_WINDOW, MEL_HOP, pad=MEL_WINDOW // 2)
    mag = mag[: wav.samples.size // MEL_HOP + 1]
    bank = mel_filterbank(MEL_BINS, MEL_WINDOW, ACOUSTIC_RATE, MEL_FMIN, MEL_FMAX)
    mel = np.log(np.maximum(mag @ bank.T.astype(np.float64), LOG_FLOOR))
    return FeatureSeq(mel.astype(np.float32), MEL_FRAME_RATE, "acoustic")


def pseudo_phonetic(wav: Waveform, dim: int = 64) -> FeatureSeq:
    """Speaker-flattened content features at 50 Hz from 16 kHz audio.

    A 64-band log-mel (window 640, hop 320) normalized per utterance to zero
    mean and unit variance in every dimension; the normalization makes the
    output invariant to input gain. Frame count is floor(T/320).
    """
    if wav.sample_rate != PHONETIC_AUDIO_RATE:
        raise RateError(
            f"pseudo_phonetic expects {PHONETIC_AUDIO_RATE} Hz audio, got {wav.sample_rate}"
        )
    n_frames = wav.samples.size // PHONETIC_HOP
    if n_frames < 1:
        raise LengthError(f"audio shorter than one hop ({PHONETIC_HOP} samples)")
    pad = (PHONETIC_WINDOW - PHONETIC_HOP) // 2
    mag = _stft_magnitude(wav.samples, PHONETIC_WINDOW, PHONETIC_HOP, pad=pad)
    mag = mag[:n_frames]
    bank = mel_filterbank(dim, PHONETIC_WINDOW, PHONETIC_AUDIO_RATE, 0.0, PHONETIC_FMAX)
    feats = np.log(np.maximum(mag @ bank.T.astype(np.float64), LOG_FLOOR))
    mu = feats.mean(axis=0, keepdims=True)
    sd = np.sqrt(feats.var(axis=0, keepdims=True) + 1e-8)
    return FeatureSeq(((feats - mu) / sd).astype(np.float32), PHONETIC_FRAME_RATE, "phonetic")


def write_feature_dump(path, fs: FeatureSeq) -> None:
    """Serialize frames as magic/version/rate/T/d plus little-endian f32."""
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<I", _DUMP_VERSION))
        fh.write(struct.pack("<d", float(fs.frame_rate)))
        fh.write(struct.pack("<QQ", fs.num_frames, fs.dim))
        fh.write(fs.frames.astype("<f4").tobytes())


def read_feature_dump(path, kind: str = "phonetic") -> FeatureSeq:
    """Load a feature dump; shape and rate come from the header."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 32 or blob[:4] != _DUMP_MAGIC:
        raise ParseError(f"'{path}' is not a feature dump")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _DUMP_VERSION:
        raise ParseError(f"'{path}': unsupported feature dump version {version}")
    (rate,) = struct.unpack_from("<d", blob, 8)
    t, d = struct.unpack_from("<QQ", blob, 16)
    need = 32 + 4 * t * d
    if len(blob) != need:
        raise ParseError(f"'{path}': expected {need} bytes, found {len(blob)}")
    frames = np.frombuffer(blob, dtype="<f4", count=t * d, offset=32).reshape(t, d)
    return FeatureSeq(frames.copy(), rate, kind)
