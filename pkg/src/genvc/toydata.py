"""Synthetic two-speaker corpus for self-contained runs.

Speakers are separated by pitch class (how sparsely they populate a shared
partial grid) and by a per-speaker formant palette; utterances are strings
of palette morphs crossfaded over a continuously voiced partial stack.
Every partial sits on a multiple of the analysis frame rate, so steady
segments repeat exactly once per mel frame and their spectra are
stationary; partials run to just under Nyquist and a small pedestal keeps
the lowest band off its floor, so every mel band stays lit and log-domain
losses see no dead bins. Nothing here sounds like speech, but it carries
enough speaker/content structure for the pipeline to disentangle, and it
is deterministic per seed.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from genvc.audio import ACOUSTIC_RATE, MEL_HOP, Waveform, save_wav
from genvc.errors import LengthError

_SYLLABLE_SECONDS = (0.25, 0.45)
_CROSSFADE_SECONDS = 0.03
_UTTERANCE_SECONDS = (2.4, 3.6)
_PEAK = 0.9
_GRID_HZ = ACOUSTIC_RATE / MEL_HOP  # one waveform period per mel frame
_MAX_PARTIAL_HZ = 11950.0
_PEDESTAL = 0.35
_OFF_CLASS_GAIN = 0.10


def _bumps(freqs: np.ndarray, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    return np.exp(
        -((freqs[:, None] - centers[None, :]) ** 2) / (2.0 * widths[None, :] ** 2)
    ).sum(axis=1)


def _speaker_voice(speaker: int, rng: np.random.Generator) -> dict:
    """Pitch class (grid stride), base spectral palette, fixed partial phases."""
    kmax = int(_MAX_PARTIAL_HZ / _GRID_HZ)
    ks = np.arange(1, kmax + 1)
    freqs = ks * _GRID_HZ
    centers = np.sort(rng.uniform(350.0, 9000.0, size=3))
    widths = rng.uniform(120.0, 400.0, size=3)
    # per-speaker spectral tilt on top of the palette: pitch class alone
    # leaves long-term spectra close enough to crowd the style margin
    tilt = 0.25 + 0.1 * speaker
    base = (0.2 / ks**tilt) * (1.0 + 1.5 * _bumps(freqs, centers, widths))
    # speaker s keeps every (s+1)-th partial at full strength; the rest are
    # attenuated, which shifts the perceived pitch up the grid per speaker
    stride = speaker + 1
    base[ks % stride != 0] *= _OFF_CLASS_GAIN
    phases = rng.uniform(0.0, 2.0 * np.pi, size=kmax)
    return {"freqs": freqs, "base": base, "phases": phases}


def synth_utterance(voice: dict, rng: np.random.Generator) -> Waveform:
    n = int(round(rng.uniform(*_UTTERANCE_SECONDS) * ACOUSTIC_RATE))
    bounds = [0]
    while bounds[-1] < n:
        bounds.append(bounds[-1] + int(round(rng.uniform(*_SYLLABLE_SECONDS) * ACOUSTIC_RATE)))
    levels = []
    gains = []
    for _ in range(len(bounds) - 1):
        centers = np.sort(rng.uniform(350.0, 9000.0, size=2))
        widths = rng.uniform(120.0, 400.0, size=2)
        levels.append(rng.uniform(0.7, 1.0))
        gains.append(voice["base"] * (1.0 + 1.5 * _bumps(voice["freqs"], centers, widths))
                     * levels[-1])

    # partition-of-unity syllable weights: a raised-cosine step rises across
    # each interior boundary, so partial amplitudes morph without any gap
    xfade = int(_CROSSFADE_SECONDS * ACOUSTIC_RATE)
    rises = []
    for pos in bounds[1:-1]:
        a, b = max(pos - xfade // 2, 0), min(pos + xfade // 2, n)
        r = np.zeros(n)
        r[b:] = 1.0
        if b > a:
            r[a:b] = 0.5 - 0.5 * np.cos(np.pi * np.arange(b - a) / (b - a))
        rises.append(r)
    weights = np.zeros((n, len(gains)))
    weights[:, 0] = 1.0 if not rises else 1.0 - rises[0]
    for j in range(1, len(gains)):
        weights[:, j] = (rises[j - 1] - rises[j]) if j < len(rises) else rises[j - 1]

    t = np.arange(n) / ACOUSTIC_RATE
    amp = weights @ np.stack(gains)
    samples = _PEDESTAL * (weights @ np.asarray(levels))
    for k in range(voice["freqs"].size):
        samples += amp[:, k] * np.sin(2.0 * np.pi * voice["freqs"][k] * t + voice["phases"][k])

    fade = min(int(0.01 * ACOUSTIC_RATE), n // 2)
    samples[:fade] *= 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    samples[n - fade:] *= 0.5 + 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    samples = samples * (_PEAK / max(np.abs(samples).max(), 1e-9))
    return Waveform(samples.astype(np.float32), ACOUSTIC_RATE)


def make_toy_corpus(out_dir: str, n_utterances: int = 10, n_speakers: int = 2,
                    seed: int = 0) -> str:
    """Write WAVs plus manifest.csv into out_dir; returns the manifest path.

    Utterances round-robin over speakers, so n_utterances must be at least
    n_speakers for every voice to appear.
    """
    if n_utterances < n_speakers:
        raise LengthError(f"need at least {n_speakers} utterances to cover all speakers")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    voices = [_speaker_voice(s, rng) for s in range(n_speakers)]
    manifest_path = os.path.join(out_dir, "manifest.csv")
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "speaker", "duration"])
        for i in range(n_utterances):
            spk = i % n_speakers
            wav = synth_utterance(voices[spk], rng)
            name = f"spk{spk}_utt{i:03d}.wav"
            save_wav(os.path.join(out_dir, name), wav)
            writer.writerow([name, f"spk{spk}", f"{wav.duration:.6f}"])
    return manifest_path
