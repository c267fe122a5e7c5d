"""Waveform synthesis from LM hidden states.

LM hiddens arrive at the acoustic token rate; linear interpolation lifts
them x4 to the mel frame rate, then a stack of transposed-conv upsampling
stages (x256 total) with residual dilated convolutions renders 24 kHz audio
through a tanh. Training minimizes L1 log-mel distance plus multi-resolution
STFT magnitude terms against the reference waveform; there is no adversary.
A weighted time-domain L1 term anchors the predicted phase: magnitude-only
objectives leave phase free, and in practice gradient descent parks in
broadband minima an octave of loss above the spectrally clean solutions.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import get_window

from genvc import numerics as nm
from genvc.audio import (
    ACOUSTIC_RATE,
    LOG_FLOOR,
    MEL_BINS,
    MEL_FMAX,
    MEL_FMIN,
    MEL_HOP,
    MEL_WINDOW,
    Waveform,
    mel_filterbank,
)
from genvc.errors import DimensionError, LengthError, ParseError, TrainingError

UPSAMPLE_TOTAL = 256
STAGE_FACTOR = 4
N_STAGES = 4
INTERP_FACTOR = 4
STFT_RESOLUTIONS = ((512, 128), (1024, 256), (2048, 512))
WAVE_WEIGHT = 5.0
MEL_EPS = 1e-5


def interpolate_hidden(hidden: np.ndarray) -> np.ndarray:
    """Lift (m, d) hidden rows to (4m, d) by linear interpolation.

    The output grid spans the input endpoints exactly, so row 0 and row
    4m-1 equal the first and last input rows; m == 1 tiles the single row.
    """
    hidden = np.asarray(hidden)
    if hidden.ndim != 2:
        raise DimensionError(f"hidden must be (m, d), got shape {hidden.shape}")
    m = hidden.shape[0]
    if m < 1:
        raise LengthError("cannot interpolate an empty hidden sequence")
    if m == 1:
        return np.repeat(hidden, INTERP_FACTOR, axis=0)
    tgt = np.linspace(0.0, m - 1.0, INTERP_FACTOR * m)
    lo = np.clip(np.floor(tgt).astype(np.int64), 0, m - 2)
    frac = (tgt - lo)[:, None].astype(hidden.dtype)
    return hidden[lo] * (1.0 - frac) + hidden[lo + 1] * frac


class VocoderModel:
    def __init__(self, d_cond: int = 256, channels: int = 128, seed: int = 0, dtype=np.float32):
        self.d_cond = d_cond
        self.channels = channels
        rng = np.random.default_rng(seed)
        self.params: dict[str, nm.Parameter] = {}

        def conv(name, c_out, c_in, k, fan=None, gain=1.0):
            w = nm.he_uniform(rng, (c_out, c_in, k), c_in * k if fan is None else fan, dtype)
            self._add(name + ".w", w * gain if gain != 1.0 else w)
            self._add(name + ".b", nm.zeros((c_out,), dtype))

        conv("proj", channels, d_cond, 1)
        ch = channels
        for i in range(N_STAGES):
            nxt = max(ch // 2, 8)
            # a transposed conv spreads each input over `stride` output
            # positions, so only c_in*k/stride taps feed one output sample
            conv(f"up{i}", nxt, ch, 2 * STAGE_FACTOR, fan=ch * 2 * STAGE_FACTOR // STAGE_FACTOR)
            conv(f"res{i}.c0", nxt, nxt, 3)
            conv(f"res{i}.c1", nxt, nxt, 3)
            ch = nxt
        # quiet start: a full-scale random output saturates the tanh and sits
        # next to the all-silent local optimum, from which spectral losses
        # cannot recover once the mel floor clamp zeroes their gradients
        conv("out", 1, ch, 7, gain=1.0 / 64.0)

    def _add(self, name: str, value: np.ndarray):
        self.params[name] = nm.Parameter(value, "voc." + name)

    def parameters(self) -> list[nm.Parameter]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in state:
                raise ParseError(f"missing parameter 'voc.{k}'")
            if state[k].shape != p.data.shape:
                raise DimensionError(f"parameter 'voc.{k}' shape mismatch")
            p.data = state[k].astype(p.data.dtype)

    def _p(self, name: str) -> nm.Parameter:
        return self.params[name]

    def forward(self, cond) -> nm.Tensor:
        """Conditioning (F, d_cond) -> waveform Tensor (256*F,) in (-1, 1)."""
        if cond.shape[1] != self.d_cond:
            raise DimensionError(f"conditioning dim {cond.shape[1]} != {self.d_cond}")
        x = cond if isinstance(cond, nm.Tensor) else nm.Tensor(np.asarray(cond, dtype=np.float32))
        x = nm.conv1d(x.transpose(), self._p("proj.w"), self._p("proj.b"))
        for i in range(N_STAGES):
            x = nm.leaky_relu(x)
            x = nm.conv_transpose1d(
                x, self._p(f"up{i}.w"), self._p(f"up{i}.b"),
                stride=STAGE_FACTOR, padding=STAGE_FACTOR // 2,
            )
            y = nm.conv1d(nm.leaky_relu(x), self._p(f"res{i}.c0.w"), self._p(f"res{i}.c0.b"),
                          padding=1)
            y = nm.conv1d(nm.leaky_relu(y), self._p(f"res{i}.c1.w"), self._p(f"res{i}.c1.b"),
                          padding=3, dilation=3)
            x = x + y
        x = nm.conv1d(nm.leaky_relu(x), self._p("out.w"), self._p("out.b"), padding=3)
        return nm.tanh(x).reshape(-1)


def vocode(model: VocoderModel, cond: np.ndarray) -> Waveform:
    """Render conditioning frames to 24 kHz audio."""
    cond = np.asarray(cond, dtype=np.float32)
    if cond.ndim != 2 or cond.shape[0] < 1:
        raise LengthError(f"conditioning must be a nonempty (F, d) array, got {cond.shape}")
    with nm.no_grad():
        wav = model.forward(cond).data
    return Waveform(wav.astype(np.float32), ACOUSTIC_RATE)


class _SpectralLoss:
    """Shared DFT/mel constants for the differentiable training losses."""

    def __init__(self, dtype=np.float32):
        self.res = []
        for win, hop in STFT_RESOLUTIONS:
            self.res.append((win, hop) + self._basis(win, dtype))
        self.mel_win, self.mel_hop = MEL_WINDOW, MEL_HOP
        _, _, cos_m, sin_m, w_m = (self.mel_win, self.mel_hop) + self._basis(self.mel_win, dtype)
        self.mel_cos, self.mel_sin, self.mel_window = cos_m, sin_m, w_m
        bank = mel_filterbank(MEL_BINS, MEL_WINDOW, ACOUSTIC_RATE, MEL_FMIN, MEL_FMAX)
        self.mel_bank = nm.Tensor(bank.T.astype(dtype))

    @staticmethod
    def _basis(win: int, dtype):
        n = np.arange(win)[:, None]
        k = np.arange(win // 2 + 1)[None, :]
        ang = 2.0 * np.pi * n * k / win
        window = get_window("hann", win, fftbins=True).astype(dtype)
        return (
            nm.Tensor(np.cos(ang).astype(dtype)),
            nm.Tensor(np.sin(ang).astype(dtype)),
            nm.Tensor(window[None, :]),
        )

    def _magnitude(self, x, win, hop, cos_m, sin_m, window):
        frames = nm.frame_signal(x, win, hop) * window
        re = nm.matmul(frames, cos_m)
        im = nm.matmul(frames, sin_m)
        return nm.sqrt(re * re + im * im + 1e-9)

    def log_mel(self, x) -> nm.Tensor:
        mag = self._magnitude(x, self.mel_win, self.mel_hop, self.mel_cos, self.mel_sin,
                              self.mel_window)
        return nm.log(nm.clamp_min(nm.matmul(mag, self.mel_bank), LOG_FLOOR))

    def _soft_log_mel(self, x) -> nm.Tensor:
        # additive epsilon instead of the reporting clamp: a clamped floor has
        # zero gradient for every prediction bin underneath it
        mag = self._magnitude(x, self.mel_win, self.mel_hop, self.mel_cos, self.mel_sin,
                              self.mel_window)
        return nm.log(nm.matmul(mag, self.mel_bank) + MEL_EPS)

    def __call__(self, pred, target: np.ndarray):
        """(mel_l1, stft_sum) between a predicted Tensor and a target array."""
        t = nm.Tensor(target.astype(np.float32))
        mel_l1 = nm.absolute(self._soft_log_mel(pred) - self._soft_log_mel(t)).mean()
        stft = None
        for win, hop, cos_m, sin_m, window in self.res:
            mp = self._magnitude(pred, win, hop, cos_m, sin_m, window)
            mt = self._magnitude(t, win, hop, cos_m, sin_m, window)
            term = nm.absolute(mp - mt).mean()
            stft = term if stft is None else stft + term
        return mel_l1, stft


def train_vocoder(
    model: VocoderModel,
    pairs: list[tuple[np.ndarray, np.ndarray]],
    steps: int,
    lr: float = 2e-4,
    weight_decay: float = 0.01,
    chunk_seconds: float = 0.64,
    seed: int = 0,
    log_every: int = 0,
) -> list[tuple[int, float, float, float]]:
    """Adam training on random fixed-length chunks.

    `pairs` holds (cond, wav) per utterance with cond at the mel frame rate
    (so wav length is 256 * len(cond), zero-padded if the source ran short).
    Returns (step, mel_l1, stft, wave) rows.
    """
    if not pairs:
        raise LengthError("no vocoder training pairs")
    chunk_frames = int(round(chunk_seconds * ACOUSTIC_RATE)) // MEL_HOP
    for cond, wav in pairs:
        if wav.size != UPSAMPLE_TOTAL // INTERP_FACTOR * INTERP_FACTOR * cond.shape[0]:
            raise DimensionError(
                f"waveform length {wav.size} != 256 * {cond.shape[0]} conditioning frames"
            )
        if cond.shape[0] < chunk_frames:
            raise LengthError(
                f"utterance shorter than one {chunk_seconds:.2f}s chunk ({chunk_frames} frames)"
            )
    rng = np.random.default_rng(seed)
    opt = nm.Adam(model.parameters(), lr=lr, weight_decay=weight_decay)
    spectral = _SpectralLoss()
    curve = []
    for step in range(steps):
        # random chunk sampling keeps gradient noise high, and a fixed step
        # size parks the loss on a noise floor well above the reachable
        # minimum; halving twice late in the budget settles it
        if steps >= 8 and step in (steps // 2, steps * 3 // 4):
            opt.lr *= 0.5
        cond, wav = pairs[rng.integers(len(pairs))]
        f0 = int(rng.integers(cond.shape[0] - chunk_frames + 1))
        chunk_cond = cond[f0 : f0 + chunk_frames]
        chunk_wav = wav[f0 * MEL_HOP : (f0 + chunk_frames) * MEL_HOP]
        pred = model.forward(chunk_cond)
        mel_l1, stft = spectral(pred, chunk_wav)
        wave = nm.absolute(pred - nm.Tensor(chunk_wav.astype(np.float32))).mean()
        loss = mel_l1 + stft + WAVE_WEIGHT * wave
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append((step, float(mel_l1.data), float(stft.data), float(wave.data)))
        if log_every and step % log_every == 0:
            print(f"step {step}: mel_l1 {float(mel_l1.data):.4f} stft {float(stft.data):.4f} "
                  f"wave {float(wave.data):.4f}")
    return curve
