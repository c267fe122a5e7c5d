"""Discrete VAEs that turn feature frames into token ids and back.

One model instance tokenizes content features (50 Hz in, 12.5 Hz out,
256 codes) and a second tokenizes mel features (93.75 Hz in, 23.4375 Hz out,
1024 codes). The encoder downsamples by exactly 4 (two stride-2 convs into
the hidden width, three residual blocks, a 1x1 projection to the code
dimension); the decoder mirrors it with two stride-2 transposed convs.
Quantization is nearest-neighbor with a straight-through gradient; the
codebook learns from its own loss term plus a weighted commitment term.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from genvc import numerics as nm
from genvc.audio import FeatureSeq
from genvc.errors import (
    DimensionError,
    IndexRangeError,
    LengthError,
    ParseError,
    RateError,
    TrainingError,
)

DOWNSAMPLE = 4
PHONETIC_CODES = 256
ACOUSTIC_CODES = 1024

_TOKEN_MAGIC = b"GVCT"
_TOKEN_VERSION = 1

_KIND_RATES = {"phonetic": 12.5, "acoustic": 23.4375}


@dataclass
class TokenSeq:
    """Integer token ids at a fixed token rate."""

    ids: np.ndarray
    vocab: int
    token_rate: float
    kind: str

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int32)
        if self.ids.ndim != 1:
            raise DimensionError(f"token ids must be 1-d, got shape {self.ids.shape}")
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= self.vocab):
            raise IndexRangeError(f"token id outside [0, {self.vocab})")
        if self.kind not in _KIND_RATES:
            raise DimensionError(f"unknown token kind '{self.kind}'")
        if self.token_rate != _KIND_RATES[self.kind]:
            raise RateError(
                f"'{self.kind}' tokens run at {_KIND_RATES[self.kind]} Hz, got {self.token_rate}"
            )

    def __len__(self) -> int:
        return self.ids.size

    @property
    def duration(self) -> float:
        return self.ids.size / self.token_rate


class DvaeModel:
    """Encoder, codebook, and decoder for one feature kind."""

    def __init__(self, kind: str, d_in: int, n_codes: int, hidden: int = 256,
                 code_dim: int = 512, seed: int = 0, dtype=np.float32):
        if kind not in _KIND_RATES:
            raise DimensionError(f"unknown token kind '{kind}'")
        self.kind = kind
        self.d_in = d_in
        self.n_codes = n_codes
        self.hidden = hidden
        self.code_dim = code_dim
        rng = np.random.default_rng(seed)
        self.params: dict[str, nm.Parameter] = {}

        def conv(name, c_out, c_in, k):
            self._add(name + ".w", nm.fanin_uniform(rng, (c_out, c_in, k), c_in * k, dtype))
            self._add(name + ".b", nm.zeros((c_out,), dtype))

        conv("enc.in0", hidden, d_in, 3)
        conv("enc.in1", hidden, hidden, 3)
        for i in range(3):
            conv(f"enc.res{i}.c0", hidden, hidden, 3)
            conv(f"enc.res{i}.c1", hidden, hidden, 3)
        conv("enc.out", code_dim, hidden, 1)
        self._add("codebook", nm.fanin_uniform(rng, (n_codes, code_dim), code_dim, dtype))
        conv("dec.in", hidden, code_dim, 1)
        for i in range(3):
            conv(f"dec.res{i}.c0", hidden, hidden, 3)
            conv(f"dec.res{i}.c1", hidden, hidden, 3)
        conv("dec.up0", hidden, hidden, 4)
        conv("dec.up1", d_in, hidden, 4)

    def _add(self, name: str, value: np.ndarray):
        self.params[name] = nm.Parameter(value, name)

    def parameters(self) -> list[nm.Parameter]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in state:
                raise ParseError(f"missing parameter '{k}'")
            if state[k].shape != p.data.shape:
                raise DimensionError(
                    f"parameter '{k}' shape {state[k].shape} != {p.data.shape}"
                )
            p.data = state[k].astype(p.data.dtype)

    def _p(self, name: str) -> nm.Parameter:
        return self.params[name]

    def _resblock(self, x, prefix: str):
        y = nm.relu(x)
        y = nm.conv1d(y, self._p(prefix + ".c0.w"), self._p(prefix + ".c0.b"), padding=1)
        y = nm.relu(y)
        y = nm.conv1d(y, self._p(prefix + ".c1.w"), self._p(prefix + ".c1.b"), padding=1)
        return x + y

    def encoder(self, x) -> nm.Tensor:
        """(d_in, T) -> (code_dim, T/4); T must be a multiple of 4."""
        if x.shape[1] % DOWNSAMPLE:
            raise LengthError(f"encoder input length {x.shape[1]} not a multiple of {DOWNSAMPLE}")
        x = nm.relu(nm.conv1d(x, self._p("enc.in0.w"), self._p("enc.in0.b"), stride=2, padding=1))
        x = nm.relu(nm.conv1d(x, self._p("enc.in1.w"), self._p("enc.in1.b"), stride=2, padding=1))
        for i in range(3):
            x = self._resblock(x, f"enc.res{i}")
        return nm.conv1d(x, self._p("enc.out.w"), self._p("enc.out.b"))

    def decoder(self, z) -> nm.Tensor:
        """(code_dim, T') -> (d_in, 4*T')."""
        x = nm.conv1d(z, self._p("dec.in.w"), self._p("dec.in.b"))
        for i in range(3):
            x = self._resblock(x, f"dec.res{i}")
        x = nm.relu(x)
        x = nm.conv_transpose1d(x, self._p("dec.up0.w"), self._p("dec.up0.b"), stride=2, padding=1)
        x = nm.relu(x)
        return nm.conv_transpose1d(x, self._p("dec.up1.w"), self._p("dec.up1.b"), stride=2, padding=1)


def quantize(codebook: np.ndarray, v: np.ndarray) -> tuple[int, np.ndarray]:
    """Nearest codebook row by squared distance; ties go to the lowest index."""
    codebook = np.asarray(codebook)
    v = np.asarray(v)
    if v.shape != (codebook.shape[1],):
        raise DimensionError(f"vector shape {v.shape} != code dim ({codebook.shape[1]},)")
    d = ((codebook - v[None, :]) ** 2).sum(axis=1)
    idx = int(np.argmin(d))
    return idx, codebook[idx].copy()


def _nearest_ids(codebook: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Batched nearest-row lookup for z (T, D)."""
    d = (z * z).sum(axis=1, keepdims=True) - 2.0 * z @ codebook.T + (codebook * codebook).sum(axis=1)[None, :]
    return np.argmin(d, axis=1).astype(np.int32)


def truncated_frames(fs: FeatureSeq) -> np.ndarray:
    """Right-truncate to a multiple of the downsample factor."""
    t = fs.num_frames - fs.num_frames % DOWNSAMPLE
    if t < DOWNSAMPLE:
        raise LengthError(f"need at least {DOWNSAMPLE} frames, got {fs.num_frames}")
    return fs.frames[:t]


def encode(model: DvaeModel, fs: FeatureSeq) -> TokenSeq:
    """Tokenize a feature sequence at one quarter of its frame rate."""
    if fs.kind != model.kind:
        raise DimensionError(f"model tokenizes '{model.kind}' features, got '{fs.kind}'")
    if fs.dim != model.d_in:
        raise DimensionError(f"feature dim {fs.dim} != model d_in {model.d_in}")
    frames = truncated_frames(fs)
    with nm.no_grad():
        z = model.encoder(nm.Tensor(frames.T)).data
    ids = _nearest_ids(model.params["codebook"].data, z.T)
    return TokenSeq(ids, model.n_codes, fs.frame_rate / DOWNSAMPLE, model.kind)


def decode(model: DvaeModel, tokens: TokenSeq) -> FeatureSeq:
    """Invert token ids to a feature sequence at 4x the token rate."""
    if tokens.kind != model.kind:
        raise DimensionError(f"model decodes '{model.kind}' tokens, got '{tokens.kind}'")
    if tokens.vocab != model.n_codes:
        raise IndexRangeError(f"token vocab {tokens.vocab} != codebook size {model.n_codes}")
    if len(tokens) == 0:
        raise LengthError("cannot decode an empty token sequence")
    z = model.params["codebook"].data[tokens.ids]
    with nm.no_grad():
        out = model.decoder(nm.Tensor(z.T)).data
    return FeatureSeq(out.T.copy(), tokens.token_rate * DOWNSAMPLE, model.kind)


def reconstruction_step(model: DvaeModel, frames: np.ndarray, commitment: float = 0.25):
    """Forward pass with straight-through quantization.

    Returns (total, recon, vq) loss tensors; `frames` is (T, d_in) with T a
    multiple of 4.
    """
    x = nm.Tensor(frames.T)
    z_e = model.encoder(x).transpose()  # (T', D)
    ids = _nearest_ids(model.params["codebook"].data, z_e.data)
    e = nm.embedding(model.params["codebook"], ids)  # (T', D)
    z_q = z_e + (e - z_e.detach()).detach()  # straight-through: d/dz_q == d/dz_e
    recon = model.decoder(z_q.transpose())
    recon_loss = ((recon - x) ** 2).mean()
    codebook_loss = ((e - z_e.detach()) ** 2).mean()
    commit_loss = ((z_e - e.detach()) ** 2).mean()
    vq_loss = codebook_loss + commitment * commit_loss
    return recon_loss + vq_loss, recon_loss, vq_loss


def _seed_codebook(model: DvaeModel, corpus: list[FeatureSeq], rng: np.random.Generator) -> None:
    """Initialize codebook rows from encoder outputs over the corpus.

    A codebook drawn blindly sits off the encoder-output cloud, so one row
    wins every assignment and the rest never receive gradient. Seeding rows
    from actual outputs spreads the initial partition; afterwards the
    codebook trains by gradient only.
    """
    rows = []
    pooled = 0
    for fs in corpus:
        with nm.no_grad():
            z = model.encoder(nm.Tensor(truncated_frames(fs).T)).data
        rows.append(z.T)
        pooled += z.shape[1]
        if pooled >= 4 * model.n_codes:
            break
    pool = np.concatenate(rows, axis=0)
    k = model.n_codes
    if pool.shape[0] >= k:
        pick = rng.choice(pool.shape[0], size=k, replace=False)
        seeds = pool[pick]
    else:
        pick = rng.integers(pool.shape[0], size=k)
        seeds = pool[pick] + 0.01 * rng.standard_normal((k, pool.shape[1]))
    model.params["codebook"].data = seeds.astype(model.params["codebook"].data.dtype)


def train_dvae(
    model: DvaeModel,
    corpus: list[FeatureSeq],
    steps: int,
    lr: float = 1e-4,
    commitment: float = 0.25,
    max_clip_seconds: float = 6.0,
    seed: int = 0,
    log_every: int = 0,
) -> list[tuple[int, float, float, float]]:
    """Adam training over random clips; returns (step, total, recon, vq) rows."""
    if not corpus:
        raise LengthError("empty training corpus")
    for fs in corpus:
        if fs.kind != model.kind or fs.dim != model.d_in:
            raise DimensionError("corpus features do not match the model")
    rng = np.random.default_rng(seed)
    _seed_codebook(model, corpus, rng)
    opt = nm.Adam(model.parameters(), lr=lr)
    curve = []
    for step in range(steps):
        fs = corpus[rng.integers(len(corpus))]
        max_frames = int(max_clip_seconds * fs.frame_rate)
        frames = truncated_frames(fs)
        if frames.shape[0] > max_frames:
            start = int(rng.integers(frames.shape[0] - max_frames + 1))
            start -= start % DOWNSAMPLE
            frames = frames[start : start + max_frames - max_frames % DOWNSAMPLE]
        total, recon, vq = reconstruction_step(model, frames, commitment)
        if not np.isfinite(total.data):
            raise TrainingError(f"non-finite loss at step {step}")
        opt.zero_grad()
        total.backward()
        opt.step()
        curve.append((step, float(total.data), float(recon.data), float(vq.data)))
        if log_every and step % log_every == 0:
            print(f"step {step}: loss {float(total.data):.5f} recon {float(recon.data):.5f}")
    return curve


def write_token_stream(path, tokens: TokenSeq) -> None:
    with open(path, "wb") as fh:
        fh.write(_TOKEN_MAGIC)
        fh.write(struct.pack("<I", _TOKEN_VERSION))
        fh.write(struct.pack("<I", tokens.vocab))
        fh.write(struct.pack("<d", float(tokens.token_rate)))
        fh.write(struct.pack("<Q", len(tokens)))
        fh.write(tokens.ids.astype("<u2").tobytes())


def read_token_stream(path, kind: str) -> TokenSeq:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 28 or blob[:4] != _TOKEN_MAGIC:
        raise ParseError(f"'{path}' is not a token stream")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _TOKEN_VERSION:
        raise ParseError(f"'{path}': unsupported token stream version {version}")
    (vocab,) = struct.unpack_from("<I", blob, 8)
    (rate,) = struct.unpack_from("<d", blob, 12)
    (count,) = struct.unpack_from("<Q", blob, 20)
    if len(blob) != 28 + 2 * count:
        raise ParseError(f"'{path}': expected {28 + 2 * count} bytes, found {len(blob)}")
    ids = np.frombuffer(blob, dtype="<u2", count=count, offset=28).astype(np.int32)
    return TokenSeq(ids, vocab, rate, kind)
