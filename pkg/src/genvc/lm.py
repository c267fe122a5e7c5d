"""Dual-head causal token LM over packed style/content/acoustic sequences.

A packed sequence is [style rows | o_s, o_1..o_n, o_e | a_s, a_1..a_m, a_e]:
learned style positions first, then content tokens and acoustic tokens from
disjoint vocabularies, each segment wrapped in its own start/end sentinels.
One causal transformer runs over the whole thing; a content head is read at
content positions and an acoustic head at acoustic positions. Style rows
never receive loss.

Generation feeds style rows, the full content segment, and a_s, then samples
acoustic tokens one at a time (repetition penalty, temperature, top-k,
nucleus) until a_e; the final-layer hidden state of every emitted token is
kept for the vocoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scipy.special import erf

from genvc import numerics as nm
from genvc.audio import FeatureSeq
from genvc.dvae import TokenSeq
from genvc.errors import (
    DimensionError,
    IndexRangeError,
    LengthError,
    ParseError,
    TrainingError,
)

ACOUSTIC_TOKEN_RATE = 23.4375


@dataclass
class LmConfig:
    d_model: int = 256
    n_layers: int = 6
    n_heads: int = 8
    codes_phonetic: int = 256
    codes_acoustic: int = 1024
    n_style: int = 32
    max_token_positions: int = 512
    alpha: float = 0.01
    beta: float = 1.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise DimensionError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")

    @property
    def vocab_phonetic(self) -> int:
        return self.codes_phonetic + 2

    @property
    def vocab_acoustic(self) -> int:
        return self.codes_acoustic + 2

    @property
    def phonetic_start(self) -> int:
        return self.codes_phonetic

    @property
    def phonetic_end(self) -> int:
        return self.codes_phonetic + 1

    @property
    def acoustic_start(self) -> int:
        return self.codes_acoustic

    @property
    def acoustic_end(self) -> int:
        return self.codes_acoustic + 1


@dataclass
class SamplingParams:
    temperature: float = 0.85
    top_k: int = 15
    top_p: float = 0.85
    repetition_penalty: float = 2.0
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise DimensionError("temperature must be positive")
        if self.top_k < 1:
            raise DimensionError("top_k must be at least 1")
        if not 0 < self.top_p <= 1:
            raise DimensionError("top_p must lie in (0, 1]")
        if self.repetition_penalty <= 0:
            raise DimensionError("repetition_penalty must be positive")


@dataclass
class PackedSequence:
    """Inputs for one forward pass; token arrays include their sentinels."""

    style: object  # (n_style, d_model) Tensor or ndarray
    phonetic: np.ndarray
    acoustic: np.ndarray
    tags: np.ndarray = field(repr=False)
    n: int
    m: int

    def __len__(self) -> int:
        return self.tags.size


TAG_STYLE, TAG_PHONETIC, TAG_ACOUSTIC = 0, 1, 2


class TokenLm:
    def __init__(self, cfg: LmConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        self.params: dict[str, nm.Parameter] = {}
        self._add("emb_p", nm.small_uniform(rng, (cfg.vocab_phonetic, d), 0.02, dtype))
        self._add("emb_a", nm.small_uniform(rng, (cfg.vocab_acoustic, d), 0.02, dtype))
        self._add("pos_style", nm.small_uniform(rng, (cfg.n_style, d), 0.02, dtype))
        self._add("pos_tok", nm.small_uniform(rng, (cfg.max_token_positions, d), 0.02, dtype))
        for i in range(cfg.n_layers):
            p = f"layer{i}"
            self._add(p + ".ln1.g", nm.ones((d,), dtype))
            self._add(p + ".ln1.b", nm.zeros((d,), dtype))
            for w in ("wq", "wk", "wv", "wo"):
                self._add(p + f".{w}", nm.fanin_uniform(rng, (d, d), d, dtype))
            for b in ("bq", "bk", "bv", "bo"):
                self._add(p + f".{b}", nm.zeros((d,), dtype))
            self._add(p + ".ln2.g", nm.ones((d,), dtype))
            self._add(p + ".ln2.b", nm.zeros((d,), dtype))
            self._add(p + ".w1", nm.fanin_uniform(rng, (d, 4 * d), d, dtype))
            self._add(p + ".b1", nm.zeros((4 * d,), dtype))
            self._add(p + ".w2", nm.fanin_uniform(rng, (4 * d, d), 4 * d, dtype))
            self._add(p + ".b2", nm.zeros((d,), dtype))
        self._add("ln_f.g", nm.ones((d,), dtype))
        self._add("ln_f.b", nm.zeros((d,), dtype))
        self._add("head_p.w", nm.small_uniform(rng, (d, cfg.vocab_phonetic), 0.02, dtype))
        self._add("head_p.b", nm.zeros((cfg.vocab_phonetic,), dtype))
        self._add("head_a.w", nm.small_uniform(rng, (d, cfg.vocab_acoustic), 0.02, dtype))
        self._add("head_a.b", nm.zeros((cfg.vocab_acoustic,), dtype))
        self._masks: dict[int, np.ndarray] = {}

    def _add(self, name: str, value: np.ndarray):
        self.params[name] = nm.Parameter(value, "lm." + name)

    def parameters(self) -> list[nm.Parameter]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in state:
                raise ParseError(f"missing parameter 'lm.{k}'")
            if state[k].shape != p.data.shape:
                raise DimensionError(f"parameter 'lm.{k}' shape mismatch")
            p.data = state[k].astype(p.data.dtype)

    def _p(self, name: str) -> nm.Parameter:
        return self.params[name]

    def _mask(self, length: int) -> np.ndarray:
        if length not in self._masks:
            m = np.triu(np.full((length, length), -np.inf, dtype=np.float32), k=1)
            self._masks[length] = m
        return self._masks[length]

    def forward(self, packed: PackedSequence) -> nm.Tensor:
        """Final-layer hidden states (len(packed), d_model), post-norm."""
        cfg = self.cfg
        s = cfg.n_style
        n, m = packed.n, packed.m
        style = packed.style if isinstance(packed.style, nm.Tensor) else nm.Tensor(packed.style)
        style_x = style + self._p("pos_style")
        phon_x = nm.embedding(self._p("emb_p"), packed.phonetic) + self._p("pos_tok")[: n + 2]
        acou_x = nm.embedding(self._p("emb_a"), packed.acoustic) + self._p("pos_tok")[n + 2 : n + 4 + m]
        x = nm.concat([style_x, phon_x, acou_x], axis=0)
        mask = self._mask(len(packed))
        for i in range(cfg.n_layers):
            p = f"layer{i}"
            h = nm.layer_norm(x, self._p(p + ".ln1.g"), self._p(p + ".ln1.b"))
            q = nm.matmul(h, self._p(p + ".wq")) + self._p(p + ".bq")
            k = nm.matmul(h, self._p(p + ".wk")) + self._p(p + ".bk")
            v = nm.matmul(h, self._p(p + ".wv")) + self._p(p + ".bv")
            ctx = nm.attention(q, k, v, cfg.n_heads, mask=mask)
            x = x + nm.matmul(ctx, self._p(p + ".wo")) + self._p(p + ".bo")
            h2 = nm.layer_norm(x, self._p(p + ".ln2.g"), self._p(p + ".ln2.b"))
            u = nm.gelu(nm.matmul(h2, self._p(p + ".w1")) + self._p(p + ".b1"))
            x = x + nm.matmul(u, self._p(p + ".w2")) + self._p(p + ".b2")
        return nm.layer_norm(x, self._p("ln_f.g"), self._p("ln_f.b"))


def pack(cfg: LmConfig, style, phonetic: TokenSeq, acoustic: TokenSeq) -> PackedSequence:
    """Assemble one training sequence; sentinels added here."""
    style_data = style.data if isinstance(style, nm.Tensor) else np.asarray(style)
    if style_data.shape != (cfg.n_style, cfg.d_model):
        raise DimensionError(
            f"style shape {style_data.shape} != ({cfg.n_style}, {cfg.d_model})"
        )
    if phonetic.kind != "phonetic" or acoustic.kind != "acoustic":
        raise DimensionError("pack expects one phonetic and one acoustic token sequence")
    if phonetic.vocab != cfg.codes_phonetic or acoustic.vocab != cfg.codes_acoustic:
        raise IndexRangeError("token vocabularies do not match the model config")
    n, m = len(phonetic), len(acoustic)
    if n < 1:
        raise LengthError("empty content token sequence")
    if m < 1:
        raise LengthError("empty acoustic token sequence")
    if n + m + 4 > cfg.max_token_positions:
        raise LengthError(
            f"{n + m + 4} token positions exceed the table size {cfg.max_token_positions}"
        )
    phon = np.concatenate(([cfg.phonetic_start], phonetic.ids, [cfg.phonetic_end])).astype(np.int64)
    acou = np.concatenate(([cfg.acoustic_start], acoustic.ids, [cfg.acoustic_end])).astype(np.int64)
    tags = np.concatenate(
        (
            np.full(cfg.n_style, TAG_STYLE, np.uint8),
            np.full(n + 2, TAG_PHONETIC, np.uint8),
            np.full(m + 2, TAG_ACOUSTIC, np.uint8),
        )
    )
    return PackedSequence(style=style, phonetic=phon, acoustic=acou, tags=tags, n=n, m=m)


def generation_loss(loss_phonetic, loss_acoustic, alpha: float, beta: float):
    """Weighted sum of the two segment losses."""
    return alpha * loss_phonetic + beta * loss_acoustic


def forward_loss(lm: TokenLm, packed: PackedSequence):
    """Teacher-forced losses: returns (L_gen, L_phonetic, L_acoustic) tensors."""
    cfg = lm.cfg
    s, n, m = cfg.n_style, packed.n, packed.m
    h = lm.forward(packed)
    phon_h = h[s : s + n + 1]
    phon_logits = nm.matmul(phon_h, lm._p("head_p.w")) + lm._p("head_p.b")
    loss_p = nm.cross_entropy_rows(phon_logits, packed.phonetic[1:])
    acou_h = h[s + n + 2 : s + n + 3 + m]
    acou_logits = nm.matmul(acou_h, lm._p("head_a.w")) + lm._p("head_a.b")
    loss_a = nm.cross_entropy_rows(acou_logits, packed.acoustic[1:])
    return generation_loss(loss_p, loss_a, cfg.alpha, cfg.beta), loss_p, loss_a


def teacher_forced_hidden(lm: TokenLm, style, phonetic: TokenSeq, acoustic: TokenSeq) -> np.ndarray:
    """Hidden rows at the positions where a_1..a_m are fed; (m, d_model)."""
    packed = pack(lm.cfg, style, phonetic, acoustic)
    s, n, m = lm.cfg.n_style, packed.n, packed.m
    with nm.no_grad():
        h = lm.forward(packed).data
    return h[s + n + 3 : s + n + 3 + m].copy()


def filtered_distribution(logits: np.ndarray, history, params: SamplingParams) -> np.ndarray:
    """Probabilities after penalty, temperature, top-k, and nucleus filtering.

    Order: repetition penalty on history ids (positive logits divided,
    negative multiplied), temperature, top-k by logit, then the smallest
    prefix of the remaining distribution whose mass reaches top_p (the token
    crossing the boundary stays in), renormalized.
    """
    logits = np.array(logits, dtype=np.float64, copy=True)
    if logits.ndim != 1:
        raise DimensionError(f"logits must be 1-d, got shape {logits.shape}")
    v = logits.size
    pen = params.repetition_penalty
    if pen != 1.0:
        for i in set(int(t) for t in history):
            if not 0 <= i < v:
                raise IndexRangeError(f"history id {i} outside [0, {v})")
            logits[i] = logits[i] / pen if logits[i] > 0 else logits[i] * pen
    logits = logits / params.temperature
    order = np.argsort(-logits, kind="stable")
    kept = order[: min(params.top_k, v)]
    kl = logits[kept]
    kl = kl - kl.max()
    ke = np.exp(kl)
    kp = ke / ke.sum()
    csum = np.cumsum(kp)
    cut = int(np.searchsorted(csum, params.top_p - 1e-12, side="left")) + 1
    kept = kept[:cut]
    kp = kp[:cut] / kp[:cut].sum()
    probs = np.zeros(v, dtype=np.float64)
    probs[kept] = kp
    return probs


def sample_next(logits: np.ndarray, history, params: SamplingParams,
                rng: np.random.Generator) -> int:
    """Draw one token id from the filtered distribution."""
    probs = filtered_distribution(logits, history, params)
    cs = np.cumsum(probs)
    idx = int(np.searchsorted(cs, rng.random(), side="right"))
    return min(idx, logits.size - 1)


# -- incremental inference ------------------------------------------------

class _Cache:
    """Per-layer preallocated K/V rows for incremental decoding."""

    def __init__(self, n_layers: int, capacity: int, d: int):
        self.k = [np.empty((capacity, d), dtype=np.float32) for _ in range(n_layers)]
        self.v = [np.empty((capacity, d), dtype=np.float32) for _ in range(n_layers)]
        self.t = 0


def _np_ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _np_gelu(x):
    return 0.5 * x * (1.0 + erf(x * 0.7071067811865476))


def _np_softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _prefill(lm: TokenLm, w: dict, x: np.ndarray, cache: _Cache) -> np.ndarray:
    """Run the whole prefix at once, filling the cache; returns last hidden."""
    cfg = lm.cfg
    h_heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    length = x.shape[0]
    mask = lm._mask(length)
    for i in range(cfg.n_layers):
        p = f"layer{i}"
        h = _np_ln(x, w[p + ".ln1.g"], w[p + ".ln1.b"])
        q = h @ w[p + ".wq"] + w[p + ".bq"]
        k = h @ w[p + ".wk"] + w[p + ".bk"]
        v = h @ w[p + ".wv"] + w[p + ".bv"]
        cache.k[i][:length] = k
        cache.v[i][:length] = v
        qh = q.reshape(length, h_heads, dh).transpose(1, 0, 2)
        kh = k.reshape(length, h_heads, dh).transpose(1, 2, 0)
        scores = qh @ kh / np.float32(np.sqrt(dh)) + mask
        att = _np_softmax(scores)
        ctx = (att @ v.reshape(length, h_heads, dh).transpose(1, 0, 2)).transpose(1, 0, 2)
        x = x + ctx.reshape(length, cfg.d_model) @ w[p + ".wo"] + w[p + ".bo"]
        h2 = _np_ln(x, w[p + ".ln2.g"], w[p + ".ln2.b"])
        x = x + _np_gelu(h2 @ w[p + ".w1"] + w[p + ".b1"]) @ w[p + ".w2"] + w[p + ".b2"]
    cache.t = length
    return _np_ln(x, w["ln_f.g"], w["ln_f.b"])[-1]


def _step(lm: TokenLm, w: dict, x: np.ndarray, cache: _Cache) -> np.ndarray:
    """Feed one embedded position; returns its final hidden row."""
    cfg = lm.cfg
    h_heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    t = cache.t
    for i in range(cfg.n_layers):
        p = f"layer{i}"
        h = _np_ln(x, w[p + ".ln1.g"], w[p + ".ln1.b"])
        q = h @ w[p + ".wq"] + w[p + ".bq"]
        cache.k[i][t] = h @ w[p + ".wk"] + w[p + ".bk"]
        cache.v[i][t] = h @ w[p + ".wv"] + w[p + ".bv"]
        kh = cache.k[i][: t + 1].reshape(t + 1, h_heads, dh)
        vh = cache.v[i][: t + 1].reshape(t + 1, h_heads, dh)
        qh = q.reshape(h_heads, dh)
        scores = np.einsum("hd,thd->ht", qh, kh) / np.float32(np.sqrt(dh))
        att = _np_softmax(scores, axis=-1)
        ctx = np.einsum("ht,thd->hd", att, vh).reshape(cfg.d_model)
        x = x + ctx @ w[p + ".wo"] + w[p + ".bo"]
        h2 = _np_ln(x, w[p + ".ln2.g"], w[p + ".ln2.b"])
        x = x + _np_gelu(h2 @ w[p + ".w1"] + w[p + ".b1"]) @ w[p + ".w2"] + w[p + ".b2"]
    cache.t = t + 1
    return _np_ln(x, w["ln_f.g"], w["ln_f.b"])


def generate(
    lm: TokenLm,
    style,
    phonetic: TokenSeq,
    params: SamplingParams,
    rng: np.random.Generator,
    max_new_tokens: int | None = None,
) -> tuple[TokenSeq, np.ndarray, bool]:
    """Sample acoustic tokens for a content sequence under a style.

    Returns (tokens, hidden, truncated): hidden is (m, d_model), one row per
    emitted token, taken where that token was fed back in. The start
    sentinel is never sampled; generation ends at the end sentinel or at the
    position budget, whichever comes first.
    """
    cfg = lm.cfg
    style_data = style.data if isinstance(style, nm.Tensor) else np.asarray(style, dtype=np.float32)
    if style_data.shape != (cfg.n_style, cfg.d_model):
        raise DimensionError(f"style shape {style_data.shape} != ({cfg.n_style}, {cfg.d_model})")
    if phonetic.kind != "phonetic" or phonetic.vocab != cfg.codes_phonetic:
        raise DimensionError("generate expects content tokens matching the model config")
    n = len(phonetic)
    if n < 1:
        raise LengthError("empty content token sequence")
    budget = cfg.max_token_positions - (n + 3)  # room left for a_1.. after a_s
    if budget < 1:
        raise LengthError(f"content length {n} leaves no room to generate")
    if max_new_tokens is not None:
        budget = min(budget, max_new_tokens)
    w_emb_a = lm._p("emb_a").data
    w_pos = lm._p("pos_tok").data
    head_w, head_b = lm._p("head_a.w").data, lm._p("head_a.b").data
    phon_ids = np.concatenate(([cfg.phonetic_start], phonetic.ids, [cfg.phonetic_end]))
    prefix = np.concatenate(
        [
            style_data + lm._p("pos_style").data,
            lm._p("emb_p").data[phon_ids] + w_pos[: n + 2],
            (w_emb_a[cfg.acoustic_start] + w_pos[n + 2])[None, :],
        ]
    ).astype(np.float32)
    cache = _Cache(cfg.n_layers, cfg.n_style + n + 3 + budget, cfg.d_model)
    weights = {k: p.data for k, p in lm.params.items()}
    h = _prefill(lm, weights, prefix, cache)
    emitted: list[int] = []
    hiddens: list[np.ndarray] = []
    truncated = True
    while len(emitted) < budget:
        logits = (h @ head_w + head_b).astype(np.float64)
        logits[cfg.acoustic_end] = logits[cfg.acoustic_end] * params.length_penalty
        logits[cfg.acoustic_start] = -np.inf
        token = sample_next(logits, emitted, params, rng)
        if token == cfg.acoustic_end:
            truncated = False
            break
        pos = n + 3 + len(emitted)
        h = _step(lm, weights, (w_emb_a[token] + w_pos[pos]).astype(np.float32), cache)
        emitted.append(token)
        hiddens.append(h.copy())
    tokens = TokenSeq(np.asarray(emitted, dtype=np.int32), cfg.codes_acoustic,
                      ACOUSTIC_TOKEN_RATE, "acoustic")
    hidden = np.stack(hiddens) if hiddens else np.zeros((0, cfg.d_model), dtype=np.float32)
    return tokens, hidden, truncated


# -- training --------------------------------------------------------------

@dataclass
class LmExample:
    """One utterance prepared for LM training."""

    mel: object  # FeatureSeq
    phonetic: TokenSeq
    acoustic: TokenSeq


def _window_tokens(ids: np.ndarray, rate: float, t0: float, t1: float) -> np.ndarray:
    i0 = int(np.ceil(t0 * rate))
    i1 = int(np.floor(t1 * rate))
    return ids[max(i0, 0) : min(i1, ids.size)]


def train_lm(
    lm: TokenLm,
    enc,
    corpus: list[LmExample],
    steps: int,
    lr: float = 1e-4,
    lr_decay_factor: float = 0.5,
    lr_decay_epochs: int = 5,
    prompt_seconds: tuple[float, float] = (3.0, 6.0),
    clip_seconds: tuple[float, float] = (1.2, 8.0),
    seed: int = 0,
    log_every: int = 0,
) -> list[tuple[int, float, float, float]]:
    """Joint Adam training of the LM and the style encoder.

    Each step draws one utterance, cuts an independent style prompt window
    and a content/acoustic clip window from it, and optimizes the weighted
    teacher-forced loss. Returns (step, L_gen, L_phonetic, L_acoustic) rows.
    """
    from genvc.style_encoder import encode_style

    if not corpus:
        raise LengthError("empty training corpus")
    rng = np.random.default_rng(seed)
    opt = nm.Adam(lm.parameters() + enc.parameters(), lr=lr)
    curve = []
    for step in range(steps):
        ex = corpus[rng.integers(len(corpus))]
        mel = ex.mel
        dur = mel.num_frames / mel.frame_rate
        p_lo = min(prompt_seconds[0], dur)
        p_hi = min(prompt_seconds[1], dur)
        p_len = rng.uniform(p_lo, p_hi)
        p_frames = max(1, int(p_len * mel.frame_rate))
        p_start = int(rng.integers(mel.num_frames - p_frames + 1))
        prompt = FeatureSeq(mel.frames[p_start : p_start + p_frames], mel.frame_rate, "acoustic")
        c_lo = min(clip_seconds[0], dur)
        c_hi = min(clip_seconds[1], dur)
        c_len = rng.uniform(c_lo, c_hi)
        t0 = rng.uniform(0.0, dur - c_len)
        phon_ids = _window_tokens(ex.phonetic.ids, ex.phonetic.token_rate, t0, t0 + c_len)
        acou_ids = _window_tokens(ex.acoustic.ids, ex.acoustic.token_rate, t0, t0 + c_len)
        if phon_ids.size < 1 or acou_ids.size < 1:
            continue
        phon = TokenSeq(phon_ids, ex.phonetic.vocab, ex.phonetic.token_rate, "phonetic")
        acou = TokenSeq(acou_ids, ex.acoustic.vocab, ex.acoustic.token_rate, "acoustic")
        style = encode_style(enc, prompt)
        packed = pack(lm.cfg, style, phon, acou)
        loss, loss_p, loss_a = forward_loss(lm, packed)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite loss at step {step}")
        opt.lr = nm.decayed_lr(lr, step // max(len(corpus), 1), lr_decay_factor, lr_decay_epochs)
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append((step, float(loss.data), float(loss_p.data), float(loss_a.data)))
        if log_every and step % log_every == 0:
            print(f"step {step}: L_gen {float(loss.data):.4f} L_acoustic {float(loss_a.data):.4f}")
    return curve
