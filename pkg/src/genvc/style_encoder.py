"""Fixed-size style embeddings distilled from a mel prompt.

A bank of learned latent vectors cross-attends to the projected prompt
frames through a stack of attention blocks; keys and values in every block
are the current latents concatenated with the projected prompt. Prompt
frames carry no positional encoding, so the summary is order-insensitive by
construction and prompt length never changes the output shape.
"""

from __future__ import annotations

import numpy as np

from genvc import numerics as nm
from genvc.audio import FeatureSeq
from genvc.errors import DimensionError, ParseError

N_LATENTS = 32


class StyleEncoder:
    def __init__(self, d_mel: int = 80, d_model: int = 256, n_blocks: int = 4,
                 n_heads: int = 8, head_dim: int = 64, n_latents: int = N_LATENTS,
                 seed: int = 0, dtype=np.float32):
        self.d_mel = d_mel
        self.d_model = d_model
        self.n_blocks = n_blocks
        self.n_heads = n_heads
        self.inner = n_heads * head_dim
        self.n_latents = n_latents
        rng = np.random.default_rng(seed)
        self.params: dict[str, nm.Parameter] = {}
        self._add("latents", nm.small_uniform(rng, (n_latents, d_model), 0.02, dtype))
        self._add("in_proj.w", nm.fanin_uniform(rng, (d_mel, d_model), d_mel, dtype))
        self._add("in_proj.b", nm.zeros((d_model,), dtype))
        for i in range(n_blocks):
            p = f"block{i}"
            self._add(p + ".ln_q.g", nm.ones((d_model,), dtype))
            self._add(p + ".ln_q.b", nm.zeros((d_model,), dtype))
            self._add(p + ".ln_kv.g", nm.ones((d_model,), dtype))
            self._add(p + ".ln_kv.b", nm.zeros((d_model,), dtype))
            for w in ("wq", "wk", "wv"):
                self._add(p + f".{w}", nm.fanin_uniform(rng, (d_model, self.inner), d_model, dtype))
            self._add(p + ".wo", nm.fanin_uniform(rng, (self.inner, d_model), self.inner, dtype))
            self._add(p + ".bo", nm.zeros((d_model,), dtype))
        self._add("ln_out.g", nm.ones((d_model,), dtype))
        self._add("ln_out.b", nm.zeros((d_model,), dtype))

    def _add(self, name: str, value: np.ndarray):
        self.params[name] = nm.Parameter(value, "style." + name)

    def parameters(self) -> list[nm.Parameter]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in state:
                raise ParseError(f"missing parameter 'style.{k}'")
            if state[k].shape != p.data.shape:
                raise DimensionError(f"parameter 'style.{k}' shape mismatch")
            p.data = state[k].astype(p.data.dtype)

    def _p(self, name: str) -> nm.Parameter:
        return self.params[name]


def encode_style(enc: StyleEncoder, prompt: FeatureSeq, attn_sink: list | None = None) -> nm.Tensor:
    """Summarize a mel prompt into (n_latents, d_model) style rows."""
    if prompt.kind != "acoustic":
        raise DimensionError(f"style prompts are acoustic features, got '{prompt.kind}'")
    if prompt.dim != enc.d_mel:
        raise DimensionError(f"prompt dim {prompt.dim} != encoder d_mel {enc.d_mel}")
    proj = nm.matmul(nm.Tensor(prompt.frames), enc._p("in_proj.w")) + enc._p("in_proj.b")
    x = enc._p("latents")
    for i in range(enc.n_blocks):
        p = f"block{i}"
        kv_in = nm.concat([x, proj], axis=0)
        q = nm.matmul(nm.layer_norm(x, enc._p(p + ".ln_q.g"), enc._p(p + ".ln_q.b")), enc._p(p + ".wq"))
        kv_n = nm.layer_norm(kv_in, enc._p(p + ".ln_kv.g"), enc._p(p + ".ln_kv.b"))
        k = nm.matmul(kv_n, enc._p(p + ".wk"))
        v = nm.matmul(kv_n, enc._p(p + ".wv"))
        ctx = nm.attention(q, k, v, enc.n_heads, attn_sink=attn_sink)
        x = x + nm.matmul(ctx, enc._p(p + ".wo")) + enc._p(p + ".bo")
    return nm.layer_norm(x, enc._p("ln_out.g"), enc._p("ln_out.b"))
