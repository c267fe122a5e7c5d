"""Run configuration and corpus manifests.

One flat config object carries every tunable across the three training
phases, conversion, and evaluation, so a checkpoint can embed the exact
settings that produced it. JSON overrides are strict: unknown keys are
rejected rather than silently ignored.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, fields

from genvc.errors import ConfigError, ParseError
from genvc.lm import LmConfig, SamplingParams


@dataclass
class RunConfig:
    # mel analysis (24 kHz acoustic branch)
    mel_window: int = 1024
    mel_hop: int = 256
    mel_bins: int = 80
    # pseudo-phonetic features (16 kHz branch)
    phonetic_dim: int = 64
    # tokenizers
    codes_phonetic: int = 256
    codes_acoustic: int = 1024
    code_dim: int = 512
    dvae_hidden: int = 256
    commitment_weight: float = 0.25
    # style encoder
    style_latents: int = 32
    perceiver_blocks: int = 4
    perceiver_heads: int = 8
    perceiver_head_dim: int = 64
    # language model
    d_model: int = 256
    lm_layers: int = 6
    lm_heads: int = 8
    max_token_positions: int = 512
    alpha: float = 0.01
    beta: float = 1.0
    # sampling
    temperature: float = 0.85
    top_k: int = 15
    top_p: float = 0.85
    repetition_penalty: float = 2.0
    length_penalty: float = 1.0
    # vocoder
    vocoder_channels: int = 128
    vocoder_chunk_seconds: float = 0.64
    # optimization
    lr_dvae: float = 1e-4
    lr_lm: float = 1e-4
    lr_vocoder: float = 2e-4
    lr_decay_factor: float = 0.5
    lr_decay_epochs: int = 5
    weight_decay_vocoder: float = 0.01
    steps_dvae: int = 2000
    steps_lm: int = 4000
    steps_vocoder: int = 2000
    # segmentation windows (seconds)
    dvae_clip_seconds: float = 6.0
    prompt_seconds_min: float = 3.0
    prompt_seconds_max: float = 6.0
    clip_seconds_min: float = 1.2
    clip_seconds_max: float = 8.0

    def __post_init__(self):
        positive = [
            "mel_window", "mel_hop", "mel_bins", "phonetic_dim", "codes_phonetic",
            "codes_acoustic", "code_dim", "dvae_hidden", "style_latents",
            "perceiver_blocks", "perceiver_heads", "perceiver_head_dim", "d_model",
            "lm_layers", "lm_heads", "max_token_positions", "temperature", "top_k",
            "vocoder_channels", "vocoder_chunk_seconds", "lr_dvae", "lr_lm",
            "lr_vocoder", "lr_decay_factor", "lr_decay_epochs", "steps_dvae",
            "steps_lm", "steps_vocoder", "dvae_clip_seconds", "prompt_seconds_min",
            "prompt_seconds_max", "clip_seconds_min", "clip_seconds_max",
        ]
        for key in positive:
            if getattr(self, key) <= 0:
                raise ConfigError(f"'{key}' must be positive, got {getattr(self, key)}")
        for key in ("alpha", "beta", "weight_decay_vocoder"):
            if getattr(self, key) < 0:
                raise ConfigError(f"'{key}' must be nonnegative, got {getattr(self, key)}")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"'top_p' must be in (0, 1], got {self.top_p}")
        if self.repetition_penalty < 1.0 or self.length_penalty <= 0.0:
            raise ConfigError("penalties must satisfy repetition >= 1 and length > 0")
        if self.prompt_seconds_min > self.prompt_seconds_max:
            raise ConfigError("prompt window min exceeds max")
        if self.clip_seconds_min > self.clip_seconds_max:
            raise ConfigError("clip window min exceeds max")

    def to_dict(self) -> dict:
        return asdict(self)

    def lm_config(self) -> LmConfig:
        return LmConfig(
            d_model=self.d_model,
            n_layers=self.lm_layers,
            n_heads=self.lm_heads,
            codes_phonetic=self.codes_phonetic,
            codes_acoustic=self.codes_acoustic,
            n_style=self.style_latents,
            max_token_positions=self.max_token_positions,
            alpha=self.alpha,
            beta=self.beta,
        )

    def sampling_params(self) -> SamplingParams:
        return SamplingParams(
            temperature=self.temperature,
            top_k=self.top_k,
            top_p=self.top_p,
            repetition_penalty=self.repetition_penalty,
            length_penalty=self.length_penalty,
        )


def config_from_dict(values: dict) -> RunConfig:
    if not isinstance(values, dict):
        raise ConfigError(f"config must be a JSON object, got {type(values).__name__}")
    known = {f.name: f.type for f in fields(RunConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, val in values.items():
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"'{key}' must be a number, got {val!r}")
    return RunConfig(**values)


def load_config(path: str | None) -> RunConfig:
    """RunConfig from a JSON file of overrides; None means all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            values = json.load(fh)
    except OSError as ex:
        raise ConfigError(f"cannot read config '{path}': {ex}") from ex
    except json.JSONDecodeError as ex:
        raise ConfigError(f"config '{path}' is not valid JSON: {ex}") from ex
    return config_from_dict(values)


@dataclass
class ManifestEntry:
    path: str
    speaker: str
    duration: float


def load_manifest(path: str) -> list[ManifestEntry]:
    """Corpus CSV with header path,speaker,duration; paths resolve
    relative to the manifest's directory and must exist."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as ex:
        raise ParseError(f"cannot read manifest '{path}': {ex}") from ex
    if not rows or [c.strip() for c in rows[0]] != ["path", "speaker", "duration"]:
        raise ParseError(f"manifest '{path}' must start with header 'path,speaker,duration'")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"manifest '{path}' line {lineno}: expected 3 columns, got {len(row)}")
        audio = row[0] if os.path.isabs(row[0]) else os.path.join(base, row[0])
        if not os.path.exists(audio):
            raise ParseError(f"manifest '{path}' line {lineno}: no such file '{row[0]}'")
        try:
            duration = float(row[2])
        except ValueError as ex:
            raise ParseError(f"manifest '{path}' line {lineno}: bad duration '{row[2]}'") from ex
        if duration <= 0:
            raise ParseError(f"manifest '{path}' line {lineno}: duration must be positive")
        entries.append(ManifestEntry(audio, row[1].strip(), duration))
    if not entries:
        raise ParseError(f"manifest '{path}' lists no utterances")
    return entries
