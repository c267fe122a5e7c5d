"""Command-line pipeline: phase training, conversion, and evaluation.

Checkpoints from the three phases accumulate in one directory under fixed
names; each later phase loads its prerequisites from there and refuses to
run without them. Every error exits nonzero with a single
'error: <CODE>: <message>' line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from genvc import numerics as nm
from genvc.audio import (
    ACOUSTIC_RATE,
    MEL_HOP,
    PHONETIC_AUDIO_RATE,
    FeatureSeq,
    Waveform,
    load_wav,
    mel_spectrogram,
    pseudo_phonetic,
    resample,
    save_wav,
)
from genvc.checkpoint import load_checkpoint, save_checkpoint
from genvc.config import RunConfig, config_from_dict, load_config, load_manifest
from genvc.dvae import DvaeModel, encode, train_dvae
from genvc.errors import ConfigError, DependencyError, GenvcError, ParseError
from genvc.lm import LmExample, TokenLm, generate, teacher_forced_hidden, train_lm
from genvc.metrics import compute_eer, cosine_similarity, duration_ratio, load_trials
from genvc.style_encoder import StyleEncoder, encode_style
from genvc.toydata import make_toy_corpus
from genvc.vocoder import VocoderModel, interpolate_hidden, train_vocoder, vocode

CKPT_NAMES = {
    "dvae-phonetic": "dvae_phonetic.gvck",
    "dvae-acoustic": "dvae_acoustic.gvck",
    "lm": "lm.gvck",
    "vocoder": "vocoder.gvck",
}
_SAMPLING_KEYS = ("temperature", "top_k", "top_p", "repetition_penalty", "length_penalty")
_ARCH_KEYS = {
    "dvae-phonetic": ("phonetic_dim", "codes_phonetic", "code_dim", "dvae_hidden"),
    "dvae-acoustic": ("mel_bins", "codes_acoustic", "code_dim", "dvae_hidden"),
    "lm": ("mel_bins", "codes_phonetic", "codes_acoustic", "style_latents",
           "perceiver_blocks", "perceiver_heads", "perceiver_head_dim", "d_model",
           "lm_layers", "lm_heads", "max_token_positions"),
    "vocoder": ("d_model", "vocoder_channels"),
}


# -- audio and checkpoint plumbing ------------------------------------------

def _wav_at(path: str, rate: int) -> Waveform:
    wav = load_wav(path)
    return wav if wav.sample_rate == rate else resample(wav, rate)


def _corpus_wavs(manifest_path: str) -> list[Waveform]:
    return [_wav_at(e.path, ACOUSTIC_RATE) for e in load_manifest(manifest_path)]


def _phonetic_features(wav24: Waveform, dim: int) -> FeatureSeq:
    return pseudo_phonetic(resample(wav24, PHONETIC_AUDIO_RATE), dim)


def _ckpt_path(ckpt_dir: str, phase: str, needed_by: str) -> str:
    path = os.path.join(ckpt_dir, CKPT_NAMES[phase])
    if not os.path.exists(path):
        raise DependencyError(
            f"'{needed_by}' requires the {phase} checkpoint '{path}'; run that phase first"
        )
    return path


def _check_arch(ck_config: dict, cfg: RunConfig, phase: str, path: str) -> None:
    for key in _ARCH_KEYS[phase]:
        have = ck_config.get(key)
        want = getattr(cfg, key)
        if have != want:
            raise ConfigError(
                f"checkpoint '{path}' was built with {key}={have} but this run has {key}={want}"
            )


def _build_dvae(kind: str, cfg: RunConfig, seed: int) -> DvaeModel:
    d_in = cfg.phonetic_dim if kind == "phonetic" else cfg.mel_bins
    n_codes = cfg.codes_phonetic if kind == "phonetic" else cfg.codes_acoustic
    return DvaeModel(kind, d_in=d_in, n_codes=n_codes, hidden=cfg.dvae_hidden,
                     code_dim=cfg.code_dim, seed=seed)


def _load_dvae(ckpt_dir: str, kind: str, cfg: RunConfig, needed_by: str) -> DvaeModel:
    phase = f"dvae-{kind}"
    path = _ckpt_path(ckpt_dir, phase, needed_by)
    ck_config, params = load_checkpoint(path)
    _check_arch(ck_config, cfg, phase, path)
    model = _build_dvae(kind, cfg, seed=0)
    model.load_state(params)
    return model


def _build_lm_pair(cfg: RunConfig, seed: int) -> tuple[TokenLm, StyleEncoder]:
    lm = TokenLm(cfg.lm_config(), seed=seed)
    enc = StyleEncoder(d_mel=cfg.mel_bins, d_model=cfg.d_model,
                       n_blocks=cfg.perceiver_blocks, n_heads=cfg.perceiver_heads,
                       head_dim=cfg.perceiver_head_dim, n_latents=cfg.style_latents,
                       seed=seed + 1)
    return lm, enc


def _load_lm(ckpt_dir: str, cfg: RunConfig, needed_by: str) -> tuple[TokenLm, StyleEncoder]:
    path = _ckpt_path(ckpt_dir, "lm", needed_by)
    ck_config, params = load_checkpoint(path)
    _check_arch(ck_config, cfg, "lm", path)
    lm, enc = _build_lm_pair(cfg, seed=0)
    lm.load_state({k[3:]: v for k, v in params.items() if k.startswith("lm.")})
    enc.load_state({k[6:]: v for k, v in params.items() if k.startswith("style.")})
    return lm, enc


def _load_vocoder(ckpt_dir: str, cfg: RunConfig, needed_by: str) -> VocoderModel:
    path = _ckpt_path(ckpt_dir, "vocoder", needed_by)
    ck_config, params = load_checkpoint(path)
    _check_arch(ck_config, cfg, "vocoder", path)
    model = VocoderModel(d_cond=cfg.d_model, channels=cfg.vocoder_channels, seed=0)
    model.load_state(params)
    return model


def _write_curve(path: str, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.8g}" if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")


def _style_vector(enc: StyleEncoder, wav24: Waveform) -> np.ndarray:
    with nm.no_grad():
        return encode_style(enc, mel_spectrogram(wav24)).data.copy()


# -- subcommands -------------------------------------------------------------

def cmd_make_toy_corpus(args) -> int:
    manifest = make_toy_corpus(args.out, n_utterances=args.utterances,
                               n_speakers=args.speakers, seed=args.seed)
    print(manifest)
    return 0


def cmd_train_dvae(args) -> int:
    cfg = load_config(args.config)
    wavs = _corpus_wavs(args.manifest)
    if args.kind == "phonetic":
        corpus = [_phonetic_features(w, cfg.phonetic_dim) for w in wavs]
    else:
        corpus = [mel_spectrogram(w) for w in wavs]
    model = _build_dvae(args.kind, cfg, seed=args.seed)
    curve = train_dvae(model, corpus, steps=cfg.steps_dvae, lr=cfg.lr_dvae,
                       commitment=cfg.commitment_weight,
                       max_clip_seconds=cfg.dvae_clip_seconds, seed=args.seed,
                       log_every=args.log_every)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, CKPT_NAMES[f"dvae-{args.kind}"])
    save_checkpoint(path, cfg.to_dict(), model.state())
    _write_curve(os.path.join(args.out, f"dvae_{args.kind}_loss.csv"),
                 "step,total,recon,vq", curve)
    print(path)
    return 0


def _prepare_example(wav24: Waveform, cfg: RunConfig, dvae_p: DvaeModel,
                     dvae_a: DvaeModel) -> LmExample:
    mel = mel_spectrogram(wav24)
    phonetic = encode(dvae_p, _phonetic_features(wav24, cfg.phonetic_dim))
    acoustic = encode(dvae_a, mel)
    return LmExample(mel=mel, phonetic=phonetic, acoustic=acoustic)


def cmd_train_lm(args) -> int:
    cfg = load_config(args.config)
    dvae_p = _load_dvae(args.out, "phonetic", cfg, "train-lm")
    dvae_a = _load_dvae(args.out, "acoustic", cfg, "train-lm")
    corpus = [_prepare_example(w, cfg, dvae_p, dvae_a) for w in _corpus_wavs(args.manifest)]
    lm, enc = _build_lm_pair(cfg, seed=args.seed)
    curve = train_lm(lm, enc, corpus, steps=cfg.steps_lm, lr=cfg.lr_lm,
                     lr_decay_factor=cfg.lr_decay_factor,
                     lr_decay_epochs=cfg.lr_decay_epochs,
                     prompt_seconds=(cfg.prompt_seconds_min, cfg.prompt_seconds_max),
                     clip_seconds=(cfg.clip_seconds_min, cfg.clip_seconds_max),
                     seed=args.seed, log_every=args.log_every)
    params = {"lm." + k: v for k, v in lm.state().items()}
    params.update({"style." + k: v for k, v in enc.state().items()})
    path = os.path.join(args.out, CKPT_NAMES["lm"])
    save_checkpoint(path, cfg.to_dict(), params)
    _write_curve(os.path.join(args.out, "lm_loss.csv"),
                 "step,L_gen,L_phonetic,L_acoustic", curve)
    print(path)
    return 0


def cmd_train_vocoder(args) -> int:
    cfg = load_config(args.config)
    dvae_p = _load_dvae(args.out, "phonetic", cfg, "train-vocoder")
    dvae_a = _load_dvae(args.out, "acoustic", cfg, "train-vocoder")
    lm, enc = _load_lm(args.out, cfg, "train-vocoder")
    pairs = []
    for wav in _corpus_wavs(args.manifest):
        example = _prepare_example(wav, cfg, dvae_p, dvae_a)
        style = _style_vector(enc, wav)
        hidden = teacher_forced_hidden(lm, style, example.phonetic, example.acoustic)
        cond = interpolate_hidden(hidden)
        target = np.zeros(cond.shape[0] * MEL_HOP, dtype=np.float32)
        keep = min(target.size, wav.samples.size)
        target[:keep] = wav.samples[:keep]
        pairs.append((cond, target))
    model = VocoderModel(d_cond=cfg.d_model, channels=cfg.vocoder_channels, seed=args.seed)
    curve = train_vocoder(model, pairs, steps=cfg.steps_vocoder, lr=cfg.lr_vocoder,
                          weight_decay=cfg.weight_decay_vocoder,
                          chunk_seconds=cfg.vocoder_chunk_seconds, seed=args.seed,
                          log_every=args.log_every)
    path = os.path.join(args.out, CKPT_NAMES["vocoder"])
    save_checkpoint(path, cfg.to_dict(), model.state())
    _write_curve(os.path.join(args.out, "vocoder_loss.csv"), "step,mel_l1,stft,wave", curve)
    print(path)
    return 0


def _sampling_overrides(cfg: RunConfig, path: str | None) -> RunConfig:
    """Inference-time --config may adjust sampling keys only; the
    architecture always comes from the checkpoint."""
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            values = json.load(fh)
    except OSError as ex:
        raise ConfigError(f"cannot read config '{path}': {ex}") from ex
    except json.JSONDecodeError as ex:
        raise ConfigError(f"config '{path}' is not valid JSON: {ex}") from ex
    if not isinstance(values, dict):
        raise ConfigError("sampling config must be a JSON object")
    bad = sorted(set(values) - set(_SAMPLING_KEYS))
    if bad:
        raise ConfigError(
            f"only sampling keys {_SAMPLING_KEYS} may be overridden at inference, got: "
            + ", ".join(bad)
        )
    merged = cfg.to_dict()
    merged.update(values)
    return config_from_dict(merged)


def cmd_convert(args) -> int:
    lm_path = _ckpt_path(args.ckpt, "lm", "convert")
    ck_config, _ = load_checkpoint(lm_path)
    cfg = _sampling_overrides(config_from_dict(ck_config), args.config)
    dvae_p = _load_dvae(args.ckpt, "phonetic", cfg, "convert")
    lm, enc = _load_lm(args.ckpt, cfg, "convert")
    voc = _load_vocoder(args.ckpt, cfg, "convert")

    source = load_wav(args.source)
    target = _wav_at(args.target, ACOUSTIC_RATE)
    style = _style_vector(enc, target)
    phonetic = encode(dvae_p, _phonetic_features(_wav_at(args.source, ACOUSTIC_RATE),
                                                 cfg.phonetic_dim))
    rng = np.random.default_rng(args.seed)
    tokens, hidden, truncated = generate(lm, style, phonetic, cfg.sampling_params(), rng)
    out_wav = vocode(voc, interpolate_hidden(hidden))
    save_wav(args.out, out_wav)
    meta = {
        "n": len(phonetic),
        "m": len(tokens),
        "duration_ratio": duration_ratio(out_wav.duration, source.duration),
        "truncated": bool(truncated),
        "seed": args.seed,
    }
    meta_path = os.path.splitext(args.out)[0] + ".json"
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    print(args.out)
    return 0


def _resolved(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _pair_scores(enc: StyleEncoder, pairs: list[tuple[str, str]], base: str,
                 cache: dict[str, np.ndarray]) -> list[float]:
    scores = []
    for a, b in pairs:
        for p in (a, b):
            if p not in cache:
                cache[p] = _style_vector(enc, _wav_at(_resolved(base, p), ACOUSTIC_RATE))
        scores.append(cosine_similarity(cache[a], cache[b]))
    return scores


def _load_duration_pairs(path: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"'{path}' line {lineno}: expected 'source converted'")
            pairs.append((parts[0], parts[1]))
    if not pairs:
        raise ParseError(f"'{path}' lists no pairs")
    return pairs


def cmd_eval(args) -> int:
    lines: list[dict] = []
    if args.mode in ("similarity", "eer"):
        if args.trials is None:
            raise ConfigError(f"eval mode '{args.mode}' needs --trials")
        if args.ckpt is None:
            raise ConfigError(f"eval mode '{args.mode}' needs --ckpt")
        lm_path = _ckpt_path(args.ckpt, "lm", "eval")
        ck_config, _ = load_checkpoint(lm_path)
        cfg = config_from_dict(ck_config)
        _, enc = _load_lm(args.ckpt, cfg, "eval")
        trials = load_trials(args.trials)
        base = os.path.dirname(os.path.abspath(args.trials))
        cache: dict[str, np.ndarray] = {}
        genuine = _pair_scores(enc, trials.genuine, base, cache)
        impostor = _pair_scores(enc, trials.impostor, base, cache)
        if args.mode == "similarity":
            for (a, b), v in zip(trials.genuine, genuine):
                lines.append({"metric": "similarity", "label": 1, "pair": [a, b], "value": v})
            for (a, b), v in zip(trials.impostor, impostor):
                lines.append({"metric": "similarity", "label": 0, "pair": [a, b], "value": v})
            lines.append({"metric": "similarity_genuine_mean",
                          "value": float(np.mean(genuine)), "count": len(genuine)})
            lines.append({"metric": "similarity_impostor_mean",
                          "value": float(np.mean(impostor)), "count": len(impostor)})
        else:
            eer, threshold = compute_eer(np.asarray(genuine), np.asarray(impostor))
            lines.append({"metric": "eer", "value": eer, "threshold": threshold,
                          "count": len(genuine) + len(impostor)})
    else:
        if args.pairs is None:
            raise ConfigError("eval mode 'duration' needs --pairs")
        pairs = _load_duration_pairs(args.pairs)
        base = os.path.dirname(os.path.abspath(args.pairs))
        ratios = []
        for a, b in pairs:
            src = load_wav(_resolved(base, a))
            conv = load_wav(_resolved(base, b))
            r = duration_ratio(conv.duration, src.duration)
            ratios.append(r)
            lines.append({"metric": "duration_ratio", "pair": [a, b], "value": r})
        lines.append({"metric": "duration_ratio_mean", "value": float(np.mean(ratios)),
                      "count": len(ratios)})
        lines.append({"metric": "duration_ratio_variance",
                      "value": float(np.var(ratios)), "count": len(ratios)})
    with open(args.out, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    print(args.out)
    return 0


# -- argument wiring ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: E_USAGE: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="genvc", description="Zero-shot voice conversion pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    toy = sub.add_parser("make-toy-corpus", help="write a synthetic two-speaker corpus")
    toy.add_argument("--out", required=True, help="output directory")
    toy.add_argument("--utterances", type=int, default=10)
    toy.add_argument("--speakers", type=int, default=2)
    toy.add_argument("--seed", type=int, default=0)
    toy.set_defaults(func=cmd_make_toy_corpus)

    def train_common(sp):
        sp.add_argument("--manifest", required=True, help="corpus CSV path,speaker,duration")
        sp.add_argument("--out", required=True, help="checkpoint directory")
        sp.add_argument("--config", default=None, help="JSON config overrides")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--log-every", type=int, default=0)

    td = sub.add_parser("train-dvae", help="phase 1: train a tokenizer")
    td.add_argument("--kind", required=True, choices=("phonetic", "acoustic"))
    train_common(td)
    td.set_defaults(func=cmd_train_dvae)

    tl = sub.add_parser("train-lm", help="phase 2: train style encoder + token LM")
    train_common(tl)
    tl.set_defaults(func=cmd_train_lm)

    tv = sub.add_parser("train-vocoder", help="phase 3: train the vocoder")
    train_common(tv)
    tv.set_defaults(func=cmd_train_vocoder)

    cv = sub.add_parser("convert", help="convert source content to target voice")
    cv.add_argument("--source", required=True, help="content utterance WAV")
    cv.add_argument("--target", required=True, help="style prompt WAV")
    cv.add_argument("--ckpt", required=True, help="checkpoint directory")
    cv.add_argument("--out", required=True, help="output WAV path")
    cv.add_argument("--config", default=None, help="JSON sampling overrides")
    cv.add_argument("--seed", type=int, default=0)
    cv.set_defaults(func=cmd_convert)

    ev = sub.add_parser("eval", help="similarity, EER, or duration reports")
    ev.add_argument("--mode", required=True, choices=("similarity", "eer", "duration"))
    ev.add_argument("--trials", default=None, help="'label path_a path_b' lines")
    ev.add_argument("--pairs", default=None, help="'source converted' lines")
    ev.add_argument("--ckpt", default=None, help="checkpoint directory")
    ev.add_argument("--out", required=True, help="JSONL report path")
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GenvcError as ex:
        print(f"error: {ex.code}: {ex}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
