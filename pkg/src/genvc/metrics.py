"""Similarity scoring and privacy evaluation.

Speaker similarity is the cosine between flattened style-encoder outputs.
The privacy metric is the equal error rate of a verification sweep over
those scores: every decision threshold between adjacent distinct scores is
tried, and the EER is read off where false accepts cross false rejects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from genvc.errors import LengthError, SimilarityError, TrialError


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise SimilarityError(f"embedding sizes differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise SimilarityError("cosine of a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def compute_eer(genuine: np.ndarray, impostor: np.ndarray) -> tuple[float, float]:
    """Equal error rate and its threshold from two score sets.

    Thresholds swept are one sentinel below the minimum score, the
    midpoints between adjacent distinct scores, and one sentinel above the
    maximum. FAR(t) is the impostor fraction scoring >= t, FRR(t) the
    genuine fraction scoring < t; FAR - FRR is non-increasing in t, and the
    EER sits at its sign change, linearly interpolated when the difference
    skips zero.
    """
    genuine = np.asarray(genuine, dtype=np.float64).reshape(-1)
    impostor = np.asarray(impostor, dtype=np.float64).reshape(-1)
    if genuine.size == 0 or impostor.size == 0:
        raise LengthError("EER needs at least one genuine and one impostor score")
    if not (np.isfinite(genuine).all() and np.isfinite(impostor).all()):
        raise SimilarityError("scores must be finite")
    scores = np.unique(np.concatenate([genuine, impostor]))
    thresholds = np.concatenate([
        [scores[0] - 1.0],
        (scores[:-1] + scores[1:]) / 2.0,
        [scores[-1] + 1.0],
    ])
    far = (impostor[None, :] >= thresholds[:, None]).mean(axis=1)
    frr = (genuine[None, :] < thresholds[:, None]).mean(axis=1)
    diff = far - frr
    idx = int(np.argmax(diff <= 0.0))  # first crossing; diff[0] = 1 - 0 > 0 always
    if diff[idx] == 0.0:
        return float(far[idx]), float(thresholds[idx])
    t = diff[idx - 1] / (diff[idx - 1] - diff[idx])
    eer = far[idx - 1] + t * (far[idx] - far[idx - 1])
    thr = thresholds[idx - 1] + t * (thresholds[idx] - thresholds[idx - 1])
    return float(eer), float(thr)


def duration_ratio(converted_seconds: float, source_seconds: float) -> float:
    if source_seconds <= 0.0:
        raise LengthError(f"source duration must be positive, got {source_seconds}")
    if converted_seconds < 0.0:
        raise LengthError(f"converted duration must be nonnegative, got {converted_seconds}")
    return converted_seconds / source_seconds


@dataclass
class TrialSet:
    """Verification trials: pairs of utterance paths with a same-speaker label."""

    genuine: list[tuple[str, str]]
    impostor: list[tuple[str, str]]

    def __post_init__(self):
        if not self.genuine:
            raise TrialError("trial set has no genuine pairs")
        if not self.impostor:
            raise TrialError("trial set has no impostor pairs")


def parse_trials(text: str) -> TrialSet:
    """Parse 'label path_a path_b' lines; label 1 marks a genuine pair."""
    genuine: list[tuple[str, str]] = []
    impostor: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise TrialError(f"line {lineno}: expected 'label path_a path_b', got {len(parts)} fields")
        label, a, b = parts
        if label == "1":
            genuine.append((a, b))
        elif label == "0":
            impostor.append((a, b))
        else:
            raise TrialError(f"line {lineno}: label must be 0 or 1, got '{label}'")
    return TrialSet(genuine, impostor)


def load_trials(path: str) -> TrialSet:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_trials(fh.read())
