"""Snippet segmentation and file-level majority voting.

Two presets mirror the detector front ends: MOBILE (200 ms snippets, 160 ms
overlap, 25 kHz) and CNN (1 s snippets, 900 ms overlap, 16 kHz).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .audio import AudioClip, resample


class Label(str, Enum):
    NORMAL = "normal"
    PATHOL = "pathol"


@dataclass(frozen=True)
class SnippetSpec:
    length_ms: float
    overlap_ms: float
    rate_hz: int

    def __post_init__(self):
        if not 0.0 <= self.overlap_ms < self.length_ms:
            raise ValueError("need 0 <= overlap_ms < length_ms")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")

    @property
    def hop_ms(self) -> float:
        return self.length_ms - self.overlap_ms

    def length_samples(self) -> int:
        return int(round(self.length_ms * self.rate_hz / 1000.0))

    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.rate_hz / 1000.0))

    def to_dict(self) -> dict:
        return {
            "length_ms": self.length_ms,
            "overlap_ms": self.overlap_ms,
            "rate_hz": self.rate_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SnippetSpec":
        return cls(**d)


PRESETS: dict[str, SnippetSpec] = {
    "mobile": SnippetSpec(length_ms=200.0, overlap_ms=160.0, rate_hz=25000),
    "cnn": SnippetSpec(length_ms=1000.0, overlap_ms=900.0, rate_hz=16000),
}


def preset(name: str) -> SnippetSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown snippet preset {name!r}; valid values: {sorted(PRESETS)}"
        ) from None


def segment(clip: AudioClip, spec: SnippetSpec) -> list[AudioClip]:
    """Cut a clip into overlapping fixed-length snippets.

    The clip is resampled to spec.rate_hz first if rates differ. Snippet
    count is 1 + floor((len - length) / hop); a clip shorter than one snippet
    yields a single zero-padded snippet. Trailing audio shorter than one hop
    is dropped.
    """
    clip = resample(clip, spec.rate_hz)
    length = spec.length_samples()
    hop = spec.hop_samples()
    if len(clip) < length:
        padded = np.zeros(length)
        padded[: len(clip)] = clip.samples
        return [AudioClip(padded, spec.rate_hz)]
    count = 1 + (len(clip) - length) // hop
    return [
        AudioClip(clip.samples[i * hop : i * hop + length].copy(), spec.rate_hz)
        for i in range(count)
    ]


def majority_vote(labels: list[Label], tie_label: Label = Label.PATHOL) -> Label:
    """Label with strictly more votes wins; exact ties go to tie_label.

    The default tie break favors the pathological class: in a screening
    setting a false alarm is preferred to a missed disorder.
    """
    if not labels:
        raise ValueError("majority_vote needs at least one label")
    n_pathol = sum(1 for lab in labels if lab is Label.PATHOL)
    n_normal = len(labels) - n_pathol
    if n_pathol > n_normal:
        return Label.PATHOL
    if n_normal > n_pathol:
        return Label.NORMAL
    return tie_label
