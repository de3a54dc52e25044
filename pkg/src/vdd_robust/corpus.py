"""Synthetic sustained-vowel corpus and manifest handling.

Voices are source-filter synthesized: a glottal pulse train with per-period
jitter (timing) and shimmer (amplitude) perturbations, mixed with white
aspiration noise and shaped by three vowel formant resonators. Normal and
pathological parameter ranges are disjoint by construction, so detectors
have a learnable, verifiable target without redistributing clinical audio.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio import AudioClip, peak_normalize, read_wav, write_wav
from .errors import VddError
from .segmentation import Label

FORMANTS_A = (700.0, 1220.0, 2600.0)  # vowel /a/
FORMANT_BANDWIDTHS = (80.0, 90.0, 120.0)

NORMAL_RANGES = {"jitter_pct": (0.1, 0.5), "shimmer_pct": (1.0, 3.0), "noise_level": (0.0, 0.05)}
PATHOL_RANGES = {"jitter_pct": (2.0, 5.0), "shimmer_pct": (6.0, 12.0), "noise_level": (0.1, 0.3)}
F0_RANGE = (100.0, 220.0)
DURATION_RANGE = (1.0, 3.0)
CORPUS_PEAK = 0.95


class ManifestError(VddError):
    """Manifest file is malformed or references bad data."""


@dataclass(frozen=True)
class VoiceParams:
    f0_hz: float
    jitter_pct: float
    shimmer_pct: float
    noise_level: float
    duration_s: float
    rate_hz: int
    formants_hz: tuple[float, float, float] = FORMANTS_A

    def __post_init__(self):
        if self.f0_hz <= 0 or self.duration_s <= 0 or self.rate_hz <= 0:
            raise ValueError("f0, duration and rate must be positive")
        if self.jitter_pct < 0 or self.shimmer_pct < 0:
            raise ValueError("jitter and shimmer must be non-negative")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError("noise_level must be within [0, 1]")


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: Label
    subject_id: str
    duration_s: float


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def by_label(self, label: Label) -> list[ManifestEntry]:
        return [e for e in self.entries if e.label is label]

    def subset(self, entries: list[ManifestEntry]) -> "CorpusManifest":
        return CorpusManifest(list(entries))

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label", "subject_id", "duration_s"])
            for e in self.entries:
                rel = e.path
                try:
                    rel = e.path.relative_to(path.parent)
                except ValueError:
                    pass
                writer.writerow([rel.as_posix(), e.label.value, e.subject_id, f"{e.duration_s:.6f}"])


def _resonator_coeffs(freq_hz: float, bandwidth_hz: float, rate_hz: int):
    r = np.exp(-np.pi * bandwidth_hz / rate_hz)
    theta = 2.0 * np.pi * freq_hz / rate_hz
    return [1.0], [1.0, -2.0 * r * np.cos(theta), r * r]


def synth_voice(params: VoiceParams, seed) -> AudioClip:
    """Render one sustained vowel; bit-reproducible for a given seed."""
    rng = np.random.default_rng(seed)
    n = int(round(params.duration_s * params.rate_hz))
    period = params.rate_hz / params.f0_hz

    excitation = np.zeros(n)
    t = 0.0
    while t < n:
        amp = 1.0 + params.shimmer_pct / 100.0 * rng.standard_normal()
        idx = int(round(t))
        if idx < n:
            excitation[idx] += amp
        t += period * (1.0 + params.jitter_pct / 100.0 * rng.standard_normal())

    voiced = excitation
    for freq, bw in zip(params.formants_hz, FORMANT_BANDWIDTHS):
        b, a = _resonator_coeffs(freq, bw, params.rate_hz)
        voiced = lfilter(b, a, voiced)

    noise = rng.standard_normal(n)
    voiced_rms = np.sqrt(np.mean(voiced**2))
    noise_rms = np.sqrt(np.mean(noise**2))
    signal = (1.0 - params.noise_level) * voiced / voiced_rms
    if params.noise_level > 0.0:
        signal = signal + params.noise_level * noise / noise_rms
    return peak_normalize(AudioClip(signal, params.rate_hz), CORPUS_PEAK)


def _draw_params(rng, label: Label, rate_hz: int) -> VoiceParams:
    ranges = NORMAL_RANGES if label is Label.NORMAL else PATHOL_RANGES
    return VoiceParams(
        f0_hz=float(rng.uniform(*F0_RANGE)),
        jitter_pct=float(rng.uniform(*ranges["jitter_pct"])),
        shimmer_pct=float(rng.uniform(*ranges["shimmer_pct"])),
        noise_level=float(rng.uniform(*ranges["noise_level"])),
        duration_s=float(rng.uniform(*DURATION_RANGE)),
        rate_hz=rate_hz,
    )


def gen_corpus(
    n_normal: int,
    n_pathol: int,
    seed: int,
    out_dir,
    rate_hz: int = 25000,
) -> CorpusManifest:
    """Write labeled WAVs plus manifest.csv; pure function of (counts, seed).

    Parameter draws come from one seeded stream in file order; each file's
    audio derives from (seed, index) so per-file synthesis order cannot
    change the output.
    """
    if n_normal < 1 or n_pathol < 1:
        raise ValueError("need at least one file per class")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    param_rng = np.random.default_rng(seed)

    manifest = CorpusManifest()
    plan = [(Label.NORMAL, i) for i in range(n_normal)]
    plan += [(Label.PATHOL, i) for i in range(n_pathol)]
    for index, (label, k) in enumerate(plan):
        params = _draw_params(param_rng, label, rate_hz)
        clip = synth_voice(params, seed=[seed, index])
        name = f"{label.value}_{k:03d}.wav"
        path = out_dir / name
        write_wav(clip, path)
        manifest.entries.append(
            ManifestEntry(path, label, f"subj_{label.value}_{k:03d}", clip.duration_s)
        )
    manifest.save(out_dir / "manifest.csv")
    return manifest


def load_manifest(path, require_audio: bool = True) -> CorpusManifest:
    """Load and validate a manifest CSV (header: path,label,subject_id[,duration_s]).

    Relative paths resolve against the CSV's directory. Missing audio files
    are reported with their row numbers.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ManifestError(f"{path}: empty manifest")
    header = [h.strip() for h in rows[0]]
    required = ["path", "label", "subject_id"]
    if header[: len(required)] != required:
        raise ManifestError(
            f"{path}: header must start with {','.join(required)}, got {','.join(header)}"
        )
    has_duration = len(header) > 3 and header[3] == "duration_s"

    entries = []
    seen: dict[str, int] = {}
    missing = []
    for row_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) < 3:
            raise ManifestError(f"{path}: row {row_no} has too few columns")
        raw_path, raw_label, subject_id = row[0].strip(), row[1].strip(), row[2].strip()
        try:
            label = Label(raw_label)
        except ValueError:
            raise ManifestError(
                f"{path}: row {row_no}: unknown label {raw_label!r} "
                f"(expected 'normal' or 'pathol')"
            ) from None
        if raw_path in seen:
            raise ManifestError(
                f"{path}: row {row_no}: duplicate path {raw_path!r} (first at row {seen[raw_path]})"
            )
        seen[raw_path] = row_no
        wav_path = Path(raw_path)
        if not wav_path.is_absolute():
            wav_path = path.parent / wav_path
        duration = float(row[3]) if has_duration and len(row) > 3 and row[3] else 0.0
        if not wav_path.exists():
            missing.append((row_no, raw_path))
        entries.append(ManifestEntry(wav_path, label, subject_id, duration))
    if require_audio and missing:
        listing = "; ".join(f"row {r}: {p}" for r, p in missing)
        raise ManifestError(f"{path}: missing audio files -> {listing}")
    return CorpusManifest(entries)


def load_clip(entry: ManifestEntry) -> AudioClip:
    """Corpus-load convention: read and peak-normalize to 0.95."""
    return peak_normalize(read_wav(entry.path), CORPUS_PEAK)
