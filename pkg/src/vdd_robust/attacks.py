"""The four attack procedures.

White box (feature domain): FGSM and PGD on the model input map, driven by
the CNN's cross-entropy gradient. Mel-spectrogram inputs are kept inside
[0, 1]; MFCC inputs are unbounded. Black box (waveform domain): tone
injection and phase-vocoder pitch shifting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import vocoder
from .audio import AudioClip, mix, peak_normalize, resample, synth_sine
from .cnn import CnnModel, cross_entropy, input_gradient, _forward_batch
from .errors import VddError


class AttackDomainError(VddError):
    """Attack applied in a scenario or domain it does not support."""


@dataclass(frozen=True)
class Fgsm:
    # epsilon == 0 is allowed as the zero-strength control experiment
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass(frozen=True)
class Pgd:
    epsilon: float
    step_size: float | None = None  # defaults to epsilon / 4
    iterations: int = 10
    random_start: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.step_size is not None and not 0 <= self.step_size <= self.epsilon:
            raise ValueError("step_size must be in [0, epsilon]")

    @property
    def alpha(self) -> float:
        return self.epsilon / 4.0 if self.step_size is None else self.step_size


@dataclass(frozen=True)
class Tone:
    freq_hz: float
    amplitude: float
    phase_rad: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")


@dataclass(frozen=True)
class PitchShift:
    steps: int
    steps_per_octave: int = 12

    def __post_init__(self):
        if self.steps_per_octave < 1:
            raise ValueError("steps_per_octave must be at least 1")

    @property
    def ratio(self) -> float:
        return 2.0 ** (self.steps / self.steps_per_octave)


AttackConfig = Fgsm | Pgd | Tone | PitchShift


def _loss(model: CnnModel, x: np.ndarray, label: int) -> float:
    logits = _forward_batch(model, x[None]).logits
    return float(cross_entropy(logits, np.array([label]))[0])


def _project(
    candidate: np.ndarray,
    origin: np.ndarray,
    epsilon: float,
    value_range: tuple[float, float] | None,
) -> np.ndarray:
    out = np.clip(candidate, origin - epsilon, origin + epsilon)
    if value_range is not None:
        out = np.clip(out, value_range[0], value_range[1])
    return out


def fgsm(
    model: CnnModel,
    x: np.ndarray,
    true_label: int,
    cfg: Fgsm,
    value_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """x + epsilon * sign(grad), projected to the valid box. sign(0) == 0."""
    x = np.asarray(x, dtype=np.float64)
    grad = input_gradient(model, x, true_label)
    if not np.all(np.isfinite(grad)):
        raise VddError("non-finite input gradient")
    return _project(x + cfg.epsilon * np.sign(grad), x, cfg.epsilon, value_range)


def pgd(
    model: CnnModel,
    x: np.ndarray,
    true_label: int,
    cfg: Pgd,
    value_range: tuple[float, float] | None = None,
    seed: int = 0,
    trace: list | None = None,
) -> np.ndarray:
    """Iterated signed-gradient ascent projected into the epsilon ball.

    Returns the iterate with the highest loss. With iterations=1, no random
    start and step_size=epsilon this reproduces fgsm() bit-exactly. Passing
    a list as trace collects every projected iterate (for audits).
    """
    x = np.asarray(x, dtype=np.float64)
    current = x
    if cfg.random_start:
        rng = np.random.default_rng(seed)
        current = _project(
            x + rng.uniform(-cfg.epsilon, cfg.epsilon, x.shape), x, cfg.epsilon, value_range
        )
        if trace is not None:
            trace.append(current)
    best = None
    best_loss = -np.inf
    for _ in range(cfg.iterations):
        grad = input_gradient(model, current, true_label)
        if not np.all(np.isfinite(grad)):
            raise VddError("non-finite input gradient")
        current = _project(current + cfg.alpha * np.sign(grad), x, cfg.epsilon, value_range)
        if trace is not None:
            trace.append(current)
        loss = _loss(model, current, true_label)
        if loss > best_loss:
            best_loss = loss
            best = current
    return best


def tone_attack(clip: AudioClip, cfg: Tone) -> AudioClip:
    """Mix a sine of the clip's duration into the clip.

    If the sum exceeds full scale the result is peak-normalized back to 1.0
    (re-scaling rather than hard clipping keeps the tone spectrally clean).
    """
    if cfg.amplitude == 0.0:
        return clip
    tone = synth_sine(
        cfg.freq_hz, cfg.amplitude, cfg.phase_rad, clip.duration_s, clip.sample_rate_hz
    )
    attacked = mix(clip, tone)
    if np.max(np.abs(attacked.samples)) > 1.0:
        attacked = peak_normalize(attacked, 1.0)
    return attacked


def pitch_shift(clip: AudioClip, cfg: PitchShift) -> AudioClip:
    """Scale all frequencies by 2^(steps/steps_per_octave) at fixed duration.

    Time-stretch by the inverse ratio with the phase vocoder, then resample
    back so that the duration is preserved and only pitch moves.
    """
    ratio = cfg.ratio
    if len(clip) < vocoder.WINDOW:
        raise ValueError(
            f"clip of {len(clip)} samples is shorter than one vocoder window "
            f"({vocoder.WINDOW})"
        )
    stretched = vocoder.time_stretch(clip.samples, rate=1.0 / ratio)
    virtual_rate = int(round(clip.sample_rate_hz / ratio))
    shifted = resample(AudioClip(stretched, clip.sample_rate_hz), virtual_rate)
    samples = shifted.samples
    n = len(clip)
    if len(samples) >= n:
        samples = samples[:n]
    else:
        samples = np.pad(samples, (0, n - len(samples)))
    return AudioClip(samples, clip.sample_rate_hz)


def perturbation_linf(x: np.ndarray, x_prime: np.ndarray) -> float:
    """Max absolute component-wise difference."""
    x = np.asarray(x)
    x_prime = np.asarray(x_prime)
    if x.shape != x_prime.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_prime.shape}")
    return float(np.max(np.abs(x - x_prime)))
