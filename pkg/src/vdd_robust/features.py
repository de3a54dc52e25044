"""Spectral front ends: STFT power, mel filterbank, mel-spectrogram, MFCC.

The mel-spectrogram is min-max normalized to [0, 1] per map; MFCCs are the
orthonormal DCT-II of the *unnormalized* log-mel matrix. The detectors carry
a per-corpus standardizer for MFCC inputs (fitted on training data only).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from enum import Enum
from functools import lru_cache

import numpy as np

from .audio import AudioClip
from .errors import VddError

LOG_FLOOR = 1e-10


class ClipTooShortError(VddError):
    """Clip shorter than one analysis window."""


class FeatureKind(str, Enum):
    MEL_SPEC = "mel"
    MFCC = "mfcc"


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FeatureParams:
    """Extraction hyperparameters.

    fft_size / fmax_hz of None mean "derive from the sample rate": next power
    of two at or above the window length, and Nyquist, respectively.
    """

    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int | None = None
    n_mels: int = 64
    n_mfcc: int = 13
    fmin_hz: float = 0.0
    fmax_hz: float | None = None

    def window_samples(self, rate_hz: int) -> int:
        return int(round(self.window_ms * rate_hz / 1000.0))

    def hop_samples(self, rate_hz: int) -> int:
        return int(round(self.hop_ms * rate_hz / 1000.0))

    def fft_size_for(self, rate_hz: int) -> int:
        if self.fft_size is not None:
            return self.fft_size
        n = 1
        while n < self.window_samples(rate_hz):
            n *= 2
        return n

    def fmax_for(self, rate_hz: int) -> float:
        return rate_hz / 2.0 if self.fmax_hz is None else self.fmax_hz

    def validate_for(self, rate_hz: int) -> None:
        win = self.window_samples(rate_hz)
        hop = self.hop_samples(rate_hz)
        fft = self.fft_size_for(rate_hz)
        fmax = self.fmax_for(rate_hz)
        if win < 1 or hop < 1:
            raise ValueError("window and hop must be at least one sample")
        if fft < win or fft & (fft - 1):
            raise ValueError("fft_size must be a power of two >= window length")
        if not 0.0 <= self.fmin_hz < fmax <= rate_hz / 2.0:
            raise ValueError("need 0 <= fmin < fmax <= rate/2")
        if self.n_mfcc > self.n_mels:
            raise ValueError("n_mfcc cannot exceed n_mels")
        if self.n_mels < 1:
            raise ValueError("n_mels must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureParams":
        return cls(**d)


@dataclass
class FeatureMap:
    """2-D feature matrix (rows = mel bands or cepstral coefficients)."""

    kind: FeatureKind
    values: np.ndarray
    params: FeatureParams
    source_rate_hz: int

    def to_csv(self, path) -> None:
        np.savetxt(path, self.values, delimiter=",", fmt="%.10g")


def frame_count(n_samples: int, window: int, hop: int) -> int:
    """1 + floor((len - window) / hop); requires len >= window."""
    return 1 + (n_samples - window) // hop


def stft_power(clip: AudioClip, params: FeatureParams) -> np.ndarray:
    """Hann-windowed power spectrogram, shape (fft/2 + 1, frames)."""
    rate = clip.sample_rate_hz
    params.validate_for(rate)
    win = params.window_samples(rate)
    hop = params.hop_samples(rate)
    fft = params.fft_size_for(rate)
    if len(clip) < win:
        raise ClipTooShortError(
            f"clip of {len(clip)} samples is shorter than one {win}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, win)[::hop]
    windowed = frames * np.hanning(win)
    spectrum = np.fft.rfft(windowed, n=fft, axis=1)
    return (spectrum.real**2 + spectrum.imag**2).T


@lru_cache(maxsize=32)
def _cached_filterbank(params: FeatureParams, rate_hz: int) -> np.ndarray:
    fft = params.fft_size_for(rate_hz)
    fmax = params.fmax_for(rate_hz)
    mel_pts = np.linspace(hz_to_mel(params.fmin_hz), hz_to_mel(fmax), params.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_hz = np.arange(fft // 2 + 1) * (rate_hz / fft)

    bank = np.zeros((params.n_mels, fft // 2 + 1))
    for i in range(params.n_mels):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        bank[i] = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(bank.sum(axis=1) == 0.0):
        raise ValueError(
            "n_mels too large for the FFT resolution: some mel filter covers no bin"
        )
    bank.setflags(write=False)
    return bank


def mel_filterbank(params: FeatureParams, rate_hz: int) -> np.ndarray:
    """Triangular filters with centers equally spaced on the mel scale."""
    params.validate_for(rate_hz)
    return _cached_filterbank(params, rate_hz)


def _log_mel(clip: AudioClip, params: FeatureParams) -> np.ndarray:
    power = stft_power(clip, params)
    bank = mel_filterbank(params, clip.sample_rate_hz)
    return np.log(bank @ power + LOG_FLOOR)


def mel_spectrogram(clip: AudioClip, params: FeatureParams) -> FeatureMap:
    """Log-mel map min-max scaled to [0, 1]; constant maps collapse to zero."""
    logmel = _log_mel(clip, params)
    lo, hi = logmel.min(), logmel.max()
    if hi == lo:
        values = np.zeros_like(logmel)
    else:
        values = (logmel - lo) / (hi - lo)
    return FeatureMap(FeatureKind.MEL_SPEC, values, params, clip.sample_rate_hz)


@lru_cache(maxsize=8)
def _dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis: C @ C.T == I."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    mat = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * m + 1) * k / (2.0 * n))
    mat[0] = np.sqrt(1.0 / n)
    mat.setflags(write=False)
    return mat


def mfcc(clip: AudioClip, params: FeatureParams) -> FeatureMap:
    """First n_mfcc orthonormal DCT-II coefficients of the log-mel matrix."""
    logmel = _log_mel(clip, params)
    coeffs = _dct_matrix(params.n_mels)[: params.n_mfcc] @ logmel
    return FeatureMap(FeatureKind.MFCC, coeffs, params, clip.sample_rate_hz)


def extract(clip: AudioClip, kind: FeatureKind, params: FeatureParams) -> FeatureMap:
    if kind == FeatureKind.MEL_SPEC:
        return mel_spectrogram(clip, params)
    return mfcc(clip, params)


@dataclass
class Standardizer:
    """Per-row affine normalization fitted on training maps (MFCC only)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, maps: list[np.ndarray]) -> "Standardizer":
        stacked = np.concatenate(maps, axis=1)
        mean = stacked.mean(axis=1)
        std = stacked.std(axis=1)
        std[std < 1e-8] = 1.0
        return cls(mean, std)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None]) / self.std[:, None]
