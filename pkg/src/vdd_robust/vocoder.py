"""Phase vocoder: STFT, ISTFT and time stretching.

Analysis window 1024 samples, hop 256 (quarter overlap). Time stretching
interpolates STFT magnitudes at fractional frame positions and accumulates
per-bin phase from the expected advance plus the wrapped deviation, which
preserves pitch while changing duration.
"""

from __future__ import annotations

import numpy as np

WINDOW = 1024
HOP = 256


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_complex(x: np.ndarray, window: int = WINDOW, hop: int = HOP) -> np.ndarray:
    """Complex STFT, shape (window//2 + 1, frames)."""
    if len(x) < window:
        raise ValueError(f"signal of {len(x)} samples is shorter than one window")
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop]
    return np.fft.rfft(frames * _periodic_hann(window), axis=1).T


def istft(
    spec: np.ndarray,
    window: int = WINDOW,
    hop: int = HOP,
    length: int | None = None,
) -> np.ndarray:
    """Weighted overlap-add inverse with squared-window normalization."""
    n_frames = spec.shape[1]
    win = _periodic_hann(window)
    out_len = (n_frames - 1) * hop + window
    out = np.zeros(out_len)
    norm = np.zeros(out_len)
    frames = np.fft.irfft(spec.T, n=window, axis=1)
    for t in range(n_frames):
        start = t * hop
        out[start : start + window] += frames[t] * win
        norm[start : start + window] += win**2
    good = norm > 1e-10
    out[good] /= norm[good]
    if length is not None:
        if out_len >= length:
            out = out[:length]
        else:
            out = np.pad(out, (0, length - out_len))
    return out


def time_stretch(
    x: np.ndarray, rate: float, window: int = WINDOW, hop: int = HOP
) -> np.ndarray:
    """Stretch duration by 1/rate at constant pitch (rate > 1 shortens).

    Output length is exactly round(len(x) / rate); the input tail is padded
    before analysis so the last samples are fully covered.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if len(x) < window:
        raise ValueError(f"signal of {len(x)} samples is shorter than one window")
    target_len = int(round(len(x) / rate))
    pad = window + int(np.ceil(rate)) * hop
    spec = stft_complex(np.pad(x, (0, pad)), window, hop)
    n_bins, n_frames = spec.shape
    if n_frames < 2:
        raise ValueError("signal too short to time-stretch")

    steps = np.arange(0.0, n_frames - 1, rate)
    omega = 2.0 * np.pi * np.arange(n_bins) * hop / window  # expected phase/hop

    out = np.zeros((n_bins, len(steps)), dtype=complex)
    phase = np.angle(spec[:, 0])
    mags = np.abs(spec)
    angles = np.angle(spec)
    for t, pos in enumerate(steps):
        i = int(pos)
        frac = pos - i
        mag = (1.0 - frac) * mags[:, i] + frac * mags[:, i + 1]
        out[:, t] = mag * np.exp(1j * phase)
        deviation = angles[:, i + 1] - angles[:, i] - omega
        deviation -= 2.0 * np.pi * np.round(deviation / (2.0 * np.pi))
        phase += omega + deviation
    return istft(out, window, hop, length=target_len)
