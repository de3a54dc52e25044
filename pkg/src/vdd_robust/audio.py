"""Waveform substrate: WAV I/O, resampling, tone synthesis and mixing.

Everything here works on mono float64 signals with a nominal amplitude range
of [-1, 1]. Multichannel input is collapsed to mono at read time; 16-bit PCM
is the only output encoding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import VddError

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3

_RESAMPLE_TAPS = 63
_RESAMPLE_CUTOFF = 0.45  # fraction of the target rate


class MalformedWavError(VddError):
    """File is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(VddError):
    """WAV encoding other than 16-bit PCM or 32-bit IEEE float."""


class SampleRateMismatchError(VddError):
    """Two clips were combined that do not share a sample rate."""


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform: float64 samples plus their sample rate in Hz."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("AudioClip requires a non-empty 1-D sample array")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


def read_wav(path) -> AudioClip:
    """Read a PCM-16 or float-32 WAV file and collapse it to mono.

    Integer samples are scaled to [-1, 1] (full scale -32768 maps to -1.0);
    multichannel frames are averaged after scaling.

    Raises FileNotFoundError, MalformedWavError or UnsupportedWavError.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: missing RIFF/WAVE header")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body_start = pos + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body_start + 16 > len(raw):
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", raw, body_start)
        elif chunk_id == b"data":
            if body_start + chunk_size > len(raw):
                raise MalformedWavError(f"{path}: data chunk truncated")
            data = raw[body_start : body_start + chunk_size]
        pos = body_start + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")

    audio_format, n_channels, rate, _byte_rate, _block_align, bits = fmt
    if n_channels < 1 or rate <= 0:
        raise MalformedWavError(f"{path}: invalid fmt fields")

    if audio_format == _FMT_PCM and bits == 16:
        flat = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        flat = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedWavError(
            f"{path}: unsupported encoding (format={audio_format}, bits={bits}); "
            "only 16-bit PCM and 32-bit float are readable"
        )

    if flat.size == 0 or flat.size % n_channels != 0:
        raise MalformedWavError(f"{path}: data chunk does not hold whole frames")
    if n_channels > 1:
        flat = flat.reshape(-1, n_channels).mean(axis=1)
    return AudioClip(flat, rate)


def write_wav(clip: AudioClip, path) -> None:
    """Write a clip as 16-bit PCM mono little-endian WAV.

    Quantization: q = round(s * 32768) clamped to int16, so the read/write
    round trip is exact to within one quantization step (1/32768).
    """
    q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    header = (
        b"RIFF"
        + struct.pack("<I", 36 + len(payload))
        + b"WAVE"
        + b"fmt "
        + struct.pack(
            "<IHHIIHH",
            16,
            _FMT_PCM,
            1,
            clip.sample_rate_hz,
            clip.sample_rate_hz * 2,
            2,
            16,
        )
        + b"data"
        + struct.pack("<I", len(payload))
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)


def _lowpass_fir(samples: np.ndarray, cutoff_hz: float, rate_hz: int) -> np.ndarray:
    """Hamming-windowed sinc low-pass, 63 taps, unity DC gain."""
    half = (_RESAMPLE_TAPS - 1) // 2
    n = np.arange(_RESAMPLE_TAPS) - half
    fc = cutoff_hz / rate_hz
    taps = 2.0 * fc * np.sinc(2.0 * fc * n) * np.hamming(_RESAMPLE_TAPS)
    taps /= taps.sum()
    return np.convolve(samples, taps, mode="same")


def _cubic_interp(samples: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Keys cubic convolution (a = -0.5) at fractional sample positions."""
    a = -0.5
    n = samples.size
    base = np.floor(positions).astype(np.int64)
    u = positions - base

    idx = np.clip(np.stack([base - 1, base, base + 1, base + 2]), 0, n - 1)
    pts = samples[idx]  # (4, len(positions))

    w_m1 = a * ((1 + u) ** 3 - 5 * (1 + u) ** 2 + 8 * (1 + u) - 4)
    w_0 = (a + 2) * u**3 - (a + 3) * u**2 + 1
    w_1 = (a + 2) * (1 - u) ** 3 - (a + 3) * (1 - u) ** 2 + 1
    w_2 = a * ((2 - u) ** 3 - 5 * (2 - u) ** 2 + 8 * (2 - u) - 4)
    return w_m1 * pts[0] + w_0 * pts[1] + w_1 * pts[2] + w_2 * pts[3]


def resample(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    """Convert a clip to a new sample rate.

    Downsampling low-passes at 0.45 * target rate before cubic interpolation;
    upsampling interpolates directly. Matching rates return the clip unchanged.
    Output length is round(len * target / source).
    """
    target_rate_hz = int(target_rate_hz)
    if target_rate_hz <= 0:
        raise ValueError("target_rate_hz must be positive")
    if target_rate_hz == clip.sample_rate_hz:
        return clip

    src = clip.samples
    if target_rate_hz < clip.sample_rate_hz:
        src = _lowpass_fir(src, _RESAMPLE_CUTOFF * target_rate_hz, clip.sample_rate_hz)

    n_out = int(round(len(clip) * target_rate_hz / clip.sample_rate_hz))
    n_out = max(n_out, 1)
    positions = np.arange(n_out, dtype=np.float64) * (
        clip.sample_rate_hz / target_rate_hz
    )
    return AudioClip(_cubic_interp(src, positions), target_rate_hz)


def synth_sine(
    freq_hz: float,
    amplitude: float,
    phase_rad: float,
    duration_s: float,
    rate_hz: int,
) -> AudioClip:
    """Pure tone: sample[n] = amplitude * sin(2*pi*freq*n/rate + phase)."""
    rate_hz = int(rate_hz)
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    if not 0.0 < freq_hz < rate_hz / 2:
        raise ValueError(
            f"freq_hz must lie strictly between 0 and Nyquist ({rate_hz / 2} Hz), got {freq_hz}"
        )
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    n = int(round(duration_s * rate_hz))
    if n < 1:
        raise ValueError("duration too short for one sample")
    t = np.arange(n, dtype=np.float64)
    return AudioClip(
        amplitude * np.sin(2.0 * np.pi * freq_hz * t / rate_hz + phase_rad), rate_hz
    )


def mix(a: AudioClip, b: AudioClip) -> AudioClip:
    """Sample-wise sum of two clips; b is zero-padded up to len(a).

    The result is deliberately not clipped or normalized here.
    """
    if a.sample_rate_hz != b.sample_rate_hz:
        raise SampleRateMismatchError(
            f"cannot mix {a.sample_rate_hz} Hz with {b.sample_rate_hz} Hz"
        )
    if len(b) > len(a):
        raise ValueError("second clip is longer than the first")
    summed = a.samples.copy()
    summed[: len(b)] += b.samples
    return AudioClip(summed, a.sample_rate_hz)


def peak_normalize(clip: AudioClip, target_peak: float) -> AudioClip:
    """Scale so max |sample| equals target_peak; all-zero clips pass through."""
    if not 0.0 < target_peak <= 1.0:
        raise ValueError("target_peak must be in (0, 1]")
    peak = np.max(np.abs(clip.samples))
    if peak == 0.0:
        return clip
    return AudioClip(clip.samples * (target_peak / peak), clip.sample_rate_hz)
