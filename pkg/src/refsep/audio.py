"""Time-domain audio buffers, WAV I/O, and sample-rate conversion.

All internal processing runs at a single rate (8 kHz by default); buffers
carry their own rate so conversions stay explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

__all__ = [
    "AudioBuffer",
    "read_wav",
    "write_wav",
    "resample",
]

PIPELINE_RATE = 8000


@dataclass(frozen=True)
class AudioBuffer:
    """Mono time-domain signal plus its sample rate in Hz.

    Samples are a read-only 1-D float array (float32 or float64); values must
    be finite. Buffers are immutable once constructed, so they are safe to
    share across threads.
    """

    samples: np.ndarray
    sample_rate: int
    _skip_checks: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.samples)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if not self._skip_checks:
            if data.ndim != 1:
                raise ValueError(f"samples must be 1-D, got shape {data.shape}")
            if self.sample_rate <= 0:
                raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
            if data.size and not np.all(np.isfinite(data)):
                raise ValueError("samples contain NaN or Inf")
        if data.flags.writeable:
            data = data.copy()
            data.flags.writeable = False
        object.__setattr__(self, "samples", data)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return self.samples.size / self.sample_rate


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a mono PCM-16 or float32 WAV file.

    Integer samples are scaled to [-1, 1); float data is passed through.
    Multi-channel files are rejected.
    """
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    return AudioBuffer(samples, int(rate))


def write_wav(path: str | Path, audio: AudioBuffer, fmt: str = "float32") -> None:
    """Write a mono WAV file as float32 (default) or 16-bit PCM."""
    if fmt == "float32":
        data = audio.samples.astype(np.float32)
    elif fmt == "pcm16":
        clipped = np.clip(audio.samples, -1.0, 32767.0 / 32768.0)
        data = np.round(clipped * 32768.0).astype(np.int16)
    else:
        raise ValueError(f"unsupported WAV format {fmt!r}")
    wavfile.write(str(path), audio.sample_rate, data)


def resample(audio: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited resampling to ``target_rate`` Hz.

    Uses polyphase filtering on the reduced rate ratio; the output length is
    ``ceil(len * target / source)``. Returns the input unchanged when the
    rates already match.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be > 0, got {target_rate}")
    if target_rate == audio.sample_rate:
        return audio
    g = math.gcd(int(target_rate), int(audio.sample_rate))
    up, down = target_rate // g, audio.sample_rate // g
    out = resample_poly(audio.samples.astype(np.float64), up, down)
    return AudioBuffer(out, target_rate)
