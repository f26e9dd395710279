"""STFT analysis/synthesis and feature packing.

Conventions (fixed so checkpoints and manifests stay portable):

* periodic Hann analysis window; synthesis reuses it with squared-window
  overlap-add normalization,
* un-normalized forward DFT, 1/N inverse (numpy's default),
* the signal is zero-padded by ``frame_size - hop`` samples at the front and
  enough at the tail that every real sample sits in the fully-overlapped
  interior; frame count is ``L = ceil((T + frame_size - hop) / hop)``,
* of the ``frame_size/2 + 1`` rfft bins, only the first ``keep_bins`` are
  kept (with the defaults: DC through bin 127; the Nyquist bin is dropped
  and treated as zero on synthesis).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import PIPELINE_RATE, AudioBuffer

__all__ = [
    "StftConfig",
    "ComplexSpectrogram",
    "RiTensor",
    "stft",
    "istft",
    "ri_pack",
    "ri_unpack",
    "log_spectrum",
    "combine_mag_phase",
    "pad_frames",
    "crop_frames",
]

_ENVELOPE_GUARD = 1e-10


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@lru_cache(maxsize=8)
def _window(name: str, n: int) -> np.ndarray:
    if name != "hann":
        raise ValueError(f"unsupported window {name!r}")
    w = periodic_hann(n)
    w.flags.writeable = False
    return w


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis geometry.

    ``hop`` must divide ``frame_size`` and the window must satisfy the
    squared-window constant-overlap-add condition at that hop, so synthesis
    normalization is a constant over the interior.
    """

    frame_size: int = 256
    hop: int = 64
    window: str = "hann"
    keep_bins: int = 128

    def __post_init__(self):
        if self.frame_size <= 0 or self.hop <= 0:
            raise ValueError("frame_size and hop must be positive")
        if self.frame_size % self.hop != 0:
            raise ValueError(f"hop {self.hop} must divide frame_size {self.frame_size}")
        if not 0 < self.keep_bins <= self.frame_size // 2 + 1:
            raise ValueError(f"keep_bins {self.keep_bins} out of range")
        w = _window(self.window, self.frame_size)
        n_overlap = self.frame_size // self.hop
        envelope = sum(
            np.roll(np.tile(w * w, n_overlap), m * self.hop) for m in range(n_overlap)
        )
        if np.ptp(envelope) > 1e-10 * envelope.mean():
            raise ValueError(
                f"window {self.window!r} violates COLA at hop {self.hop}"
            )

    @property
    def window_values(self) -> np.ndarray:
        return _window(self.window, self.frame_size)

    @property
    def front_pad(self) -> int:
        return self.frame_size - self.hop

    @property
    def overlap_gain(self) -> float:
        """Interior value of the squared-window overlap-add envelope."""
        w = self.window_values
        return float(np.sum(w * w)) / self.hop

    def frame_count(self, n_samples: int) -> int:
        return -(-(n_samples + self.front_pad) // self.hop)

    def padded_length(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop + self.frame_size


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Complex TF matrix, ``keep_bins`` rows by ``n_frames`` columns."""

    data: np.ndarray
    config: StftConfig
    original_length: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] != self.config.keep_bins:
            raise ValueError(
                f"expected ({self.config.keep_bins}, L) data, got {data.shape}"
            )
        if data.size and not np.all(np.isfinite(data)):
            raise ValueError("spectrogram contains NaN or Inf")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


@dataclass(frozen=True)
class RiTensor:
    """Real 3-axis tensor: channel 0 = real part, channel 1 = imaginary."""

    data: np.ndarray
    config: StftConfig
    original_length: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[0] != 2 or data.shape[1] != self.config.keep_bins:
            raise ValueError(f"expected (2, {self.config.keep_bins}, L) data, got {data.shape}")
        if data.size and not np.all(np.isfinite(data)):
            raise ValueError("RI tensor contains NaN or Inf")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]


def _pad_signal(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n_frames = cfg.frame_count(samples.size)
    total = cfg.padded_length(n_frames)
    out = np.zeros(total, dtype=np.float64)
    out[cfg.front_pad : cfg.front_pad + samples.size] = samples
    return out


def stft(audio: AudioBuffer, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    """Analyze a signal into a ``keep_bins`` x L complex spectrogram."""
    cfg = cfg or StftConfig()
    if len(audio) < 1:
        raise ValueError("cannot analyze an empty signal")
    padded = _pad_signal(audio.samples.astype(np.float64), cfg)
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.frame_size)[:: cfg.hop]
    spec = np.fft.rfft(frames * cfg.window_values, axis=1)[:, : cfg.keep_bins]
    return ComplexSpectrogram(spec.T.copy(), cfg, len(audio))


def istft(
    spec: ComplexSpectrogram,
    length: int | None = None,
    sample_rate: int = PIPELINE_RATE,
) -> AudioBuffer:
    """Overlap-add synthesis back to the time domain.

    The dropped upper bins are rebuilt by conjugate symmetry with the Nyquist
    bin set to zero. The result is truncated to ``length`` samples (the
    recorded original length by default).
    """
    cfg = spec.config
    if length is None:
        length = spec.original_length
    total = cfg.padded_length(spec.n_frames)
    max_length = total - cfg.front_pad
    if not 0 <= length <= max_length:
        raise ValueError(f"length {length} exceeds reconstructable {max_length}")
    n_rfft = cfg.frame_size // 2 + 1
    full = np.zeros((spec.n_frames, n_rfft), dtype=np.complex128)
    full[:, : cfg.keep_bins] = spec.data.T
    frames = np.fft.irfft(full, n=cfg.frame_size, axis=1) * cfg.window_values
    out = np.zeros(total, dtype=np.float64)
    envelope = np.zeros(total, dtype=np.float64)
    w_sq = cfg.window_values**2
    for m in range(spec.n_frames):
        start = m * cfg.hop
        out[start : start + cfg.frame_size] += frames[m]
        envelope[start : start + cfg.frame_size] += w_sq
    out = np.where(envelope > _ENVELOPE_GUARD, out / np.maximum(envelope, _ENVELOPE_GUARD), 0.0)
    return AudioBuffer(out[cfg.front_pad : cfg.front_pad + length], sample_rate)


def ri_pack(spec: ComplexSpectrogram) -> RiTensor:
    """Stack real and imaginary parts as two channels."""
    data = np.stack([spec.data.real, spec.data.imag])
    return RiTensor(data, spec.config, spec.original_length)


def ri_unpack(tensor: RiTensor) -> ComplexSpectrogram:
    """Exact inverse of :func:`ri_pack`."""
    data = tensor.data[0] + 1j * tensor.data[1]
    return ComplexSpectrogram(data, tensor.config, tensor.original_length)


def log_spectrum(spec: ComplexSpectrogram, floor_db: float = -80.0) -> np.ndarray:
    """Natural-log magnitude, floored at ``floor_db`` (relative to 1.0)."""
    if floor_db >= 0:
        raise ValueError(f"floor_db must be negative, got {floor_db}")
    floor_linear = 10.0 ** (floor_db / 20.0)
    return np.log(np.maximum(np.abs(spec.data), floor_linear))


def combine_mag_phase(mag: np.ndarray, phase_source: ComplexSpectrogram) -> ComplexSpectrogram:
    """Attach ``phase_source``'s phase to a magnitude matrix.

    Entries where the phase source has zero magnitude map to zero.
    """
    if mag.shape != phase_source.data.shape:
        raise ValueError(f"shape mismatch: {mag.shape} vs {phase_source.data.shape}")
    absval = np.abs(phase_source.data)
    unit = np.where(absval > 0, phase_source.data / np.where(absval > 0, absval, 1.0), 0.0)
    return ComplexSpectrogram(mag * unit, phase_source.config, phase_source.original_length)


def pad_frames(tensor: RiTensor, multiple: int = 128) -> tuple[RiTensor, int]:
    """Zero-pad the frame axis up to the next multiple; returns (padded, crop).

    ``crop`` is the original frame count, for :func:`crop_frames`.
    """
    if multiple <= 0:
        raise ValueError("multiple must be positive")
    n = tensor.n_frames
    target = -(-n // multiple) * multiple
    if target == n:
        return tensor, n
    pad = np.zeros((2, tensor.config.keep_bins, target - n), dtype=tensor.data.dtype)
    data = np.concatenate([tensor.data, pad], axis=2)
    return RiTensor(data, tensor.config, tensor.original_length), n


def crop_frames(tensor: RiTensor, crop: int) -> RiTensor:
    if crop > tensor.n_frames:
        raise ValueError(f"crop {crop} exceeds frame count {tensor.n_frames}")
    if crop == tensor.n_frames:
        return tensor
    return RiTensor(tensor.data[:, :, :crop], tensor.config, tensor.original_length)
