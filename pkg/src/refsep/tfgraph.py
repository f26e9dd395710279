"""Differentiable torch twins of the numpy STFT/ISTFT.

Training backpropagates a waveform loss through synthesis, so the exact
analysis/synthesis conventions of :mod:`refsep.dsp` are reimplemented here on
tensors: same periodic Hann window, same front padding, same squared-window
overlap-add normalization, same dropped-Nyquist reconstruction.  The two
implementations are cross-checked to float64 precision in the test suite;
keeping them numerically interchangeable is what makes offline features and
in-graph features equivalent.

Waveforms are (..., T); feature tensors are (..., 2, keep_bins, frames) with
channel 0 real, channel 1 imaginary.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor

from .dsp import _ENVELOPE_GUARD, StftConfig


def _window_for(cfg: StftConfig, dtype: torch.dtype, device: torch.device) -> Tensor:
    # window_values is a frozen array; copy so torch gets a writable buffer.
    return torch.as_tensor(cfg.window_values.copy(), dtype=dtype, device=device)


def stft_torch(wave: Tensor, cfg: StftConfig | None = None) -> Tensor:
    """Analyze (..., T) waveforms into (..., 2, keep_bins, L) RI tensors."""
    cfg = cfg or StftConfig()
    if wave.shape[-1] < 1:
        raise ValueError("cannot analyze an empty signal")
    batch_shape = wave.shape[:-1]
    flat = wave.reshape(-1, wave.shape[-1])
    n = flat.shape[-1]
    n_frames = cfg.frame_count(n)
    total = cfg.padded_length(n_frames)
    padded = F.pad(flat, (cfg.front_pad, total - cfg.front_pad - n))
    frames = padded.unfold(-1, cfg.frame_size, cfg.hop)  # (B, L, frame)
    window = _window_for(cfg, wave.dtype, wave.device)
    spec = torch.fft.rfft(frames * window, dim=-1)[..., : cfg.keep_bins]
    ri = torch.stack([spec.real, spec.imag], dim=1)  # (B, 2, L, K)
    return ri.transpose(-1, -2).reshape(*batch_shape, 2, cfg.keep_bins, n_frames)


def istft_torch(ri: Tensor, length: int, cfg: StftConfig | None = None) -> Tensor:
    """Synthesize (..., 2, keep_bins, L) RI tensors back to (..., length).

    Dropped upper bins enter as zeros (Nyquist included), matching
    :func:`refsep.dsp.istft`; ``length`` must not exceed the reconstructable
    span.  The graph is differentiable end to end.
    """
    cfg = cfg or StftConfig()
    if ri.dim() < 3 or ri.shape[-3] != 2 or ri.shape[-2] != cfg.keep_bins:
        raise ValueError(
            f"expected (..., 2, {cfg.keep_bins}, L) RI tensor, "
            f"got {tuple(ri.shape)}"
        )
    batch_shape = ri.shape[:-3]
    n_frames = ri.shape[-1]
    total = cfg.padded_length(n_frames)
    if not 0 <= length <= total - cfg.front_pad:
        raise ValueError(
            f"length {length} exceeds reconstructable {total - cfg.front_pad}"
        )
    flat = ri.reshape(-1, 2, cfg.keep_bins, n_frames)
    spec = torch.complex(flat[:, 0], flat[:, 1]).transpose(-1, -2)  # (B, L, K)
    n_rfft = cfg.frame_size // 2 + 1
    pad_bins = n_rfft - cfg.keep_bins
    if pad_bins:
        spec = F.pad(spec, (0, pad_bins))
    window = _window_for(cfg, flat.dtype, flat.device)
    frames = torch.fft.irfft(spec, n=cfg.frame_size, dim=-1) * window

    # Overlap-add: frames become columns of an unfolded 1-D image.
    ola = F.fold(frames.transpose(1, 2), output_size=(total, 1),
                 kernel_size=(cfg.frame_size, 1), stride=(cfg.hop, 1))
    ola = ola.reshape(-1, total)
    envelope = F.fold((window * window)[None, :, None].expand(1, -1, n_frames),
                      output_size=(total, 1), kernel_size=(cfg.frame_size, 1),
                      stride=(cfg.hop, 1)).reshape(total)
    out = torch.where(envelope > _ENVELOPE_GUARD,
                      ola / envelope.clamp_min(_ENVELOPE_GUARD),
                      torch.zeros((), dtype=ola.dtype, device=ola.device))
    out = out[:, cfg.front_pad: cfg.front_pad + length]
    return out.reshape(*batch_shape, length)


def log_spectrum_torch(ri: Tensor, floor_db: float = -80.0) -> Tensor:
    """Floored natural-log magnitude of (..., 2, K, L) RI tensors, as (..., 1, K, L).

    Differentiable twin of :func:`refsep.dsp.log_spectrum`; the floor keeps the
    gradient finite on silent cells.
    """
    if floor_db >= 0:
        raise ValueError(f"floor_db must be negative, got {floor_db}")
    if ri.dim() < 3 or ri.shape[-3] != 2:
        raise ValueError(f"expected (..., 2, K, L) RI tensor, got {tuple(ri.shape)}")
    floor = 10.0 ** (floor_db / 20.0)
    mag = torch.linalg.vector_norm(ri, dim=-3, keepdim=True)
    return torch.log(mag.clamp_min(floor))


def magnitude_with_phase_of(mag: Tensor, phase_ri: Tensor) -> Tensor:
    """Attach ``phase_ri``'s phase to (..., 1, K, L) magnitudes; returns RI.

    Cells where the phase source is silent map to zero, as in
    :func:`refsep.dsp.combine_mag_phase`.
    """
    if phase_ri.shape[-3] != 2 or mag.shape[-3] != 1:
        raise ValueError(
            f"expected (..., 1, K, L) magnitude and (..., 2, K, L) phase "
            f"source, got {tuple(mag.shape)} and {tuple(phase_ri.shape)}"
        )
    norm = torch.linalg.vector_norm(phase_ri, dim=-3, keepdim=True)
    unit = torch.where(norm > 0, phase_ri / norm.clamp_min(torch.finfo(phase_ri.dtype).tiny),
                       torch.zeros((), dtype=phase_ri.dtype, device=phase_ri.device))
    return mag * unit
