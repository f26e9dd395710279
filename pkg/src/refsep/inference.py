"""Applying a separator network to waveforms.

The pipeline is the same in training and deployment: analyze mixture and
reference, build network features, pad the frame axis to the network's
stride, forward, crop, and synthesize the estimate back to a waveform.
:func:`run_model` keeps the whole chain differentiable for the trainer;
:func:`separate` is the convenience wrapper for AudioBuffers.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor

from .audio import PIPELINE_RATE, AudioBuffer, resample
from .dsp import StftConfig
from .mixing import fit_reference
from .model import SiameseUNet
from .tfgraph import (
    istft_torch,
    log_spectrum_torch,
    magnitude_with_phase_of,
    stft_torch,
)

__all__ = ["features_for", "run_model", "separate"]


def features_for(ri: Tensor, feature_mode: str) -> Tensor:
    """Network input features from an RI tensor: identity or log magnitude."""
    if feature_mode == "ri":
        return ri
    if feature_mode == "ls":
        return log_spectrum_torch(ri)
    raise ValueError(f"unknown feature mode {feature_mode!r}")


def _pad_frame_axis(feat: Tensor, multiple: int) -> Tensor:
    frames = feat.shape[-1]
    target = -(-frames // multiple) * multiple
    return F.pad(feat, (0, target - frames)) if target != frames else feat


def run_model(model: SiameseUNet, mix_wave: Tensor, ref_wave: Tensor,
              cfg: StftConfig | None = None) -> tuple[Tensor, Tensor]:
    """Estimate the referenced speaker in (..., T) mixtures.

    Returns ``(est_wave, est_feat)``: the (..., T) waveform estimate and the
    network-domain estimate (RI pair, or log magnitude for an LS model)
    cropped to the true frame count.  Gradients flow through both.
    """
    cfg = cfg or StftConfig()
    if mix_wave.shape != ref_wave.shape:
        raise ValueError(
            f"mixture {tuple(mix_wave.shape)} and reference "
            f"{tuple(ref_wave.shape)} shapes disagree"
        )
    mix_ri = stft_torch(mix_wave, cfg)
    mode = model.config.feature_mode
    mix_feat = features_for(mix_ri, mode)
    ref_feat = features_for(stft_torch(ref_wave, cfg), mode)

    multiple = 2 ** model.config.depth
    frames = mix_ri.shape[-1]
    out = model(_pad_frame_axis(mix_feat, multiple),
                _pad_frame_axis(ref_feat, multiple))[..., :frames]
    if mode == "ri":
        est_ri = out
    else:
        est_ri = magnitude_with_phase_of(torch.exp(out), mix_ri)
    est_wave = istft_torch(est_ri, mix_wave.shape[-1], cfg)
    return est_wave, out


def separate(model: SiameseUNet, mixture: AudioBuffer, reference: AudioBuffer,
             cfg: StftConfig | None = None) -> AudioBuffer:
    """Extract the referenced speaker from a mixture recording.

    Both signals are resampled to the pipeline rate if needed and the
    reference is tiled/truncated to the mixture length.  Runs in evaluation
    mode without gradients; the estimate has the (resampled) mixture's length.
    """
    mixture = resample(mixture, PIPELINE_RATE)
    reference = fit_reference(resample(reference, PIPELINE_RATE), len(mixture))
    mix = torch.as_tensor(mixture.samples.copy(), dtype=torch.float32)
    ref = torch.as_tensor(reference.samples.copy(), dtype=torch.float32)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            est, _ = run_model(model, mix, ref, cfg)
    finally:
        model.train(was_training)
    return AudioBuffer(est.numpy(), PIPELINE_RATE)
