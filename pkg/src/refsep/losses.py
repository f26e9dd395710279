"""Training objectives: SI-SDR, swapped-pair averaging, RI-MSE, combination.

SI-SDR follows the projection form

    alpha = <est, s> / <s, s>
    si_sdr = 10 log10(||alpha s||^2 / ||alpha s - est||^2)

with no mean-centering, an ``eps`` guard in numerator and denominator of the
log, and a +100 dB cap that also catches denominator underflow (residual
energy at or below ``eps`` times the projected energy counts as perfect).
The combined objective is ``beta_sisdr * (-si_sdr_pair) + beta_mse *
mse_pair``: SI-SDR enters negated so minimization improves it, while the MSE
regularizer enters as-is.

All functions run on torch tensors (AudioBuffers and arrays are coerced) and
stay differentiable; batch dimensions broadcast, with scores reduced over the
last axis only.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .audio import AudioBuffer

SI_SDR_CAP_DB = 100.0
SI_SDR_EPS = 1e-8


def _as_tensor(x) -> Tensor:
    if isinstance(x, AudioBuffer):
        # AudioBuffer freezes its array; torch rejects non-writable views.
        return torch.as_tensor(x.samples.copy())
    return torch.as_tensor(x)


@dataclass(frozen=True)
class LossWeights:
    """Convex weights for the combined objective; must sum to one."""

    beta_sisdr: float = 0.75
    beta_mse: float = 0.25

    def __post_init__(self):
        if self.beta_sisdr < 0 or self.beta_mse < 0:
            raise ValueError("loss weights must be nonnegative")
        if abs(self.beta_sisdr + self.beta_mse - 1.0) > 1e-9:
            raise ValueError(
                f"weights must sum to 1, got "
                f"{self.beta_sisdr} + {self.beta_mse}"
            )


@dataclass(frozen=True)
class LossBreakdown:
    """One step's objective terms: pair SI-SDR (dB), pair MSE, combined."""

    si_sdr_pair: float
    mse_pair: float
    combined: float

    def to_dict(self) -> dict:
        return {"si_sdr_pair": self.si_sdr_pair, "mse_pair": self.mse_pair,
                "combined": self.combined}


def si_sdr(target, estimate, eps: float = SI_SDR_EPS) -> Tensor:
    """Scale-invariant SDR in dB, reduced over the last axis.

    Raises if shapes differ or any target slice is identically zero (the
    projection is undefined there).
    """
    s = _as_tensor(target)
    est = _as_tensor(estimate)
    if s.shape != est.shape:
        raise ValueError(f"shape mismatch: {tuple(s.shape)} vs {tuple(est.shape)}")
    if s.shape[-1] < 1:
        raise ValueError("empty signals")
    s_energy = s.square().sum(dim=-1)
    if not bool((s_energy > 0).all()):
        raise ValueError("target contains an all-zero signal")
    alpha = (est * s).sum(dim=-1) / s_energy
    projected = alpha.unsqueeze(-1) * s
    num = projected.square().sum(dim=-1)
    den = (projected - est).square().sum(dim=-1)
    # eps pads only the denominator (a numerator eps would break scale
    # invariance); a second eps guards the log against num == 0.
    db = 10.0 * torch.log10(num / (den + eps) + eps)
    cap = torch.as_tensor(SI_SDR_CAP_DB, dtype=db.dtype, device=db.device)
    return torch.where(den <= eps * num, cap, torch.minimum(db, cap))


def pair_si_sdr(target_1, estimate_1, target_2, estimate_2,
                eps: float = SI_SDR_EPS) -> Tensor:
    """Average the two swapped-role scores: 0.5 (SI-SDR_1 + SI-SDR_2)."""
    return 0.5 * (si_sdr(target_1, estimate_1, eps)
                  + si_sdr(target_2, estimate_2, eps))


def ri_mse(target_ri: Tensor, est_ri: Tensor) -> Tensor:
    """Mean squared difference over the trailing (2, K, L) feature axes."""
    target_ri = _as_tensor(target_ri)
    est_ri = _as_tensor(est_ri)
    if target_ri.shape != est_ri.shape:
        raise ValueError(
            f"shape mismatch: {tuple(target_ri.shape)} vs {tuple(est_ri.shape)}"
        )
    if target_ri.dim() < 3:
        raise ValueError("RI tensors must have at least 3 dimensions")
    diff = (target_ri - est_ri).square()
    return diff.mean(dim=(-3, -2, -1))


def pair_ri_mse(target_ri_1: Tensor, est_ri_1: Tensor,
                target_ri_2: Tensor, est_ri_2: Tensor) -> Tensor:
    """Average the two swapped-role regularizers: 0.5 (MSE_1 + MSE_2)."""
    return 0.5 * (ri_mse(target_ri_1, est_ri_1) + ri_mse(target_ri_2, est_ri_2))


def combined_loss(pair_sisdr, pair_mse, weights: LossWeights | None = None) -> Tensor:
    """beta_sisdr * (-pair_sisdr) + beta_mse * pair_mse."""
    weights = weights or LossWeights()
    pair_sisdr = _as_tensor(pair_sisdr)
    pair_mse = _as_tensor(pair_mse)
    return weights.beta_sisdr * (-pair_sisdr) + weights.beta_mse * pair_mse
