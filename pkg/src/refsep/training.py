"""Optimization loop: duration-bucketed batching, swapped-role passes, Adam.

Every source of randomness during training (batch duration, example choice,
crop offsets) is drawn from the trainer's own numpy generator, so a (seed,
data, config) triple fully determines the parameter trajectory.  Checkpoints
capture the model weights, the Adam moments, the generator state, and the
loss history, making a save/resume cycle bit-identical to an uninterrupted
run.

Checkpoint directory layout (when ``TrainConfig.checkpoint_dir`` is set):

    last.ckpt        most recent state, rewritten at every validation point
    best.ckpt        state with the highest validation SI-SDR improvement
    train_log.jsonl  one JSON record per step: losses, timing, validation
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
from torch import Tensor

from .audio import AudioBuffer
from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import StftConfig
from .errors import CheckpointError, TrainingDivergedError
from .inference import features_for, run_model
from .losses import (
    LossBreakdown,
    LossWeights,
    combined_loss,
    pair_ri_mse,
    pair_si_sdr,
    si_sdr,
)
from .mixing import DatasetManifest, MixtureExample, load_example
from .model import SiameseUNet
from .tfgraph import stft_torch

__all__ = [
    "BatchSource",
    "ManifestSampler",
    "TrainConfig",
    "Trainer",
    "crop_example",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters and bookkeeping knobs for a training run.

    Defaults: Adam at learning rate 0.001, batch size 16, loss weights
    (0.75, 0.25), batch durations drawn from 2-8 s.  No weight decay, no
    schedule; gradient clipping exists but is off unless ``clip_grad_norm``
    is set.
    """

    learning_rate: float = 0.001
    batch_size: int = 16
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_steps: int = 10_000
    validate_every: int = 500
    checkpoint_dir: Path | None = None
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    duration_range: tuple[float, float] = (2.0, 8.0)
    clip_grad_norm: float | None = None
    max_rejections: int = 5

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        object.__setattr__(self, "duration_range", tuple(self.duration_range))
        if self.checkpoint_dir is not None:
            object.__setattr__(self, "checkpoint_dir", Path(self.checkpoint_dir))
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError(f"adam_betas must lie in [0, 1), got {self.adam_betas}")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.validate_every < 1:
            raise ValueError(f"validate_every must be >= 1, got {self.validate_every}")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad duration_range {self.duration_range}")
        if self.clip_grad_norm is not None and self.clip_grad_norm <= 0:
            raise ValueError(f"clip_grad_norm must be > 0, got {self.clip_grad_norm}")
        if self.max_rejections < 1:
            raise ValueError(f"max_rejections must be >= 1, got {self.max_rejections}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "adam_betas": list(self.adam_betas),
            "adam_eps": self.adam_eps,
            "max_steps": self.max_steps,
            "validate_every": self.validate_every,
            "checkpoint_dir": None if self.checkpoint_dir is None
            else str(self.checkpoint_dir),
            "seed": self.seed,
            "beta_sisdr": self.weights.beta_sisdr,
            "beta_mse": self.weights.beta_mse,
            "duration_range": list(self.duration_range),
            "clip_grad_norm": self.clip_grad_norm,
            "max_rejections": self.max_rejections,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        weights = LossWeights(data.pop("beta_sisdr"), data.pop("beta_mse"))
        return cls(weights=weights, **data)


class BatchSource(Protocol):
    """Anything that can hand the trainer equal-duration example batches."""

    def sample(self, rng: np.random.Generator, batch_size: int,
               ) -> list[MixtureExample]: ...


def crop_example(example: MixtureExample, rng: np.random.Generator,
                 duration: float) -> MixtureExample:
    """Cut an aligned random window of ``duration`` seconds from an example.

    Mixture and targets share one window so their sum relation is preserved
    bit for bit; each reference gets its own random window.  Durations longer
    than the example are clamped to its full length.
    """
    rate = example.mixture.sample_rate
    total = len(example.mixture)
    n = min(int(round(duration * rate)), total)
    if n < 1:
        raise ValueError(f"crop duration {duration} s leaves no samples")

    def cut(buf: AudioBuffer, start: int) -> AudioBuffer:
        return AudioBuffer(buf.samples[start: start + n], rate)

    start = int(rng.integers(0, total - n + 1))
    ref_starts = rng.integers(0, total - n + 1, size=2)
    return replace(
        example,
        mixture=cut(example.mixture, start),
        target_1=cut(example.target_1, start),
        target_2=cut(example.target_2, start),
        reference_1=cut(example.reference_1, int(ref_starts[0])),
        reference_2=cut(example.reference_2, int(ref_starts[1])),
    )


class ManifestSampler:
    """Duration-bucketed batches drawn from a synthesized dataset.

    Each batch uses a single duration sampled uniformly from
    ``duration_range``; examples are chosen with replacement and cropped at
    random offsets via :func:`crop_example`.
    """

    def __init__(self, manifest: DatasetManifest,
                 duration_range: tuple[float, float] = (2.0, 8.0)):
        if not manifest.records:
            raise ValueError("manifest has no examples to sample from")
        lo, hi = duration_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad duration_range {duration_range}")
        self.manifest = manifest
        self.duration_range = (float(lo), float(hi))

    def sample(self, rng: np.random.Generator, batch_size: int,
               ) -> list[MixtureExample]:
        duration = float(rng.uniform(*self.duration_range))
        picks = rng.integers(0, len(self.manifest.records), size=batch_size)
        examples = [load_example(self.manifest, int(i)) for i in picks]
        # Clamp to the shortest pick: crop_example clamps per example, which
        # would otherwise leave a batch of unequal lengths.
        shortest = min(len(e.mixture) for e in examples)
        duration = min(duration, shortest / examples[0].mixture.sample_rate)
        return [crop_example(e, rng, duration) for e in examples]


def _stack(buffers: Sequence[AudioBuffer]) -> Tensor:
    return torch.as_tensor(np.stack([b.samples for b in buffers]),
                           dtype=torch.float32)


class Trainer:
    """Owns a model, its optimizer state, and the training trajectory."""

    def __init__(self, model: SiameseUNet, config: TrainConfig | None = None,
                 stft_config: StftConfig | None = None):
        self.model = model
        self.config = config or TrainConfig()
        self.stft_config = stft_config or StftConfig()
        self.optimizer = torch.optim.Adam(
            model.parameters(), lr=self.config.learning_rate,
            betas=self.config.adam_betas, eps=self.config.adam_eps)
        self.rng = np.random.default_rng(self.config.seed)
        self.step = 0
        self.best_validation: float | None = None
        self.history: list[LossBreakdown] = []
        self._rejections = 0

    def train_step(self, batch: Sequence[MixtureExample]) -> LossBreakdown:
        """One optimization step on a batch of equal-length examples.

        Each example contributes both role assignments (reference_1 toward
        target_1 and reference_2 toward target_2), run as one doubled batch
        so batch-norm statistics are invariant to speaker relabeling.  A
        non-finite loss rejects the update; ``max_rejections`` in a row
        aborts with :class:`TrainingDivergedError`.
        """
        examples = list(batch)
        if not examples:
            raise ValueError("empty batch")
        length = len(examples[0].mixture)
        if any(len(ex.mixture) != length for ex in examples):
            raise ValueError("batch examples must share one duration")
        self.model.train()

        mix = _stack([ex.mixture for ex in examples])
        mixtures = torch.cat([mix, mix])
        refs = torch.cat([_stack([ex.reference_1 for ex in examples]),
                          _stack([ex.reference_2 for ex in examples])])
        targets = torch.cat([_stack([ex.target_1 for ex in examples]),
                             _stack([ex.target_2 for ex in examples])])

        est_wave, est_feat = run_model(self.model, mixtures, refs,
                                       self.stft_config)
        target_feat = features_for(stft_torch(targets, self.stft_config),
                                   self.model.config.feature_mode)
        b = len(examples)
        sisdr_pair = pair_si_sdr(targets[:b], est_wave[:b],
                                 targets[b:], est_wave[b:]).mean()
        mse_pair = pair_ri_mse(target_feat[:b], est_feat[:b],
                               target_feat[b:], est_feat[b:]).mean()
        loss = combined_loss(sisdr_pair, mse_pair, self.config.weights)
        breakdown = LossBreakdown(si_sdr_pair=sisdr_pair.item(),
                                  mse_pair=mse_pair.item(),
                                  combined=loss.item())
        self.history.append(breakdown)

        if not bool(torch.isfinite(loss)):
            self._rejections += 1
            logger.warning("step %d: non-finite loss, update rejected (%d in a row)",
                           self.step, self._rejections)
            self.optimizer.zero_grad(set_to_none=True)
            if self._rejections >= self.config.max_rejections:
                raise TrainingDivergedError(
                    f"{self._rejections} consecutive non-finite losses")
            return breakdown
        self._rejections = 0

        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.config.clip_grad_norm is not None:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(),
                                           self.config.clip_grad_norm)
        self.optimizer.step()
        self.step += 1
        return breakdown

    def validate(self, examples: Sequence[MixtureExample]) -> float:
        """Mean SI-SDR improvement over both role assignments, in dB.

        Runs in evaluation mode (running batch-norm statistics, no updates);
        the improvement per score is si_sdr(target, estimate) minus
        si_sdr(target, mixture).
        """
        examples = list(examples)
        if not examples:
            raise ValueError("validation set is empty")
        was_training = self.model.training
        self.model.eval()
        scores = []
        try:
            with torch.no_grad():
                for ex in examples:
                    mix = _stack([ex.mixture, ex.mixture])
                    refs = _stack([ex.reference_1, ex.reference_2])
                    targets = _stack([ex.target_1, ex.target_2])
                    est, _ = run_model(self.model, mix, refs, self.stft_config)
                    improvement = si_sdr(targets, est) - si_sdr(targets, mix)
                    scores.extend(improvement.tolist())
        finally:
            self.model.train(was_training)
        return float(np.mean(scores))

    def fit(self, source: BatchSource,
            validation: Sequence[MixtureExample] | None = None,
            ) -> list[LossBreakdown]:
        """Run updates until ``config.max_steps``, validating periodically.

        With ``checkpoint_dir`` set, appends one JSON line per step to
        ``train_log.jsonl``, rewrites ``last.ckpt`` at every validation point
        and at the end, and keeps the best validation score in ``best.ckpt``.
        Returns the loss history accumulated by this call.
        """
        cfg = self.config
        out_dir = cfg.checkpoint_dir
        log_fh = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            log_fh = open(out_dir / "train_log.jsonl", "a", encoding="utf-8")
        first = len(self.history)
        try:
            while self.step < cfg.max_steps:
                batch = source.sample(self.rng, cfg.batch_size)
                tic = time.perf_counter()
                breakdown = self.train_step(batch)
                record = {"step": self.step, **breakdown.to_dict(),
                          "seconds": round(time.perf_counter() - tic, 4)}
                if (validation is not None and self.step > 0
                        and self.step % cfg.validate_every == 0):
                    score = self.validate(validation)
                    record["val_si_sdri"] = score
                    if self.best_validation is None or score > self.best_validation:
                        self.best_validation = score
                        if out_dir is not None:
                            self.save(out_dir / "best.ckpt")
                    if out_dir is not None:
                        self.save(out_dir / "last.ckpt")
                if log_fh is not None:
                    log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                    log_fh.flush()
        finally:
            if log_fh is not None:
                log_fh.close()
        if out_dir is not None:
            self.save(out_dir / "last.ckpt")
        return self.history[first:]

    def save(self, path: Path | str) -> None:
        """Checkpoint the full trainer state (weights, moments, rng, history)."""
        extras: dict[str, np.ndarray] = {}
        for idx, entry in self.optimizer.state_dict()["state"].items():
            extras[f"adam.{idx}.step"] = np.float64(entry["step"].item())
            extras[f"adam.{idx}.exp_avg"] = entry["exp_avg"].numpy()
            extras[f"adam.{idx}.exp_avg_sq"] = entry["exp_avg_sq"].numpy()
        meta = {"trainer": {
            "step": self.step,
            "best_validation": self.best_validation,
            "rng_state": self.rng.bit_generator.state,
            "history": [b.to_dict() for b in self.history],
            "config": self.config.to_dict(),
        }}
        save_checkpoint(path, self.model, meta=meta, extras=extras)

    @classmethod
    def resume(cls, path: Path | str, stft_config: StftConfig | None = None,
               **config_overrides) -> "Trainer":
        """Rebuild a trainer mid-run; continuing matches an uninterrupted run.

        ``config_overrides`` replace fields of the stored config (typically a
        larger ``max_steps`` to extend a finished run).
        """
        model, meta, extras = load_checkpoint(path)
        info = meta.get("trainer")
        if info is None:
            raise CheckpointError(
                f"checkpoint carries no trainer state (weights only): {path}")
        config = TrainConfig.from_dict(info["config"])
        if config_overrides:
            config = replace(config, **config_overrides)
        trainer = cls(model, config, stft_config)
        trainer.step = int(info["step"])
        trainer.best_validation = info["best_validation"]
        trainer.history = [LossBreakdown(**entry) for entry in info["history"]]
        trainer.rng.bit_generator.state = info["rng_state"]

        moments: dict[int, dict[str, torch.Tensor]] = {}
        for idx in range(sum(1 for _ in model.parameters())):
            key = f"adam.{idx}.exp_avg"
            if key in extras:
                moments[idx] = {
                    "step": torch.tensor(extras[f"adam.{idx}.step"].item()),
                    "exp_avg": torch.from_numpy(extras[key]),
                    "exp_avg_sq": torch.from_numpy(
                        extras[f"adam.{idx}.exp_avg_sq"]),
                }
        groups = trainer.optimizer.state_dict()["param_groups"]
        trainer.optimizer.load_state_dict({"state": moments,
                                           "param_groups": groups})
        return trainer
