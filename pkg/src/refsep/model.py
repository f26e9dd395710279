"""Siamese U-Net over RI (or log-magnitude) spectrogram tensors.

Two encoder heads — one for the mixture, one for the reference recording —
feed a single decoder.  Each head is a stride-1 stem convolution (projecting
the 2-channel RI input to the working width) followed by seven
conv-batchnorm-relu stages with kernel 4 / stride 2 / padding 1, halving both
axes.  The decoder mirrors this with transpose convolutions; every stage
after the first consumes the previous output concatenated with the skip
activations from *both* heads at the matching scale.  The last decoder stage
drops its ReLU (RI values are signed) and a final 3x3 convolution produces
the estimate.

Channel bookkeeping is the load-bearing invariant: with encoder stage widths
(64, 128, 256, 512, 512, 512, 512), the decoder in-widths are exactly
prev_out + 2 * encoder_out(depth - j), giving the plan
(1024,512)(1536,512)(1536,512)(1536,256)(768,128)(384,64)(192,2).
``ModelConfig`` refuses any plan where this arithmetic fails.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor, nn

from .errors import ConfigError

_STEM_KERNEL = 3  # stride 1, padding 1: the stem only projects channels
_HEAD_KERNEL = 3
_FEATURE_MODES = ("ri", "ls")

Plan = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class ModelConfig:
    """Network shape: plans are (in_channels, out_channels) per stage."""

    feature_mode: str = "ri"
    stem_channels: int = 64
    encoder_plan: Plan = (
        (64, 64), (64, 128), (128, 256), (256, 512),
        (512, 512), (512, 512), (512, 512),
    )
    decoder_plan: Plan = (
        (1024, 512), (1536, 512), (1536, 512), (1536, 256),
        (768, 128), (384, 64), (192, 2),
    )
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    share_encoder_weights: bool = False
    depth: int = 7

    def __post_init__(self):
        object.__setattr__(self, "encoder_plan",
                           tuple(tuple(pair) for pair in self.encoder_plan))
        object.__setattr__(self, "decoder_plan",
                           tuple(tuple(pair) for pair in self.decoder_plan))
        self.check_consistency()

    @property
    def in_channels(self) -> int:
        return {"ri": 2, "ls": 1}[self.feature_mode]

    @property
    def out_channels(self) -> int:
        return self.decoder_plan[-1][1]

    @property
    def encoder_outs(self) -> tuple[int, ...]:
        return tuple(out for _, out in self.encoder_plan)

    @property
    def bottleneck_channels(self) -> int:
        """Channels after concatenating both heads' deepest activations."""
        return 2 * self.encoder_outs[-1]

    def check_consistency(self) -> None:
        """Raise ConfigError unless the channel plan is self-consistent."""
        if self.feature_mode not in _FEATURE_MODES:
            raise ConfigError(f"feature_mode must be one of {_FEATURE_MODES}")
        if min(self.kernel, self.stride, self.padding, self.depth,
               self.stem_channels) < 1:
            raise ConfigError("kernel/stride/padding/depth/stem must be >= 1")
        if self.kernel - self.stride != 2 * self.padding:
            raise ConfigError(
                "kernel - stride must equal 2*padding for exact halving"
            )
        if len(self.encoder_plan) != self.depth:
            raise ConfigError(
                f"encoder_plan has {len(self.encoder_plan)} stages, "
                f"depth is {self.depth}"
            )
        if len(self.decoder_plan) != self.depth:
            raise ConfigError(
                f"decoder_plan has {len(self.decoder_plan)} stages, "
                f"depth is {self.depth}"
            )
        if self.encoder_plan[0][0] != self.stem_channels:
            raise ConfigError(
                f"first encoder stage expects {self.encoder_plan[0][0]} "
                f"channels, stem provides {self.stem_channels}"
            )
        for i in range(1, self.depth):
            if self.encoder_plan[i][0] != self.encoder_plan[i - 1][1]:
                raise ConfigError(f"encoder plan breaks at stage {i}")
        outs = self.encoder_outs
        if self.decoder_plan[0][0] != 2 * outs[-1]:
            raise ConfigError(
                f"decoder stage 0 expects {self.decoder_plan[0][0]} channels, "
                f"bottleneck concat provides {2 * outs[-1]}"
            )
        for j in range(1, self.depth):
            expected = self.decoder_plan[j - 1][1] + 2 * outs[self.depth - 1 - j]
            if self.decoder_plan[j][0] != expected:
                raise ConfigError(
                    f"decoder stage {j} expects {self.decoder_plan[j][0]} "
                    f"channels but previous output plus both skips give "
                    f"{expected}"
                )
        if self.out_channels != self.in_channels:
            raise ConfigError(
                f"decoder must end in {self.in_channels} channel(s) for "
                f"feature mode {self.feature_mode!r}, plan ends in "
                f"{self.out_channels}"
            )

    def to_dict(self) -> dict:
        return {
            "feature_mode": self.feature_mode,
            "stem_channels": self.stem_channels,
            "encoder_plan": [list(p) for p in self.encoder_plan],
            "decoder_plan": [list(p) for p in self.decoder_plan],
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
            "share_encoder_weights": self.share_encoder_weights,
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            feature_mode=d["feature_mode"],
            stem_channels=d["stem_channels"],
            encoder_plan=tuple(tuple(p) for p in d["encoder_plan"]),
            decoder_plan=tuple(tuple(p) for p in d["decoder_plan"]),
            kernel=d["kernel"],
            stride=d["stride"],
            padding=d["padding"],
            share_encoder_weights=d["share_encoder_weights"],
            depth=d["depth"],
        )


def make_model_config(feature_mode: str = "ri",
                      widths: Sequence[int] = (64, 128, 256, 512, 512, 512, 512),
                      stem_channels: int | None = None,
                      share_encoder_weights: bool = False) -> ModelConfig:
    """Derive a consistent config from encoder stage widths alone.

    ``widths[i]`` is the output channel count of stride-2 stage i.  The
    decoder widths mirror the encoder (one scale up), and the in-channel plan
    follows from the dual-skip concatenation rule, so the result passes
    ``check_consistency`` by construction.  The defaults reproduce the full
    model; shorter/narrower width tuples give thin variants for quick
    experiments.
    """
    widths = tuple(int(w) for w in widths)
    if not widths or any(w < 1 for w in widths):
        raise ConfigError("widths must be a nonempty tuple of positive ints")
    depth = len(widths)
    stem = widths[0] if stem_channels is None else int(stem_channels)
    n_out = {"ri": 2, "ls": 1}.get(feature_mode)
    if n_out is None:
        raise ConfigError(f"feature_mode must be one of {_FEATURE_MODES}")

    encoder_plan = [(stem, widths[0])]
    encoder_plan += [(widths[i - 1], widths[i]) for i in range(1, depth)]

    dec_outs = [widths[depth - 2 - j] for j in range(depth - 1)] + [n_out]
    dec_ins = [2 * widths[-1]]
    dec_ins += [dec_outs[j - 1] + 2 * widths[depth - 1 - j]
                for j in range(1, depth)]
    decoder_plan = list(zip(dec_ins, dec_outs))
    return ModelConfig(
        feature_mode=feature_mode,
        stem_channels=stem,
        encoder_plan=tuple(encoder_plan),
        decoder_plan=tuple(decoder_plan),
        share_encoder_weights=share_encoder_weights,
        depth=depth,
    )


@dataclass
class FeaturePyramid:
    """Per-scale encoder activations: scale s is at 1/2^s of the input size.

    ``scales[0]`` is the stem output at full resolution; ``scales[1:]`` are
    the stride-2 stage outputs that feed the decoder's skip connections.  The
    deepest stage lives in ``bottleneck`` (scale ``depth``).
    """

    scales: tuple[Tensor, ...]
    bottleneck: Tensor


class _EncoderHead(nn.Module):
    """Stem projection plus the stride-2 CBR stack for one input stream."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.stem = nn.Conv2d(config.in_channels, config.stem_channels,
                              _STEM_KERNEL, stride=1, padding=_STEM_KERNEL // 2)
        self.stages = nn.ModuleList([
            nn.Sequential(
                nn.Conv2d(cin, cout, config.kernel, config.stride,
                          config.padding),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            )
            for cin, cout in config.encoder_plan
        ])

    def forward(self, x: Tensor) -> FeaturePyramid:
        feats = [self.stem(x)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return FeaturePyramid(scales=tuple(feats[:-1]), bottleneck=feats[-1])


class SiameseUNet(nn.Module):
    """The extractor: forward(mixture_features, reference_features) -> estimate.

    Inputs are (channels, freq, frames) or batched (batch, channels, freq,
    frames) with both spatial sizes divisible by 2^depth; the output matches
    the input shape.  With ``share_encoder_weights`` the reference head is the
    mixture head (true Siamese); otherwise the heads are independent twins.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.mixture_encoder = _EncoderHead(config)
        if config.share_encoder_weights:
            self.reference_encoder = self.mixture_encoder
        else:
            self.reference_encoder = _EncoderHead(config)
        stages = []
        for j, (cin, cout) in enumerate(config.decoder_plan):
            layers: list[nn.Module] = [
                nn.ConvTranspose2d(cin, cout, config.kernel, config.stride,
                                   config.padding),
                nn.BatchNorm2d(cout),
            ]
            if j < config.depth - 1:  # last stage stays signed: no ReLU
                layers.append(nn.ReLU(inplace=True))
            stages.append(nn.Sequential(*layers))
        self.decoder = nn.ModuleList(stages)
        self.head = nn.Conv2d(config.out_channels, config.out_channels,
                              _HEAD_KERNEL, stride=1, padding=_HEAD_KERNEL // 2)

    def encode(self, x: Tensor, head: str = "mixture") -> FeaturePyramid:
        """Run one encoder head on (batched) features."""
        encoder = {"mixture": self.mixture_encoder,
                   "reference": self.reference_encoder}.get(head)
        if encoder is None:
            raise ValueError(f"head must be 'mixture' or 'reference', got {head!r}")
        return encoder(self._check_input(x, "input"))

    def _check_input(self, x: Tensor, name: str) -> Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.dim() != 4:
            raise ValueError(f"{name} must be 3- or 4-dimensional, got {x.dim()}")
        if x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"{name} has {x.shape[1]} channels, expected "
                f"{self.config.in_channels}"
            )
        divisor = 2 ** self.config.depth
        if x.shape[2] % divisor or x.shape[3] % divisor:
            raise ValueError(
                f"{name} spatial dims {tuple(x.shape[2:])} must be multiples "
                f"of 2^depth = {divisor}"
            )
        return x

    def forward(self, mixture: Tensor, reference: Tensor) -> Tensor:
        squeeze = mixture.dim() == 3
        mixture = self._check_input(mixture, "mixture features")
        reference = self._check_input(reference, "reference features")
        if mixture.shape != reference.shape:
            raise ValueError(
                f"mixture and reference shapes differ: "
                f"{tuple(mixture.shape)} vs {tuple(reference.shape)}"
            )
        mix = self.mixture_encoder(mixture)
        ref = self.reference_encoder(reference)
        x = torch.cat([mix.bottleneck, ref.bottleneck], dim=1)
        for j, stage in enumerate(self.decoder):
            if j > 0:
                scale = self.config.depth - j
                x = torch.cat([x, mix.scales[scale], ref.scales[scale]], dim=1)
            x = stage(x)
        x = self.head(x)
        return x.squeeze(0) if squeeze else x


def build_model(config: ModelConfig, seed: int = 0) -> SiameseUNet:
    """Construct and initialize a network deterministically from a seed.

    Initialization is the standard convolution scheme (Kaiming-uniform
    weights with fan-in scaling, uniform biases); batch-norm starts at
    scale 1 / shift 0 with running statistics (0, 1), momentum 0.1.
    """
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return SiameseUNet(config)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
