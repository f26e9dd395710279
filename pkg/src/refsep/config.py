"""Flat dotted-key configuration: registry, file parsing, overrides.

Every tunable of the pipeline lives in one registry with a default, a parser,
and a help line.  Values resolve in three layers — built-in defaults, then a
config file of ``key = value`` lines, then explicit overrides — and unknown
keys are rejected everywhere, so a config file doubles as a reproducible
experiment record.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .acoustics import SceneRanges
from .dsp import StftConfig
from .errors import ConfigError

__all__ = [
    "REGISTRY",
    "default_config",
    "describe_keys",
    "parse_config_file",
    "resolve_config",
    "scene_ranges_from",
    "stft_config_from",
]


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


@dataclass(frozen=True)
class ConfigKey:
    default: object
    parse: Callable[[str], object]
    help: str


REGISTRY: dict[str, ConfigKey] = {
    # Time-frequency analysis.
    "dsp.frame_size": ConfigKey(256, int, "analysis frame length in samples"),
    "dsp.hop": ConfigKey(64, int, "hop between frames in samples"),
    "dsp.window": ConfigKey("hann", str, "analysis/synthesis window"),
    "dsp.keep_bins": ConfigKey(128, int, "retained low-frequency bins"),
    # Network.
    "model.feature_mode": ConfigKey("ri", str,
                                    "input/output features: ri or ls"),
    "model.widths": ConfigKey((64, 128, 256, 512, 512, 512, 512),
                              _parse_int_tuple,
                              "encoder stage widths, comma separated"),
    "model.shared_encoder": ConfigKey(False, _parse_bool,
                                      "share weights between the two heads"),
    "model.seed": ConfigKey(0, int, "weight initialization seed"),
    # Mixing.
    "mix.duration_min": ConfigKey(2.0, float, "shortest example duration, s"),
    "mix.duration_max": ConfigKey(8.0, float, "longest example duration, s"),
    "mix.snr_min": ConfigKey(10.0, float, "lowest speech-to-noise ratio, dB"),
    "mix.snr_max": ConfigKey(25.0, float, "highest speech-to-noise ratio, dB"),
    "mix.target_kind": ConfigKey("image", str,
                                 "training target: image or dry"),
    # Acoustic scenes.
    "scene.room_x_min": ConfigKey(4.0, float, "room length lower bound, m"),
    "scene.room_x_max": ConfigKey(8.0, float, "room length upper bound, m"),
    "scene.room_y_min": ConfigKey(4.0, float, "room width lower bound, m"),
    "scene.room_y_max": ConfigKey(8.0, float, "room width upper bound, m"),
    "scene.room_z_min": ConfigKey(2.5, float, "room height lower bound, m"),
    "scene.room_z_max": ConfigKey(3.0, float, "room height upper bound, m"),
    "scene.t60_min": ConfigKey(0.16, float, "reverberation time lower bound, s"),
    "scene.t60_max": ConfigKey(2.0, float, "reverberation time upper bound, s"),
    "scene.mic_offset_min": ConfigKey(-0.5, float,
                                      "mic offset from room center, m"),
    "scene.mic_offset_max": ConfigKey(0.5, float,
                                      "mic offset from room center, m"),
    "scene.mic_z": ConfigKey(1.5, float, "microphone height, m"),
    "scene.source_angle_min": ConfigKey(0.0, float,
                                        "source azimuth lower bound, deg"),
    "scene.source_angle_max": ConfigKey(180.0, float,
                                        "source azimuth upper bound, deg"),
    "scene.source_distance_base": ConfigKey(1.0, float,
                                            "nominal source distance, m"),
    "scene.source_distance_offset_min": ConfigKey(-0.5, float,
                                                  "distance jitter, m"),
    "scene.source_distance_offset_max": ConfigKey(0.5, float,
                                                  "distance jitter, m"),
    # Training.
    "train.lr": ConfigKey(0.001, float, "Adam learning rate"),
    "train.batch_size": ConfigKey(16, int, "examples per training batch"),
    "train.beta": ConfigKey(0.75, float,
                            "weight of the SI-SDR term (MSE gets 1 - beta)"),
    "train.max_steps": ConfigKey(2000, int, "optimization steps to run"),
    "train.validate_every": ConfigKey(200, int, "steps between validations"),
    "train.seed": ConfigKey(0, int, "batch sampling seed"),
    "train.clip_grad_norm": ConfigKey(0.0, float,
                                      "gradient norm clip; 0 disables"),
}


def default_config() -> dict[str, object]:
    return {name: key.default for name, key in REGISTRY.items()}


def _parse_value(name: str, text: str, where: str) -> object:
    try:
        return REGISTRY[name].parse(text)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {name}: {exc}") from exc


def parse_config_file(path: Path | str) -> dict[str, object]:
    """Read ``key = value`` lines; ``#`` starts a comment, blanks ignored."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, object] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        key, sep, text = line.partition("=")
        key, text = key.strip(), text.strip()
        if not sep or not key:
            raise ConfigError(f"{where}: expected 'key = value', got {raw!r}")
        if key not in REGISTRY:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        values[key] = _parse_value(key, text, where)
    return values


def resolve_config(config_file: Path | str | None = None,
                   overrides: Iterable[str] = ()) -> dict[str, object]:
    """Defaults, then the config file, then ``key=value`` override strings."""
    values = default_config()
    if config_file is not None:
        values.update(parse_config_file(config_file))
    for item in overrides:
        key, sep, text = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, text.strip(), f"override {item!r}")
    return values


def describe_keys() -> str:
    """One help line per registry key, for --help output."""
    lines = []
    for name in sorted(REGISTRY):
        key = REGISTRY[name]
        default = ",".join(map(str, key.default)) \
            if isinstance(key.default, tuple) else key.default
        lines.append(f"  {name:<34} {default!s:<24} {key.help}")
    return "\n".join(lines)


def stft_config_from(cfg: Mapping[str, object]) -> StftConfig:
    return StftConfig(frame_size=cfg["dsp.frame_size"], hop=cfg["dsp.hop"],
                      window=cfg["dsp.window"], keep_bins=cfg["dsp.keep_bins"])


def scene_ranges_from(cfg: Mapping[str, object]) -> SceneRanges:
    def pair(stem: str) -> tuple[float, float]:
        return (cfg[f"{stem}_min"], cfg[f"{stem}_max"])

    return SceneRanges(
        room_x=pair("scene.room_x"), room_y=pair("scene.room_y"),
        room_z=pair("scene.room_z"), t60=pair("scene.t60"),
        mic_offset=pair("scene.mic_offset"), mic_z=cfg["scene.mic_z"],
        source_angle=pair("scene.source_angle"),
        source_distance_base=cfg["scene.source_distance_base"],
        source_distance_offset=pair("scene.source_distance_offset"),
    )
