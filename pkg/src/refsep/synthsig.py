"""Synthetic speech-like signals for self-contained corpora.

Real recordings are the intended input, but tests and desk-scale experiments
need a corpus that can be generated on the fly.  A voice here is a harmonic
source with a per-speaker pitch and spectral envelope; utterances from the
same voice share those traits while pitch contour and syllabic rhythm vary.
Babble noise is a sum of such voices.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import PIPELINE_RATE, AudioBuffer, write_wav

_MAX_HARMONIC_HZ = 3700.0
_ENVELOPE_ANCHORS_HZ = (0.0, 400.0, 800.0, 1600.0, 2400.0, 3200.0, 4000.0)


@dataclass(frozen=True)
class VoiceProfile:
    """Per-speaker traits shared by all utterances of that speaker."""

    f0_hz: float
    envelope_db: tuple[float, ...]  # gains at _ENVELOPE_ANCHORS_HZ
    tilt: float  # extra 1/k**tilt harmonic rolloff

    def __post_init__(self):
        if not 60.0 <= self.f0_hz <= 400.0:
            raise ValueError(f"f0 {self.f0_hz} Hz outside the speech range")
        if len(self.envelope_db) != len(_ENVELOPE_ANCHORS_HZ):
            raise ValueError("envelope gain count must match anchor count")


def sample_voice(rng: np.random.Generator) -> VoiceProfile:
    """Draw a random voice: pitch in [85, 240] Hz, random spectral shape."""
    f0 = float(rng.uniform(85.0, 240.0))
    env = tuple(float(g) for g in rng.normal(0.0, 5.0, len(_ENVELOPE_ANCHORS_HZ)))
    tilt = float(rng.uniform(0.6, 1.2))
    return VoiceProfile(f0_hz=f0, envelope_db=env, tilt=tilt)


def _smooth_contour(rng: np.random.Generator, n: int, n_ctrl: int) -> np.ndarray:
    """Piecewise-linear interpolation of n_ctrl unit-normal control points."""
    ctrl = rng.normal(0.0, 1.0, n_ctrl)
    x = np.linspace(0.0, 1.0, n_ctrl)
    return np.interp(np.linspace(0.0, 1.0, n), x, ctrl)


def synth_utterance(rng: np.random.Generator, voice: VoiceProfile,
                    duration: float, sample_rate: int = PIPELINE_RATE) -> AudioBuffer:
    """One utterance of ``voice``: drifting pitch, syllabic amplitude rhythm.

    The rng drives the pitch contour, harmonic phases, and rhythm, so a seed
    pins the waveform exactly.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = round(duration * sample_rate)
    # Pitch drifts within about +-15% over the utterance.
    f0_t = voice.f0_hz * 2.0 ** (0.2 * _smooth_contour(rng, n, 8))
    phase = 2.0 * np.pi * np.cumsum(f0_t) / sample_rate

    n_harm = max(1, int(_MAX_HARMONIC_HZ / voice.f0_hz))
    k = np.arange(1, n_harm + 1, dtype=np.float64)
    env_db = np.interp(k * voice.f0_hz, _ENVELOPE_ANCHORS_HZ, voice.envelope_db)
    gains = 10.0 ** (env_db / 20.0) / k ** voice.tilt
    phases = rng.uniform(0.0, 2.0 * np.pi, n_harm)
    x = np.sin(phase[:, None] * k + phases) @ gains

    # Syllabic rhythm: a slow positive envelope, never fully gating the voice.
    syllable = _smooth_contour(rng, n, max(3, int(duration * 3.0)))
    syllable = 0.1 + 0.9 * (syllable - syllable.min()) / (np.ptp(syllable) + 1e-12)
    x *= syllable

    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.35 / peak
    return AudioBuffer(x.astype(np.float32), sample_rate)


def babble_noise(rng: np.random.Generator, duration: float,
                 sample_rate: int = PIPELINE_RATE, n_talkers: int = 6) -> AudioBuffer:
    """Speech-shaped noise: ``n_talkers`` fresh voices talking over each other."""
    if n_talkers < 1:
        raise ValueError("n_talkers must be at least 1")
    n = round(duration * sample_rate)
    acc = np.zeros(n, dtype=np.float64)
    for _ in range(n_talkers):
        voice = sample_voice(rng)
        acc += synth_utterance(rng, voice, duration, sample_rate).samples
    peak = np.max(np.abs(acc))
    if peak > 0:
        acc *= 0.3 / peak
    return AudioBuffer(acc.astype(np.float32), sample_rate)


def make_synthetic_corpus(root: Path | str, n_speakers: int = 4,
                          utterances_per_speaker: int = 3,
                          duration_range: tuple[float, float] = (2.5, 5.0),
                          seed: int = 0,
                          sample_rate: int = PIPELINE_RATE) -> Path:
    """Write a speaker-per-directory WAV tree: ``root/s00/u00.wav`` etc."""
    if n_speakers < 1 or utterances_per_speaker < 1:
        raise ValueError("need at least one speaker and one utterance each")
    root = Path(root)
    rng = np.random.default_rng(seed)
    for s in range(n_speakers):
        spk_dir = root / f"s{s:02d}"
        spk_dir.mkdir(parents=True, exist_ok=True)
        voice = sample_voice(rng)
        for u in range(utterances_per_speaker):
            dur = float(rng.uniform(*duration_range))
            utt = synth_utterance(rng, voice, dur, sample_rate)
            write_wav(spk_dir / f"u{u:02d}.wav", utt)
    return root


def make_noise_corpus(root: Path | str, n_clips: int = 3,
                      duration_range: tuple[float, float] = (4.0, 8.0),
                      seed: int = 0,
                      sample_rate: int = PIPELINE_RATE) -> Path:
    """Write babble clips under ``root/babble/`` (grouped as one 'speaker')."""
    if n_clips < 2:
        raise ValueError("a usable noise corpus needs at least 2 clips")
    root = Path(root)
    clip_dir = root / "babble"
    clip_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for c in range(n_clips):
        dur = float(rng.uniform(*duration_range))
        write_wav(clip_dir / f"b{c:02d}.wav", babble_noise(rng, dur, sample_rate))
    return root
