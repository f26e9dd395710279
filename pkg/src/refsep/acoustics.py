"""Scene sampling, image-method room impulse responses, and convolution.

Scenes follow a fixed parameter table: room x/y ~ U[4,8] m, z ~ U[2.5,3] m,
T60 ~ U[0.16,2] s, microphone near the room center, and sources placed on the
microphone's horizontal plane at 1 ± 0.5 m and a uniform azimuth in [0, 180]
degrees. RIR synthesis is the classic image-source method with a uniform wall
reflection coefficient derived from T60 via Sabine's formula; fractional
delays use an 81-tap Hann-windowed sinc (cutoff 0.9 of Nyquist).
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, fftconvolve, sosfilt

from .audio import AudioBuffer
from .errors import InvalidSceneError, SceneSamplingError, T60EstimationError

if os.environ.get("REFSEP_PURE_PYTHON"):
    from . import _imgsrc_py as _kernel
else:
    try:
        from . import _imgsrc as _kernel  # type: ignore[no-redef]
    except ImportError:
        from . import _imgsrc_py as _kernel  # type: ignore[no-redef]

accumulate_taps = _kernel.accumulate_taps
USING_COMPILED_KERNEL = bool(_kernel.COMPILED)

__all__ = [
    "SPEED_OF_SOUND",
    "SceneRanges",
    "SceneSpec",
    "sample_scene",
    "generate_rir",
    "convolve",
    "estimate_t60",
    "direct_delay_samples",
    "USING_COMPILED_KERNEL",
]

SPEED_OF_SOUND = 343.0
SABINE_COEF = 0.1611
HIGHPASS_HZ = 100.0
WALL_MARGIN = 0.05
SINC_HALF_WIDTH = 40
SINC_CUTOFF_RATIO = 0.9
_MAX_PLACEMENT_TRIES = 200


def _check_range(name, rng_pair):
    lo, hi = rng_pair
    if hi < lo:
        raise ValueError(f"{name} range has hi < lo: {rng_pair}")


@dataclass(frozen=True)
class SceneRanges:
    """Uniform sampling ranges for acoustic scenes (meters/seconds/degrees)."""

    room_x: tuple[float, float] = (4.0, 8.0)
    room_y: tuple[float, float] = (4.0, 8.0)
    room_z: tuple[float, float] = (2.5, 3.0)
    t60: tuple[float, float] = (0.16, 2.0)
    mic_offset: tuple[float, float] = (-0.5, 0.5)
    mic_z: float = 1.5
    source_angle: tuple[float, float] = (0.0, 180.0)
    source_distance_base: float = 1.0
    source_distance_offset: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self):
        for name in ("room_x", "room_y", "room_z", "t60", "mic_offset",
                     "source_angle", "source_distance_offset"):
            _check_range(name, getattr(self, name))
        if self.t60[0] < 0:
            raise ValueError("t60 range must be non-negative")
        if self.mic_z <= 0:
            raise ValueError("mic_z must be positive")


@dataclass(frozen=True)
class SceneSpec:
    """One concrete acoustic scene: room, reverberation time, positions."""

    room_dims: tuple[float, float, float]
    t60: float
    mic_pos: tuple[float, float, float]
    source_pos: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "room_dims", tuple(float(v) for v in self.room_dims))
        object.__setattr__(self, "mic_pos", tuple(float(v) for v in self.mic_pos))
        object.__setattr__(
            self, "source_pos", tuple(tuple(float(v) for v in p) for p in self.source_pos)
        )
        if any(d <= 0 for d in self.room_dims):
            raise InvalidSceneError(f"non-positive room dimension: {self.room_dims}")
        if self.t60 < 0:
            raise InvalidSceneError(f"negative t60: {self.t60}")
        if not self.source_pos:
            raise InvalidSceneError("scene has no sources")
        for label, pos in [("mic", self.mic_pos)] + [
            (f"source {i}", p) for i, p in enumerate(self.source_pos)
        ]:
            if not all(0 < pos[i] < self.room_dims[i] for i in range(3)):
                raise InvalidSceneError(f"{label} at {pos} is outside room {self.room_dims}")

    def to_dict(self) -> dict:
        return {
            "room_dims": list(self.room_dims),
            "t60": self.t60,
            "mic_pos": list(self.mic_pos),
            "source_pos": [list(p) for p in self.source_pos],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            room_dims=tuple(d["room_dims"]),
            t60=float(d["t60"]),
            mic_pos=tuple(d["mic_pos"]),
            source_pos=tuple(tuple(p) for p in d["source_pos"]),
        )


def sample_scene(rng: np.random.Generator, ranges: SceneRanges | None = None,
                 n_sources: int = 2) -> SceneSpec:
    """Draw one scene. Draw order is fixed so a seed pins the scene exactly:
    room x/y/z, t60, mic dx/dy, then (angle, distance) per source.

    Sources landing outside the room (minus a small wall margin) are redrawn;
    persistent failure raises :class:`SceneSamplingError`.
    """
    ranges = ranges or SceneRanges()
    if n_sources < 1:
        raise ValueError("n_sources must be >= 1")
    lx = rng.uniform(*ranges.room_x)
    ly = rng.uniform(*ranges.room_y)
    lz = rng.uniform(*ranges.room_z)
    t60 = rng.uniform(*ranges.t60)
    mic = (
        lx / 2 + rng.uniform(*ranges.mic_offset),
        ly / 2 + rng.uniform(*ranges.mic_offset),
        ranges.mic_z,
    )
    if not all(WALL_MARGIN < mic[i] < (lx, ly, lz)[i] - WALL_MARGIN for i in range(3)):
        raise SceneSamplingError(
            f"mic at {mic} too close to walls of room ({lx:.2f},{ly:.2f},{lz:.2f})"
        )
    sources = []
    for _ in range(n_sources):
        for _attempt in range(_MAX_PLACEMENT_TRIES):
            angle = math.radians(rng.uniform(*ranges.source_angle))
            dist = ranges.source_distance_base + rng.uniform(*ranges.source_distance_offset)
            pos = (
                mic[0] + dist * math.cos(angle),
                mic[1] + dist * math.sin(angle),
                mic[2],
            )
            if dist > 0 and all(
                WALL_MARGIN < pos[i] < (lx, ly, lz)[i] - WALL_MARGIN for i in range(3)
            ):
                sources.append(pos)
                break
        else:
            raise SceneSamplingError(
                f"could not place a source inside room ({lx:.2f},{ly:.2f},{lz:.2f}) "
                f"after {_MAX_PLACEMENT_TRIES} tries"
            )
    return SceneSpec((lx, ly, lz), t60, mic, tuple(sources))


def _reflection_coefficient(room_dims, t60: float) -> float:
    """Uniform wall reflection coefficient from Sabine's formula."""
    lx, ly, lz = room_dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = SABINE_COEF * volume / (surface * t60)
    if alpha > 1.0:
        raise InvalidSceneError(
            f"t60={t60:.3f}s is unreachable for this room (Sabine absorption {alpha:.2f} > 1)"
        )
    return math.sqrt(1.0 - alpha)


def _model_decay_t60(room_dims, beta: float, horizon_s: float,
                     fit_range=(-5.0, -25.0)) -> float:
    """Schroeder T60 the image-source field itself will exhibit.

    Specular image lattices are not diffuse: a beam in direction u loses
    energy at rate c*ln(beta^2)*(|ux|/Lx + |uy|/Ly + |uz|/Lz), and the
    measured decay is the direction average of those exponentials (slower
    than Sabine's ergodic rate, Jensen's inequality). This evaluates that
    average on the same truncated window and fit band the Schroeder
    estimator uses. Returns inf when the window cannot resolve the fit band.
    """
    n_dir = 40
    cz = ((np.arange(n_dir) + 0.5) / n_dir)[:, None]
    phi = ((np.arange(n_dir) + 0.5) / n_dir * (np.pi / 2))[None, :]
    sz = np.sqrt(1.0 - cz**2)
    rate = SPEED_OF_SOUND * math.log(beta * beta) * (
        sz * np.cos(phi) / room_dims[0]
        + sz * np.sin(phi) / room_dims[1]
        + cz / room_dims[2]
    )
    rate = rate.ravel()
    t = np.linspace(0.0, horizon_s, 600)
    tail = np.exp(rate * horizon_s)
    edc = (np.exp(np.outer(t, rate)) - tail[None, :]) @ (1.0 / -rate)
    db = 10.0 * np.log10(np.maximum(edc / edc[0], 1e-30))
    hi, lo = fit_range
    ia = int(np.argmax(db <= hi))
    ib = int(np.argmax(db <= lo))
    if db[ia] > hi or db[ib] > lo:
        return math.inf
    if ib - ia < 4:
        return 0.0
    slope = np.polyfit(t[ia:ib], db[ia:ib], 1)[0]
    return -60.0 / slope


def _calibrate_beta(room_dims, t60: float) -> float:
    """Reflection coefficient whose simulated decay measures as ``t60``.

    Sabine's value is the right neighborhood but measures 10-35% long on the
    specular lattice; a bisection against the decay model pins it down.
    """
    lo_b, hi_b = 0.01, 0.999999
    for _ in range(26):
        mid = 0.5 * (lo_b + hi_b)
        if _model_decay_t60(room_dims, mid, 1.2 * t60) < t60:
            lo_b = mid
        else:
            hi_b = mid
    return 0.5 * (lo_b + hi_b)


def _image_sources(scene: SceneSpec, source_index: int, max_dist: float, beta: float):
    """Enumerate image positions within ``max_dist`` of the microphone.

    Images live at (1-2p)*(src + 2*r*L) per axis for p in {0,1}^3, r in Z^3;
    the amplitude of each is beta^(sum |r+p| + |r|) / (4 pi d).
    """
    dims = np.asarray(scene.room_dims)
    src = np.asarray(scene.source_pos[source_index])
    mic = np.asarray(scene.mic_pos)
    n_per_axis = np.ceil(max_dist / (2.0 * dims)).astype(int)
    r_axes = [np.arange(-n, n + 1) for n in n_per_axis]
    max_order = int(sum(2 * n + 2 for n in n_per_axis))
    beta_pow = beta ** np.arange(max_order + 1)
    all_d, all_a = [], []
    for p in itertools.product((0, 1), repeat=3):
        coord = [
            (1 - 2 * p[i]) * (src[i] + 2.0 * r_axes[i] * dims[i]) - mic[i]
            for i in range(3)
        ]
        refl = [np.abs(r_axes[i] + p[i]) + np.abs(r_axes[i]) for i in range(3)]
        d2 = (
            coord[0][:, None, None] ** 2
            + coord[1][None, :, None] ** 2
            + coord[2][None, None, :] ** 2
        )
        order = (
            refl[0][:, None, None] + refl[1][None, :, None] + refl[2][None, None, :]
        )
        mask = d2 <= max_dist * max_dist
        d = np.sqrt(d2[mask])
        all_d.append(d)
        all_a.append(beta_pow[order[mask]] / (4.0 * np.pi * np.maximum(d, 1e-3)))
    return np.concatenate(all_d), np.concatenate(all_a)


def generate_rir(scene: SceneSpec, source_index: int, sample_rate: int,
                 reflections: bool = True) -> AudioBuffer:
    """Synthesize the RIR from one source of the scene to the microphone.

    With ``reflections=False`` (or t60 == 0) only the direct path is kept:
    a single tap at round(d/c * fs) with amplitude 1/(4 pi d). Otherwise the
    response covers 1.2 * t60 seconds of image-source reflections, with the
    wall coefficient calibrated so the synthesized field's Schroeder decay
    matches ``scene.t60`` (Sabine's formula gates feasibility and seeds the
    neighborhood; see :func:`_calibrate_beta`).
    """
    if not 0 <= source_index < len(scene.source_pos):
        raise ValueError(f"source_index {source_index} out of range")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    src = np.asarray(scene.source_pos[source_index], dtype=np.float64)
    mic = np.asarray(scene.mic_pos, dtype=np.float64)
    direct = float(np.linalg.norm(src - mic))
    if direct < 1e-3:
        raise InvalidSceneError("source coincides with the microphone")
    direct_tap = round(direct / SPEED_OF_SOUND * sample_rate)
    if not reflections or scene.t60 == 0:
        rir = np.zeros(direct_tap + 2 * SINC_HALF_WIDTH + 1)
        rir[direct_tap] = 1.0 / (4.0 * np.pi * direct)
        return AudioBuffer(rir, sample_rate)
    _reflection_coefficient(scene.room_dims, scene.t60)  # scene validity gate
    beta = _calibrate_beta(scene.room_dims, scene.t60)
    n_taps = max(
        int(math.ceil(1.2 * scene.t60 * sample_rate)),
        direct_tap + SINC_HALF_WIDTH + 1,
    )
    max_dist = (n_taps + SINC_HALF_WIDTH) * SPEED_OF_SOUND / sample_rate
    dists, amps = _image_sources(scene, source_index, max_dist, beta)
    delays = dists / SPEED_OF_SOUND * sample_rate
    rir = accumulate_taps(delays, amps, n_taps, SINC_HALF_WIDTH, SINC_CUTOFF_RATIO)
    # Same-sign specular arrivals pile up into a nonphysical low-frequency
    # drift; the customary 100 Hz high-pass removes it.
    sos = butter(2, HIGHPASS_HZ, btype="highpass", fs=sample_rate, output="sos")
    return AudioBuffer(sosfilt(sos, rir), sample_rate)


def direct_delay_samples(scene: SceneSpec, source_index: int, sample_rate: int) -> int:
    """Integer tap index of the direct path, round(d / c * fs)."""
    src = np.asarray(scene.source_pos[source_index])
    mic = np.asarray(scene.mic_pos)
    return round(float(np.linalg.norm(src - mic)) / SPEED_OF_SOUND * sample_rate)


def convolve(signal: AudioBuffer, rir: AudioBuffer) -> AudioBuffer:
    """Linear convolution truncated to the input length.

    Truncation keeps targets and mixtures sample-aligned; the cut tail is
    reverberation that would extend past the utterance end.
    """
    if signal.sample_rate != rir.sample_rate:
        raise ValueError(
            f"sample rate mismatch: {signal.sample_rate} vs {rir.sample_rate}"
        )
    out = fftconvolve(signal.samples.astype(np.float64), rir.samples.astype(np.float64))
    return AudioBuffer(out[: len(signal)], signal.sample_rate)


def estimate_t60(rir: AudioBuffer, fit_range: tuple[float, float] = (-5.0, -25.0)) -> float:
    """Reverberation time via Schroeder backward integration.

    Fits the energy-decay curve between ``fit_range`` dB (default -5..-25)
    and extrapolates the slope to -60 dB. Raises
    :class:`T60EstimationError` when the RIR has no usable decay region.
    """
    energy = rir.samples.astype(np.float64) ** 2
    total = energy.sum()
    if total <= 0:
        raise T60EstimationError("RIR has no energy")
    edc = np.cumsum(energy[::-1])[::-1] / total
    db = 10.0 * np.log10(np.maximum(edc, 1e-30))
    hi, lo = fit_range
    start = int(np.argmax(db <= hi))
    stop = int(np.argmax(db <= lo))
    if db[start] > hi or db[stop] > lo or stop - start < 8:
        raise T60EstimationError(
            f"decay range too short to fit {hi}..{lo} dB (start={start}, stop={stop})"
        )
    slope, _ = np.polyfit(np.arange(start, stop), db[start:stop], 1)
    if slope >= 0:
        raise T60EstimationError("energy-decay curve is not decreasing")
    return -60.0 / slope / rir.sample_rate
