"""Separation metrics and test-set evaluation.

SI-SDR here mirrors the training objective exactly (same projection, eps,
and cap) but on numpy vectors.  SDR/SIR come from a projection
decomposition of the estimate onto the spans of target and interference
with time-invariant scalar gains — a deliberate simplification of the
filtered projections in full BSS-eval, so absolute values are comparable
only within this codebase.

:func:`evaluate_system` scores one of four systems over a manifest; every
example is scored twice, once per speaker with that speaker's reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav
from .dsp import StftConfig, combine_mag_phase, istft, stft
from .errors import DecompositionError
from .inference import separate
from .losses import SI_SDR_CAP_DB, SI_SDR_EPS
from .mixing import DatasetManifest, load_example
from .model import SiameseUNet

__all__ = [
    "Decomposition",
    "EvalReport",
    "SYSTEM_TAGS",
    "decompose",
    "evaluate_system",
    "oracle_mask_baseline",
    "sdr",
    "si_sdr",
    "si_sdri",
    "sir",
    "write_report",
]

SYSTEM_TAGS = ("proposed", "proposed-ls", "oracle", "mixture")

_COLLINEAR_TOL = 1e-12


def _vector(x, name: str) -> np.ndarray:
    data = x.samples if isinstance(x, AudioBuffer) else x
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {data.shape}")
    return data


def _guarded_db(num: float, den: float, eps: float) -> float:
    if num == 0.0:
        return -SI_SDR_CAP_DB
    if den <= eps * num:
        return SI_SDR_CAP_DB
    return min(10.0 * np.log10(num / (den + eps) + eps), SI_SDR_CAP_DB)


def si_sdr(target, estimate, eps: float = SI_SDR_EPS) -> float:
    """Scale-invariant SDR in dB; numpy twin of the training objective."""
    t = _vector(target, "target")
    e = _vector(estimate, "estimate")
    if t.shape != e.shape:
        raise ValueError(f"length mismatch: {t.size} vs {e.size}")
    t_energy = float(t @ t)
    if t_energy == 0.0:
        raise ValueError("target is all-zero; the projection is undefined")
    projected = (float(e @ t) / t_energy) * t
    num = float(projected @ projected)
    den = float((projected - e) @ (projected - e))
    if den <= eps * num:
        return SI_SDR_CAP_DB
    return min(10.0 * np.log10(num / (den + eps) + eps), SI_SDR_CAP_DB)


def si_sdri(target, estimate, mixture) -> float:
    """SI-SDR improvement of the estimate over the unprocessed mixture."""
    return si_sdr(target, estimate) - si_sdr(target, mixture)


@dataclass(frozen=True)
class Decomposition:
    """Orthogonal split of an estimate: wanted part and two error parts."""

    s_target: np.ndarray
    e_interf: np.ndarray
    e_artif: np.ndarray


def decompose(estimate, target, interference) -> Decomposition:
    """Project an estimate onto the spans of target and interference.

    ``s_target`` is the least-squares projection onto span{target};
    ``e_interf`` extends it to span{target, interference}; ``e_artif`` is
    what remains.  The three parts sum to the estimate and are mutually
    orthogonal.  Raises :class:`DecompositionError` when the sources are
    collinear (or either is silent), which leaves the split undefined.
    """
    e = _vector(estimate, "estimate")
    t = _vector(target, "target")
    i = _vector(interference, "interference")
    if not (e.shape == t.shape == i.shape):
        raise ValueError(
            f"length mismatch: estimate {e.size}, target {t.size}, "
            f"interference {i.size}"
        )
    tt, ii, ti = float(t @ t), float(i @ i), float(t @ i)
    gram_det = tt * ii - ti * ti
    if gram_det <= _COLLINEAR_TOL * tt * ii or tt == 0.0 or ii == 0.0:
        raise DecompositionError(
            "target and interference are collinear (or silent); "
            "projection split is undefined"
        )
    s_target = (float(e @ t) / tt) * t
    coeffs = np.linalg.solve(np.array([[tt, ti], [ti, ii]]),
                             np.array([float(e @ t), float(e @ i)]))
    span_projection = coeffs[0] * t + coeffs[1] * i
    return Decomposition(s_target=s_target,
                         e_interf=span_projection - s_target,
                         e_artif=e - span_projection)


def sdr(decomposition: Decomposition, eps: float = SI_SDR_EPS) -> float:
    """Signal-to-distortion ratio: wanted energy over total error energy.

    The error energy is the sum of the two orthogonal components' energies,
    which keeps sdr <= sir exact at floating-point level.
    """
    num = float(decomposition.s_target @ decomposition.s_target)
    den = float(decomposition.e_interf @ decomposition.e_interf) \
        + float(decomposition.e_artif @ decomposition.e_artif)
    return _guarded_db(num, den, eps)


def sir(decomposition: Decomposition, eps: float = SI_SDR_EPS) -> float:
    """Signal-to-interference ratio: wanted energy over interference leak."""
    num = float(decomposition.s_target @ decomposition.s_target)
    den = float(decomposition.e_interf @ decomposition.e_interf)
    return _guarded_db(num, den, eps)


def oracle_mask_baseline(mixture: AudioBuffer, target: AudioBuffer,
                         cfg: StftConfig | None = None) -> AudioBuffer:
    """Reconstruct the target's magnitude with the mixture's phase.

    The upper bound for any magnitude-masking method: exact target
    log-spectrum, phase untouched from the mixture.
    """
    cfg = cfg or StftConfig()
    target_spec = stft(target, cfg)
    mixture_spec = stft(mixture, cfg)
    combined = combine_mag_phase(np.abs(target_spec.data), mixture_spec)
    return istft(combined, length=len(target), sample_rate=target.sample_rate)


@dataclass(frozen=True)
class EvalReport:
    """Per-speaker metric records for one system over one manifest."""

    system: str
    records: list[dict]

    def aggregate(self) -> dict[str, dict[str, float]]:
        """Mean and median of each metric over all records."""
        out = {}
        for metric in ("si_sdr", "si_sdri", "sdr", "sir"):
            values = np.array([r[metric] for r in self.records])
            out[metric] = {"mean": float(values.mean()),
                           "median": float(np.median(values))}
        return out

    def summary_text(self) -> str:
        lines = [f"system={self.system}  records={len(self.records)}",
                 f"{'metric':<10}{'mean':>10}{'median':>10}"]
        for metric, stats in self.aggregate().items():
            lines.append(f"{metric:<10}{stats['mean']:>10.2f}"
                         f"{stats['median']:>10.2f}")
        return "\n".join(lines)


def write_report(report: EvalReport, path: Path | str) -> None:
    """One header line (system, count, aggregates) then one line per record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"system": report.system, "count": len(report.records),
              "aggregate": report.aggregate()}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in report.records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _scene_summary(example) -> dict | None:
    if example.scene is None:
        return None
    return {"t60": example.scene.t60,
            "room_dims": list(example.scene.room_dims)}


def evaluate_system(system: str, manifest: DatasetManifest,
                    model: SiameseUNet | None = None,
                    cfg: StftConfig | None = None,
                    dump_dir: Path | str | None = None) -> EvalReport:
    """Score a system over every (example, speaker) pair of a manifest.

    ``proposed`` / ``proposed-ls`` require a model of the matching feature
    mode; ``oracle`` and ``mixture`` need none.  With ``dump_dir``, each
    estimate is written as a float32 WAV.
    """
    if system not in SYSTEM_TAGS:
        raise ValueError(f"unknown system {system!r}; expected one of {SYSTEM_TAGS}")
    if system in ("proposed", "proposed-ls"):
        if model is None:
            raise ValueError(f"system {system!r} requires a trained model")
        wanted = "ri" if system == "proposed" else "ls"
        if model.config.feature_mode != wanted:
            raise ValueError(
                f"system {system!r} needs a {wanted!r}-feature model, "
                f"got {model.config.feature_mode!r}"
            )
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)

    records = []
    for index in range(len(manifest.records)):
        example = load_example(manifest, index)
        roles = ((example.target_1, example.reference_1, example.target_2),
                 (example.target_2, example.reference_2, example.target_1))
        for speaker, (target, reference, interference) in enumerate(roles):
            if system == "mixture":
                estimate = example.mixture
            elif system == "oracle":
                estimate = oracle_mask_baseline(example.mixture, target, cfg)
            else:
                estimate = separate(model, example.mixture, reference, cfg)
            split = decompose(estimate, target, interference)
            records.append({
                "example": index,
                "speaker": example.speaker_ids[speaker],
                "si_sdr": si_sdr(target, estimate),
                "si_sdri": si_sdri(target, estimate, example.mixture),
                "sdr": sdr(split),
                "sir": sir(split),
                "snr_db": example.snr_db,
                "scene": _scene_summary(example),
            })
            if dump_dir is not None:
                write_wav(dump_dir / f"{index:06d}_speaker{speaker + 1}.wav",
                          estimate)
    return EvalReport(system=system, records=records)
