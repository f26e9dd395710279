"""Mixture synthesis: clean two-speaker sums and noisy/reverberant scenes.

Clean mode sums two dry utterances; the float32 addition order is fixed so
``mixture == target_1 + target_2`` holds bit-exactly.  Noisy mode convolves
both sources with RIRs from one shared scene, stores the reverberant images
as targets, reverberates each reference through its own independently
sampled scene, and adds noise scaled to a drawn SNR, where
``SNR = 10*log10(P_mixture / P_noise)`` with P_mixture the power of the
two-image sum.

Manifests are JSONL: one header line (split, seed, ranges) followed by one
record per example referencing WAV files by path relative to the manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .acoustics import SceneRanges, SceneSpec, convolve, generate_rir, sample_scene
from .audio import AudioBuffer, read_wav, write_wav
from .corpus import CorpusIndex, load_utterance
from .errors import CorpusError, ManifestError

_MANIFEST_VERSION = 1
_AUDIO_ROLES = ("mixture", "target_1", "target_2", "reference_1", "reference_2")
_MAX_NOISE_DRAWS = 20
_MAX_SPEAKER_DRAWS = 100


@dataclass(frozen=True)
class MixtureExample:
    """One synthesized example: mixture, per-speaker targets and references.

    ``scene`` and ``snr_db`` are None in clean mode, where the exact-sum
    invariant ``mixture == target_1 + target_2`` is enforced.  In noisy mode
    targets are reverberant images by default, so the residual
    ``mixture - target_1 - target_2`` is the scaled noise.
    """

    mixture: AudioBuffer
    target_1: AudioBuffer
    target_2: AudioBuffer
    reference_1: AudioBuffer
    reference_2: AudioBuffer
    speaker_ids: tuple[str, str]
    utterance_ids: tuple[str, str]
    reference_utterance_ids: tuple[str, str]
    scene: SceneSpec | None = None
    snr_db: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "speaker_ids", tuple(self.speaker_ids))
        object.__setattr__(self, "utterance_ids", tuple(self.utterance_ids))
        object.__setattr__(
            self, "reference_utterance_ids", tuple(self.reference_utterance_ids)
        )
        signals = self._signals()
        lengths = {len(sig) for sig in signals}
        rates = {sig.sample_rate for sig in signals}
        if len(lengths) != 1 or len(rates) != 1:
            raise ValueError(
                f"signals disagree: lengths {sorted(lengths)}, rates {sorted(rates)}"
            )
        for mixed, ref in zip(self.utterance_ids, self.reference_utterance_ids):
            if mixed == ref:
                raise ValueError(
                    f"reference reuses the mixed utterance {mixed!r}"
                )
        if self.scene is None and self.snr_db is None:
            expected = self.target_1.samples + self.target_2.samples
            if not np.array_equal(self.mixture.samples, expected):
                raise ValueError("clean mixture must equal target_1 + target_2")

    def _signals(self) -> tuple[AudioBuffer, ...]:
        return (self.mixture, self.target_1, self.target_2,
                self.reference_1, self.reference_2)

    @property
    def sample_rate(self) -> int:
        return self.mixture.sample_rate

    def __len__(self) -> int:
        return len(self.mixture)


def fit_reference(ref: AudioBuffer, target_len: int) -> AudioBuffer:
    """Tile-and-truncate ``ref`` to exactly ``target_len`` samples."""
    if len(ref) == 0:
        raise ValueError("reference signal is empty")
    if target_len < 1:
        raise ValueError("target_len must be at least 1")
    reps = math.ceil(target_len / len(ref))
    return AudioBuffer(np.tile(ref.samples, reps)[:target_len], ref.sample_rate)


def _random_crop(rng: np.random.Generator, audio: AudioBuffer, n: int) -> np.ndarray:
    """Random truncation to n samples, tiling circularly when too short."""
    samples = audio.samples
    offset = int(rng.integers(0, len(samples)))
    reps = math.ceil((offset + n) / len(samples))
    return np.tile(samples, reps)[offset: offset + n]


def draw_clean_example(rng: np.random.Generator, index: CorpusIndex,
                       batch_duration: float,
                       duration_range: tuple[float, float] = (2.0, 8.0),
                       ) -> MixtureExample:
    """Draw two distinct speakers and sum their truncated utterances.

    ``batch_duration`` is fixed by the caller (constant within a batch,
    varying between batches) and must lie inside ``duration_range``.  Speaker
    choice is uniform over the index; each reference is a different utterance
    of the same speaker, tiled to the mixture length.  The rng consumption
    order is fixed, so a seed pins the example.
    """
    if not duration_range[0] <= batch_duration <= duration_range[1]:
        raise ValueError(
            f"batch_duration {batch_duration} outside range {duration_range}"
        )
    n = round(batch_duration * index.sample_rate)
    ids = index.speaker_ids
    if len(ids) < 2:
        raise CorpusError("need at least 2 speakers to draw a mixture")

    for _ in range(_MAX_SPEAKER_DRAWS):
        pair = rng.choice(len(ids), size=2, replace=False)
        speakers = (ids[int(pair[0])], ids[int(pair[1])])
        if all(len(index.speakers[spk]) >= 2 for spk in speakers):
            break
    else:
        raise CorpusError("could not draw two speakers with >= 2 utterances")

    targets, references, utt_ids, ref_ids = [], [], [], []
    for spk in speakers:
        utts = index.speakers[spk]
        mix_at = int(rng.integers(len(utts)))
        others = [u for i, u in enumerate(utts) if i != mix_at]
        ref_at = int(rng.integers(len(others)))
        mixed = load_utterance(utts[mix_at], index.sample_rate)
        reference = load_utterance(others[ref_at], index.sample_rate)
        targets.append(AudioBuffer(_random_crop(rng, mixed, n), index.sample_rate))
        references.append(fit_reference(reference, n))
        utt_ids.append(_utterance_id(utts[mix_at]))
        ref_ids.append(_utterance_id(others[ref_at]))

    mixture = AudioBuffer(targets[0].samples + targets[1].samples, index.sample_rate)
    return MixtureExample(
        mixture=mixture,
        target_1=targets[0], target_2=targets[1],
        reference_1=references[0], reference_2=references[1],
        speaker_ids=(speakers[0], speakers[1]),
        utterance_ids=(utt_ids[0], utt_ids[1]),
        reference_utterance_ids=(ref_ids[0], ref_ids[1]),
    )


def _utterance_id(path: Path) -> str:
    return f"{path.parent.name}/{path.stem}"


def _power(samples: np.ndarray) -> float:
    return float(np.mean(np.square(samples, dtype=np.float64)))


def make_noisy_example(rng: np.random.Generator, clean_parts: MixtureExample,
                       scene_ranges: SceneRanges | None,
                       noise_index: CorpusIndex,
                       snr_range: tuple[float, float] = (10.0, 25.0),
                       target_kind: str = "image") -> MixtureExample:
    """Reverberate a clean example's parts and add noise at a drawn SNR.

    Both sources share one sampled scene; each reference gets its own
    independently sampled single-source scene (references are themselves
    reverberant recordings).  ``target_kind`` selects what the targets are:
    the reverberant images (default; extraction, not dereverberation, is the
    task) or the dry sources (``"dry"``).
    """
    if clean_parts.scene is not None or clean_parts.snr_db is not None:
        raise ValueError("make_noisy_example expects clean (dry) parts")
    if target_kind not in ("image", "dry"):
        raise ValueError(f"unknown target_kind {target_kind!r}")
    fs = clean_parts.sample_rate
    n = len(clean_parts)

    scene = sample_scene(rng, scene_ranges, n_sources=2)
    images = []
    for source_index, dry in enumerate((clean_parts.target_1, clean_parts.target_2)):
        rir = generate_rir(scene, source_index, fs)
        images.append(convolve(dry, rir).samples.astype(np.float32))

    reverberant_refs = []
    for ref in (clean_parts.reference_1, clean_parts.reference_2):
        ref_scene = sample_scene(rng, scene_ranges, n_sources=1)
        rir = generate_rir(ref_scene, 0, fs)
        reverberant_refs.append(
            AudioBuffer(convolve(ref, rir).samples.astype(np.float32), fs)
        )

    noise = _draw_noise(rng, noise_index, n)
    snr_db = float(rng.uniform(*snr_range))
    speech = images[0] + images[1]
    p_speech = _power(speech)
    if p_speech == 0:
        raise ValueError("source images are silent; cannot set an SNR")
    gain = math.sqrt(p_speech / (10.0 ** (snr_db / 10.0) * _power(noise)))
    scaled_noise = (gain * noise).astype(np.float32)
    mixture = AudioBuffer(speech + scaled_noise, fs)

    if target_kind == "image":
        targets = (AudioBuffer(images[0], fs), AudioBuffer(images[1], fs))
    else:
        targets = (clean_parts.target_1, clean_parts.target_2)
    return MixtureExample(
        mixture=mixture,
        target_1=targets[0], target_2=targets[1],
        reference_1=reverberant_refs[0], reference_2=reverberant_refs[1],
        speaker_ids=clean_parts.speaker_ids,
        utterance_ids=clean_parts.utterance_ids,
        reference_utterance_ids=clean_parts.reference_utterance_ids,
        scene=scene,
        snr_db=snr_db,
    )


def _draw_noise(rng: np.random.Generator, noise_index: CorpusIndex,
                n: int) -> np.ndarray:
    """Draw a nonsilent noise segment of length n; re-draw on silence."""
    clips = [path for spk in noise_index.speaker_ids
             for path in noise_index.speakers[spk]]
    for _ in range(_MAX_NOISE_DRAWS):
        clip = clips[int(rng.integers(len(clips)))]
        segment = _random_crop(
            rng, load_utterance(clip, noise_index.sample_rate), n
        )
        if _power(segment) > 0:
            return segment
    raise CorpusError(
        f"drew {_MAX_NOISE_DRAWS} silent noise segments; corpus unusable"
    )


@dataclass
class DatasetManifest:
    """A split's worth of example records plus how they were generated."""

    split: str
    seed: int | None
    ranges: dict | None
    records: list[dict]
    root: Path | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)


def write_manifest(examples: Sequence[MixtureExample], path: Path | str,
                   split: str = "train", seed: int | None = None,
                   ranges: dict | None = None) -> DatasetManifest:
    """Write examples as WAVs plus a JSONL manifest describing them.

    Audio goes to ``<stem>_audio/`` beside the manifest, named by record
    index and role, and is stored as float32 so reads are bit-exact.  All
    paths in records are relative to the manifest's directory.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    audio_dir = path.parent / f"{path.stem}_audio"
    audio_dir.mkdir(exist_ok=True)

    records = []
    for i, example in enumerate(examples):
        record: dict = {}
        for role in _AUDIO_ROLES:
            wav_path = audio_dir / f"{i:06d}_{role}.wav"
            write_wav(wav_path, getattr(example, role))
            record[role] = str(wav_path.relative_to(path.parent))
        record["speaker_ids"] = list(example.speaker_ids)
        record["utterance_ids"] = list(example.utterance_ids)
        record["reference_utterance_ids"] = list(example.reference_utterance_ids)
        record["scene"] = None if example.scene is None else example.scene.to_dict()
        record["snr_db"] = example.snr_db
        record["sample_rate"] = example.sample_rate
        records.append(record)

    header = {
        "version": _MANIFEST_VERSION,
        "split": split,
        "seed": seed,
        "ranges": ranges,
        "count": len(records),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return DatasetManifest(split=split, seed=seed, ranges=ranges,
                           records=records, root=path.parent)


def read_manifest(path: Path | str) -> DatasetManifest:
    """Parse a manifest and verify every referenced WAV exists."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestError(f"manifest is empty (no header line): {path}")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:] if line]
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    if header.get("version") != _MANIFEST_VERSION:
        raise ManifestError(
            f"unsupported manifest version {header.get('version')!r} in {path}"
        )
    if header.get("count") != len(records):
        raise ManifestError(
            f"manifest {path} declares {header.get('count')} records, "
            f"found {len(records)}"
        )
    for record in records:
        for role in _AUDIO_ROLES:
            wav_path = path.parent / record[role]
            if not wav_path.is_file():
                raise ManifestError(f"manifest references missing file: {wav_path}")
    return DatasetManifest(split=header["split"], seed=header["seed"],
                           ranges=header["ranges"], records=records,
                           root=path.parent)


def load_example(manifest: DatasetManifest, index: int) -> MixtureExample:
    """Materialize one manifest record back into a MixtureExample."""
    if manifest.root is None:
        raise ManifestError("manifest has no root directory to resolve paths")
    record = manifest.records[index]
    buffers = {role: read_wav(manifest.root / record[role]) for role in _AUDIO_ROLES}
    scene = None if record["scene"] is None else SceneSpec.from_dict(record["scene"])
    return MixtureExample(
        mixture=buffers["mixture"],
        target_1=buffers["target_1"], target_2=buffers["target_2"],
        reference_1=buffers["reference_1"], reference_2=buffers["reference_2"],
        speaker_ids=tuple(record["speaker_ids"]),
        utterance_ids=tuple(record["utterance_ids"]),
        reference_utterance_ids=tuple(record["reference_utterance_ids"]),
        scene=scene,
        snr_db=record["snr_db"],
    )
