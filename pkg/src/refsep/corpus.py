"""Corpus indexing: map WAV trees to speakers and split them for experiments.

The layout rule assigns a speaker id to each file from its path relative to
the corpus root.  The default rule takes the first directory component, which
covers both flat ``speaker/utterance.wav`` trees and nested layouts such as
``speaker/chapter/utterance.wav``; files sitting directly in the root are
grouped under the pseudo-speaker ``"."``.  A callable ``relative_path ->
speaker_id`` may be supplied instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .audio import PIPELINE_RATE, AudioBuffer, read_wav, resample
from .errors import EmptyCorpusError

logger = logging.getLogger(__name__)

LayoutRule = Callable[[Path], str]


def top_level_speaker(relative_path: Path) -> str:
    """Default layout rule: first path component under the corpus root."""
    parts = relative_path.parts
    return parts[0] if len(parts) > 1 else "."


@dataclass(frozen=True)
class CorpusIndex:
    """Speaker id -> utterance paths, plus the delivery sample rate.

    Utterances are delivered (via :func:`load_utterance`) resampled to
    ``sample_rate`` regardless of the rate on disk.  Every speaker carries at
    least two utterances so one can serve as a reference while another is
    mixed.
    """

    speakers: Mapping[str, tuple[Path, ...]]
    sample_rate: int

    def __post_init__(self):
        if not self.speakers:
            raise EmptyCorpusError("corpus index has no speakers")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        for spk, utts in self.speakers.items():
            if len(utts) < 2:
                raise ValueError(
                    f"speaker {spk!r} has {len(utts)} utterance(s); need >= 2"
                )

    @property
    def speaker_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.speakers))

    @property
    def n_utterances(self) -> int:
        return sum(len(utts) for utts in self.speakers.values())


def _decodable(path: Path) -> bool:
    try:
        read_wav(path)
    except (ValueError, OSError):
        return False
    return True


def scan_corpus(root_dir: Path | str, layout_rule: LayoutRule = top_level_speaker,
                sample_rate: int = PIPELINE_RATE) -> CorpusIndex:
    """Index every decodable mono WAV under ``root_dir``.

    Files that fail to decode are skipped, as are speakers left with fewer
    than two utterances; both are reported through a warning with counts.
    An index with no surviving speakers raises :class:`EmptyCorpusError`.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise ValueError(f"corpus root is not a directory: {root}")
    by_speaker: dict[str, list[Path]] = {}
    n_skipped = 0
    for path in sorted(root.rglob("*.wav")):
        if not _decodable(path):
            n_skipped += 1
            continue
        speaker = layout_rule(path.relative_to(root))
        by_speaker.setdefault(speaker, []).append(path)
    thin = [spk for spk, utts in by_speaker.items() if len(utts) < 2]
    for spk in thin:
        del by_speaker[spk]
    if n_skipped or thin:
        logger.warning(
            "corpus scan of %s: skipped %d undecodable file(s), dropped %d "
            "speaker(s) with fewer than 2 utterances", root, n_skipped, len(thin)
        )
    if not by_speaker:
        raise EmptyCorpusError(f"no usable speakers under {root}")
    speakers = {spk: tuple(utts) for spk, utts in sorted(by_speaker.items())}
    return CorpusIndex(speakers=speakers, sample_rate=sample_rate)


def load_utterance(path: Path | str, sample_rate: int) -> AudioBuffer:
    """Read one utterance and deliver it at ``sample_rate`` as float32."""
    raw = read_wav(path)
    audio = resample(raw, sample_rate)
    return AudioBuffer(audio.samples.astype(np.float32), sample_rate)


def split_speakers(index: CorpusIndex,
                   fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                   seed: int = 0) -> tuple[CorpusIndex, CorpusIndex, CorpusIndex]:
    """Speaker-disjoint train/valid/test split.

    Valid and test sizes round down (but never below one speaker); train takes
    the remainder, so rounding favors train.  The shuffle is seeded, making
    the split a pure function of (index, fractions, seed).
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-6:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    ids = index.speaker_ids
    n = len(ids)
    if n < 3:
        raise ValueError(f"need at least 3 speakers to split, got {n}")
    n_valid = max(1, int(n * fractions[1]))
    n_test = max(1, int(n * fractions[2]))
    if n_valid + n_test >= n:
        n_valid = n_test = 1
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    groups = (
        shuffled[: n - n_valid - n_test],
        shuffled[n - n_valid - n_test: n - n_test],
        shuffled[n - n_test:],
    )
    return tuple(
        CorpusIndex(
            speakers={spk: index.speakers[spk] for spk in sorted(group)},
            sample_rate=index.sample_rate,
        )
        for group in groups
    )
