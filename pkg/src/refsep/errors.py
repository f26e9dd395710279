"""Exception types shared across the package."""


class RefsepError(Exception):
    """Base class for all refsep-specific failures."""


class ConfigError(RefsepError):
    """Bad configuration file, unknown key, or unusable value."""


class SceneSamplingError(RefsepError):
    """Scene geometry could not be satisfied within the retry budget."""


class InvalidSceneError(RefsepError):
    """Scene parameters are physically unusable (e.g. Sabine absorption > 1)."""


class T60EstimationError(RefsepError):
    """The impulse response has no usable decay region."""


class EmptyCorpusError(RefsepError):
    """No decodable mono WAV files were found under the corpus root."""


class CorpusError(RefsepError):
    """Corpus layout or content violates an indexing requirement."""


class ManifestError(RefsepError):
    """A dataset manifest is unreadable or references missing audio."""


class CheckpointError(RefsepError):
    """A checkpoint file is corrupt, truncated, or of an unsupported version."""


class TrainingDivergedError(RefsepError):
    """Training produced non-finite losses repeatedly and was aborted."""


class DecompositionError(RefsepError):
    """Projection-based decomposition is degenerate (collinear sources)."""
