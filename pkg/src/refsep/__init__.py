"""Reference-conditioned single-channel speaker extraction.

The top-level namespace stays torch-free (audio, analysis, scenes, datasets);
the network, trainer, and metrics live in their own submodules so importing
the package does not pull in torch.
"""

from .acoustics import (
    SceneRanges,
    SceneSpec,
    convolve,
    direct_delay_samples,
    estimate_t60,
    generate_rir,
    sample_scene,
)
from .audio import AudioBuffer, PIPELINE_RATE, read_wav, resample, write_wav
from .config import default_config, parse_config_file, resolve_config
from .corpus import CorpusIndex, load_utterance, scan_corpus, split_speakers
from .errors import RefsepError
from .dsp import (
    ComplexSpectrogram,
    RiTensor,
    StftConfig,
    combine_mag_phase,
    istft,
    log_spectrum,
    pad_frames,
    ri_pack,
    ri_unpack,
    stft,
)
from .mixing import (
    DatasetManifest,
    MixtureExample,
    draw_clean_example,
    fit_reference,
    load_example,
    make_noisy_example,
    read_manifest,
    write_manifest,
)
from .synthsig import make_noise_corpus, make_synthetic_corpus

__version__ = "0.1.0"
