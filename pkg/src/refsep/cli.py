"""Command-line front end.

Subcommands cover the full pipeline: ``synth`` builds mixture datasets from a
speech corpus, ``train`` fits the separator on a manifest, ``extract`` runs a
trained checkpoint on one mixture/reference pair, ``evaluate`` scores a system
over a manifest, and ``rir`` inspects a sampled room impulse response.

All tunables live in a flat dotted-key configuration (see ``--help`` for the
full list with defaults).  Values resolve in order: built-in defaults, then
``--config FILE`` (``key = value`` lines), then repeated ``--set KEY=VALUE``
overrides.  Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .audio import PIPELINE_RATE, AudioBuffer, read_wav, resample, write_wav
from .config import (
    describe_keys,
    resolve_config,
    scene_ranges_from,
    stft_config_from,
)
from .errors import ConfigError, RefsepError

logger = logging.getLogger(__name__)

# Mirrors metrics.SYSTEM_TAGS; duplicated here so building the parser (and
# running `synth`) does not import the torch-backed evaluation stack.
_SYSTEMS = ("proposed", "proposed-ls", "oracle", "mixture")


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, metavar="FILE",
                        help="configuration file of 'key = value' lines")
    parent.add_argument("--set", action="append", default=[], dest="overrides",
                        metavar="KEY=VALUE", help="override one configuration key "
                        "(repeatable; applied after --config)")
    parent.add_argument("-v", "--verbose", action="store_true",
                        help="log progress details to stderr")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refsep",
        description="Single-microphone desired-speaker extraction: synthesize "
                    "two-speaker mixtures, train the separator, run it, and "
                    "score the results.",
        epilog="configuration keys (defaults shown; set via --config file or "
               "--set KEY=VALUE):\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    common = _common_options()
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    synth = sub.add_parser(
        "synth", parents=[common],
        help="synthesize a mixture dataset and write its manifest",
        description="Draw two-speaker mixtures from a speech corpus and write "
                    "them as WAVs plus a JSONL manifest.  In noisy mode each "
                    "example is reverberated through a sampled room and mixed "
                    "with noise at a drawn SNR.")
    synth.add_argument("--corpus", type=Path, required=True,
                       help="speech corpus root (one subdirectory per speaker)")
    synth.add_argument("--out", type=Path, required=True,
                       help="manifest path to write (audio lands beside it)")
    synth.add_argument("--mode", choices=("clean", "noisy"), default="clean",
                       help="clean sums dry sources; noisy adds rooms and noise")
    synth.add_argument("--n", type=int, default=8, metavar="N",
                       help="number of examples to draw (default: %(default)s)")
    synth.add_argument("--seed", type=int, default=0,
                       help="rng seed pinning the whole dataset (default: %(default)s)")
    synth.add_argument("--noise-corpus", type=Path, metavar="DIR",
                       help="noise recordings root (required for --mode noisy)")
    synth.add_argument("--split", default="train",
                       help="split label recorded in the manifest (default: %(default)s)")
    synth.set_defaults(func=_cmd_synth)

    train = sub.add_parser(
        "train", parents=[common],
        help="train the separator on a synthesized manifest",
        description="Fit the separation model by sampling batches from a "
                    "manifest.  Checkpoints (last.ckpt, best.ckpt) and a "
                    "step-by-step train_log.jsonl go to --out.")
    train.add_argument("--manifest", type=Path, required=True,
                       help="training manifest (from `refsep synth`)")
    train.add_argument("--out", type=Path, required=True,
                       help="directory for checkpoints and the training log")
    train.add_argument("--valid-manifest", type=Path, metavar="PATH",
                       help="held-out manifest scored at every validation point")
    train.add_argument("--max-steps", type=int, metavar="N",
                       help="override train.max_steps for this run")
    train.add_argument("--seed", type=int,
                       help="override train.seed for this run")
    train.add_argument("--resume", action="store_true",
                       help="continue from --out/last.ckpt instead of starting fresh")
    train.set_defaults(func=_cmd_train)

    extract = sub.add_parser(
        "extract", parents=[common],
        help="extract the desired speaker from one mixture",
        description="Run a trained checkpoint on a mixture WAV guided by a "
                    "reference recording of the desired speaker.  The estimate "
                    "is written at the mixture's sample rate and exact length.")
    extract.add_argument("--checkpoint", type=Path, required=True,
                         help="trained model checkpoint")
    extract.add_argument("--mixture", type=Path, required=True,
                         help="mono mixture WAV")
    extract.add_argument("--reference", type=Path, required=True,
                         help="mono reference WAV of the desired speaker")
    extract.add_argument("--out", type=Path, required=True,
                         help="estimate WAV to write")
    extract.set_defaults(func=_cmd_extract)

    evaluate = sub.add_parser(
        "evaluate", parents=[common],
        help="score a separation system over a manifest",
        description="Evaluate one system on every example of a manifest (both "
                    "speakers per example) and print aggregate SI-SDR, "
                    "SI-SDRi, SDR, and SIR.")
    evaluate.add_argument("--manifest", type=Path, required=True,
                          help="evaluation manifest")
    evaluate.add_argument("--system", choices=_SYSTEMS, required=True,
                          help="system to score")
    evaluate.add_argument("--checkpoint", type=Path,
                          help="trained checkpoint (required for proposed systems)")
    evaluate.add_argument("--out", type=Path, metavar="PATH",
                          help="write the per-record JSONL report here")
    evaluate.add_argument("--dump-dir", type=Path, metavar="DIR",
                          help="also write every estimate as a WAV")
    evaluate.set_defaults(func=_cmd_evaluate)

    rir = sub.add_parser(
        "rir", parents=[common],
        help="sample a room and inspect its impulse response",
        description="Sample one scene from the configured ranges, synthesize "
                    "the image-method impulse response, and report its "
                    "estimated reverberation time and direct-path delay.")
    rir.add_argument("--seed", type=int, default=0,
                     help="scene sampling seed (default: %(default)s)")
    rir.add_argument("--t60", type=float, metavar="SECONDS",
                     help="pin the reverberation time instead of drawing it")
    rir.add_argument("--out", type=Path, metavar="WAV",
                     help="write the impulse response as a WAV")
    rir.set_defaults(func=_cmd_rir)

    return parser


def _require_dir(path: Path, what: str) -> None:
    if not path.is_dir():
        raise ConfigError(f"{what} directory not found: {path}")


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")


def _cmd_synth(args: argparse.Namespace, cfg: dict) -> int:
    from .corpus import scan_corpus
    from .mixing import draw_clean_example, make_noisy_example, write_manifest

    if args.n < 1:
        raise ConfigError(f"--n must be at least 1, got {args.n}")
    _require_dir(args.corpus, "corpus")
    index = scan_corpus(args.corpus)

    duration_range = (cfg["mix.duration_min"], cfg["mix.duration_max"])
    snr_range = (cfg["mix.snr_min"], cfg["mix.snr_max"])
    ranges = noise_index = None
    if args.mode == "noisy":
        if args.noise_corpus is None:
            raise ConfigError("--mode noisy requires --noise-corpus")
        _require_dir(args.noise_corpus, "noise corpus")
        noise_index = scan_corpus(args.noise_corpus)
        ranges = scene_ranges_from(cfg)

    rng = np.random.default_rng(args.seed)
    examples = []
    for i in range(args.n):
        duration = float(rng.uniform(*duration_range))
        example = draw_clean_example(rng, index, duration, duration_range)
        if args.mode == "noisy":
            example = make_noisy_example(rng, example, ranges, noise_index,
                                         snr_range, cfg["mix.target_kind"])
        examples.append(example)
        logger.info("drew example %d/%d (%.2f s)", i + 1, args.n, duration)

    header_ranges = None if ranges is None else dataclasses.asdict(ranges)
    write_manifest(examples, args.out, split=args.split, seed=args.seed,
                   ranges=header_ranges)
    print(f"wrote {len(examples)} {args.mode} example(s) to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace, cfg: dict) -> int:
    from .losses import LossWeights
    from .mixing import load_example, read_manifest
    from .model import build_model, make_model_config
    from .training import ManifestSampler, TrainConfig, Trainer

    _require_file(args.manifest, "manifest")
    manifest = read_manifest(args.manifest)
    stft_cfg = stft_config_from(cfg)
    max_steps = cfg["train.max_steps"] if args.max_steps is None else args.max_steps

    if args.resume:
        ckpt = args.out / "last.ckpt"
        _require_file(ckpt, "checkpoint to resume from")
        trainer = Trainer.resume(ckpt, stft_cfg, max_steps=max_steps,
                                 checkpoint_dir=args.out)
    else:
        beta = cfg["train.beta"]
        train_config = TrainConfig(
            learning_rate=cfg["train.lr"],
            batch_size=cfg["train.batch_size"],
            max_steps=max_steps,
            validate_every=cfg["train.validate_every"],
            checkpoint_dir=args.out,
            seed=cfg["train.seed"] if args.seed is None else args.seed,
            weights=LossWeights(beta, 1.0 - beta),
            duration_range=(cfg["mix.duration_min"], cfg["mix.duration_max"]),
            clip_grad_norm=cfg["train.clip_grad_norm"] or None,
        )
        model_config = make_model_config(
            feature_mode=cfg["model.feature_mode"],
            widths=cfg["model.widths"],
            share_encoder_weights=cfg["model.shared_encoder"],
        )
        model = build_model(model_config, seed=cfg["model.seed"])
        trainer = Trainer(model, train_config, stft_cfg)

    effective = trainer.config
    print(f"train.lr = {effective.learning_rate}")
    print(f"train.batch_size = {effective.batch_size}")
    print(f"train.beta = {effective.weights.beta_sisdr}")
    print(f"train.max_steps = {effective.max_steps}")
    print(f"train.seed = {effective.seed}")

    validation = None
    if args.valid_manifest is not None:
        _require_file(args.valid_manifest, "validation manifest")
        valid = read_manifest(args.valid_manifest)
        validation = [load_example(valid, i) for i in range(len(valid.records))]

    sampler = ManifestSampler(manifest, effective.duration_range)
    trainer.fit(sampler, validation)
    print(f"finished at step {trainer.step}; checkpoints in {args.out}")
    if trainer.best_validation is not None:
        print(f"best validation si-sdri: {trainer.best_validation:.2f} dB")
    return 0


def _cmd_extract(args: argparse.Namespace, cfg: dict) -> int:
    from .checkpoint import load_checkpoint
    from .inference import separate

    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.mixture, "mixture")
    _require_file(args.reference, "reference")
    model, _, _ = load_checkpoint(args.checkpoint)
    mixture = read_wav(args.mixture)
    reference = read_wav(args.reference)

    estimate = separate(model, mixture, reference, stft_config_from(cfg))
    if estimate.sample_rate != mixture.sample_rate:
        estimate = resample(estimate, mixture.sample_rate)
    # Rate round trips may drift by a sample; pin the output to the input
    # mixture's exact length.
    samples = estimate.samples
    if len(samples) > len(mixture):
        samples = samples[:len(mixture)]
    elif len(samples) < len(mixture):
        samples = np.pad(samples, (0, len(mixture) - len(samples)))
    write_wav(args.out, AudioBuffer(samples, mixture.sample_rate))
    print(f"wrote estimate to {args.out}")
    return 0


def _cmd_evaluate(args: argparse.Namespace, cfg: dict) -> int:
    from .checkpoint import load_checkpoint
    from .metrics import evaluate_system, write_report
    from .mixing import read_manifest

    _require_file(args.manifest, "manifest")
    model = None
    if args.system in ("proposed", "proposed-ls"):
        if args.checkpoint is None:
            raise ConfigError(f"--system {args.system} requires --checkpoint")
        _require_file(args.checkpoint, "checkpoint")
        model, _, _ = load_checkpoint(args.checkpoint)

    manifest = read_manifest(args.manifest)
    report = evaluate_system(args.system, manifest, model=model,
                             cfg=stft_config_from(cfg), dump_dir=args.dump_dir)
    if args.out is not None:
        write_report(report, args.out)
        print(f"wrote report to {args.out}")
    print(report.summary_text())
    return 0


def _cmd_rir(args: argparse.Namespace, cfg: dict) -> int:
    from .acoustics import (
        direct_delay_samples,
        estimate_t60,
        generate_rir,
        sample_scene,
    )

    ranges = scene_ranges_from(cfg)
    if args.t60 is not None:
        if args.t60 < 0:
            raise ConfigError(f"--t60 must be non-negative, got {args.t60}")
        ranges = dataclasses.replace(ranges, t60=(args.t60, args.t60))

    rng = np.random.default_rng(args.seed)
    scene = sample_scene(rng, ranges, n_sources=1)
    rir = generate_rir(scene, 0, PIPELINE_RATE)

    dims = scene.room_dims
    print(f"room: {dims[0]:.2f} x {dims[1]:.2f} x {dims[2]:.2f} m")
    print(f"requested t60: {scene.t60:.3f} s")
    if scene.t60 > 0:
        print(f"estimated t60: {estimate_t60(rir):.3f} s")
    delay = direct_delay_samples(scene, 0, PIPELINE_RATE)
    print(f"direct path: tap {delay} ({delay / PIPELINE_RATE * 1000:.2f} ms)")
    if args.out is not None:
        write_wav(args.out, rir)
        print(f"wrote impulse response to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed its message; --help exits 0, errors exit 2.
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args.config, args.overrides)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RefsepError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
