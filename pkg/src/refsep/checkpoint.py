"""Self-describing binary checkpoints.

Layout (all integers little-endian):

    magic     8 bytes  b"RSEPCKPT"
    version   uint32
    config    uint64 length + UTF-8 JSON (ModelConfig echo)
    meta      uint64 length + UTF-8 JSON (free-form: step, rng state, ...)
    count     uint64 number of tensors
    per tensor:
        name  uint64 length + UTF-8
        dtype uint64 length + UTF-8 numpy dtype string ("<f4", "<i8", ...)
        ndim  uint64, then ndim x uint64 dims
        data  raw buffer, C order

The tensor table carries the model state dict (weights, batch-norm running
statistics and counters) plus any extra arrays the caller wants alongside —
the trainer stores optimizer moments and RNG state this way.  The config echo
makes a checkpoint loadable without outside knowledge.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import ModelConfig, SiameseUNet

MAGIC = b"RSEPCKPT"
FORMAT_VERSION = 1

_ALLOWED_DTYPES = {"<f4", "<f8", "<i4", "<i8", "|u1"}


def _write_block(fh, payload: bytes) -> None:
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(
            f"truncated checkpoint: wanted {n} bytes for {what}, "
            f"got {len(data)}"
        )
    return data


def _read_block(fh, what: str) -> bytes:
    (length,) = struct.unpack("<Q", _read_exact(fh, 8, f"{what} length"))
    return _read_exact(fh, length, what)


def _write_tensor(fh, name: str, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    dtype = array.dtype.newbyteorder("<").str if array.dtype.byteorder != "|" \
        else array.dtype.str
    if dtype not in _ALLOWED_DTYPES:
        raise CheckpointError(f"refusing to store dtype {dtype!r} for {name!r}")
    _write_block(fh, name.encode("utf-8"))
    _write_block(fh, dtype.encode("utf-8"))
    fh.write(struct.pack("<Q", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    fh.write(array.astype(dtype, copy=False).tobytes(order="C"))


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    name = _read_block(fh, "tensor name").decode("utf-8")
    dtype = _read_block(fh, "tensor dtype").decode("utf-8")
    if dtype not in _ALLOWED_DTYPES:
        raise CheckpointError(f"unknown tensor dtype {dtype!r} for {name!r}")
    (ndim,) = struct.unpack("<Q", _read_exact(fh, 8, "tensor rank"))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "tensor shape"))
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    raw = _read_exact(fh, count * np.dtype(dtype).itemsize, f"tensor {name!r}")
    return name, np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_checkpoint(path: Path | str, model: SiameseUNet,
                    meta: dict | None = None,
                    extras: dict[str, np.ndarray] | None = None) -> None:
    """Write model weights (plus optional metadata and arrays) to ``path``."""
    tensors: list[tuple[str, np.ndarray]] = [
        (f"model.{name}", tensor.detach().cpu().numpy())
        for name, tensor in model.state_dict().items()
    ]
    for name, array in (extras or {}).items():
        tensors.append((f"extra.{name}", np.asarray(array)))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        _write_block(fh, json.dumps(model.config.to_dict(),
                                    sort_keys=True).encode("utf-8"))
        _write_block(fh, json.dumps(meta or {}, sort_keys=True).encode("utf-8"))
        fh.write(struct.pack("<Q", len(tensors)))
        for name, array in tensors:
            _write_tensor(fh, name, array)


def load_checkpoint(path: Path | str,
                    ) -> tuple[SiameseUNet, dict, dict[str, np.ndarray]]:
    """Rebuild the model from ``path``; returns (model, meta, extras).

    The model is reconstructed from the config echo and populated with the
    stored tensors, so a save/load round trip is bit-exact.  Raises
    :class:`CheckpointError` on wrong magic, unsupported version, truncation,
    or a tensor table that does not match the echoed config.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(MAGIC), "magic")
        if magic != MAGIC:
            raise CheckpointError(
                f"not a checkpoint file (magic {magic!r}): {path}"
            )
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version} "
                f"(this build reads {FORMAT_VERSION}): {path}"
            )
        try:
            config = ModelConfig.from_dict(json.loads(_read_block(fh, "config")))
            meta = json.loads(_read_block(fh, "meta"))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "tensor count"))
        state: dict[str, torch.Tensor] = {}
        extras: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, array = _read_tensor(fh)
            if name.startswith("model."):
                state[name[len("model."):]] = torch.from_numpy(array)
            elif name.startswith("extra."):
                extras[name[len("extra."):]] = array
            else:
                raise CheckpointError(f"unrecognized tensor entry {name!r}")

    model = SiameseUNet(config)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(
            f"checkpoint tensors do not match the echoed config: {exc}"
        ) from exc
    return model, meta, extras
