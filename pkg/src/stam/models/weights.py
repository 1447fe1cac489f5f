"""Weight files.

Layout::

    8 bytes   magic  b"STAMWTS\\0"
    4 bytes   format version, little-endian uint32
    8 bytes   header length in bytes, little-endian uint64
    header    UTF-8 JSON: {"arch", "config", "manifest": [{"name", "shape"}, ...]}
    payload   little-endian float64 values of every tensor, in manifest order

Manifest order is the model's parameter order (layer registration order,
then ``W`` before ``b``), so it is stable for a given architecture.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import (
    ConfigError,
    ConfigMismatchError,
    CorruptFileError,
    VersionMismatchError,
    WeightFileError,
)
from .archs import build_model
from .base import Forecaster
from .config import ModelConfig

MAGIC = b"STAMWTS\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def save_weights(model: Forecaster, path) -> None:
    manifest = [{"name": n, "shape": list(t.shape)} for n, t in model.parameters()]
    header = json.dumps(
        {"arch": model.arch, "config": model.config.to_dict(), "manifest": manifest},
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(t.data.astype("<f8").tobytes() for _, t in model.parameters())
    Path(path).write_bytes(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + payload)


def read_header(path) -> dict:
    header, _ = _read(Path(path))
    return header


def _read(path: Path) -> tuple[dict, bytes]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise WeightFileError(f"{path}: cannot read weight file ({exc.strerror})") from None
    if len(raw) < _PREFIX.size:
        raise CorruptFileError(f"{path}: file too short for a weight-file header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptFileError(f"{path}: not a weight file (bad magic)")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise CorruptFileError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable header ({exc})") from None
    return header, raw[start + hlen:]


def load_weights(path, arch: str | None = None, config: ModelConfig | None = None) -> Forecaster:
    """Rebuild a model from a weight file.

    ``arch`` / ``config``, when given, must match what the file declares.
    """
    path = Path(path)
    header, payload = _read(path)
    try:
        file_config = ModelConfig.from_dict(header["config"])
        manifest = header["manifest"]
    except (KeyError, TypeError, ConfigError) as exc:
        raise CorruptFileError(f"{path}: malformed header ({exc})") from None
    if arch is not None and header.get("arch") != arch:
        raise ConfigMismatchError(f"{path}: file holds a {header.get('arch')!r} model, expected {arch!r}")
    if config is not None and config != file_config:
        raise ConfigMismatchError(f"{path}: file config {file_config} differs from {config}")

    model = build_model(file_config, init="zeros")
    params = list(model.parameters())
    expected = [{"name": n, "shape": list(t.shape)} for n, t in params]
    if manifest != expected:
        raise CorruptFileError(f"{path}: layer manifest does not match the {file_config.arch} layout")
    need = sum(t.size for _, t in params) * 8
    if len(payload) != need:
        raise CorruptFileError(f"{path}: payload has {len(payload)} bytes, expected {need}")
    values = np.frombuffer(payload, dtype="<f8")
    offset = 0
    for _, t in params:
        t.data[...] = values[offset:offset + t.size].reshape(t.shape)
        offset += t.size
    return model
