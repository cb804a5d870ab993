"""Binary checkpoints.

Layout::

    b"MAE1" | uint32 LE header length | header (UTF-8 JSON) | payload

The header is JSON with sorted keys and compact separators, so serializing
the same metadata always yields the same bytes. The payload is the model
vector (decoder parameters, then encoder0 parameters, each in W1, b1, W2, b2
order) as little-endian float64; its length is declared in the header.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .autoencoder import DIRECT, GAUSS_NEWTON, AutoencoderModel, load_model_vector, model_vector
from .errors import CheckpointError
from .gauss_newton import GnConfig
from .models import param_count, zero_mlp

MAGIC = b"MAE1"
FORMAT_VERSION = 1
PARAM_ORDER = "decoder.W1,decoder.b1,decoder.W2,decoder.b2,encoder0.W1,encoder0.b1,encoder0.W2,encoder0.b2"
_LEN = struct.Struct("<I")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_digest(config: dict | None) -> str | None:
    if config is None:
        return None
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


@dataclass(frozen=True)
class Checkpoint:
    header: dict
    payload: bytes

    def to_bytes(self) -> bytes:
        header = canonical_json(self.header).encode("utf-8")
        return MAGIC + _LEN.pack(len(header)) + header + self.payload

    @property
    def mode(self) -> str:
        return self.header["mode"]


def _validate_header(h: dict, payload_len: int) -> None:
    required = {"format_version", "mode", "n", "h", "r", "gn", "payload_floats", "param_order"}
    missing = required - set(h)
    if missing:
        raise CheckpointError(f"checkpoint header is missing {sorted(missing)}")
    if h["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {h['format_version']!r}, "
                              f"expected {FORMAT_VERSION}")
    if h["mode"] not in (DIRECT, GAUSS_NEWTON):
        raise CheckpointError(f"unknown model mode {h['mode']!r} in checkpoint")
    if (h["mode"] == GAUSS_NEWTON) != (h["gn"] is not None):
        raise CheckpointError("checkpoint gn config must be present exactly for gauss_newton mode")
    if h["param_order"] != PARAM_ORDER:
        raise CheckpointError(f"unknown parameter order {h['param_order']!r}")
    n, hid, r = h["n"], h["h"], h["r"]
    if not all(isinstance(v, int) and v >= 1 for v in (n, hid, r)):
        raise CheckpointError(f"bad dimensions n={n!r}, h={hid!r}, r={r!r}")
    expected = param_count(r, hid, n) + param_count(n, hid, r)
    if h["payload_floats"] != expected:
        raise CheckpointError(f"header declares {h['payload_floats']} floats but dims imply {expected}")
    if payload_len != 8 * expected:
        raise CheckpointError(f"payload has {payload_len} bytes, header declares {8 * expected}")


def parse_checkpoint(raw: bytes) -> Checkpoint:
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise CheckpointError("truncated checkpoint: missing header length")
    (hlen,) = _LEN.unpack_from(raw, 4)
    if len(raw) < 8 + hlen:
        raise CheckpointError(f"truncated checkpoint header: need {hlen} bytes, found {len(raw) - 8}")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    if not isinstance(header, dict):
        raise CheckpointError("checkpoint header must be a JSON object")
    payload = raw[8 + hlen:]
    _validate_header(header, len(payload))
    return Checkpoint(header, payload)


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    data = ckpt.to_bytes()
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def to_checkpoint(model: AutoencoderModel, train_config: dict | None = None, seed: int | None = None,
                  extra: dict | None = None) -> Checkpoint:
    if model.encoder0.hidden != model.decoder.hidden:
        raise CheckpointError("checkpoints need equal decoder and encoder hidden widths")
    theta = model_vector(model)
    header = {
        "format_version": FORMAT_VERSION,
        "mode": model.mode,
        "n": model.n,
        "h": model.hidden,
        "r": model.r,
        "gn": None if model.gn is None else model.gn.to_dict(),
        "train_config_digest": config_digest(train_config),
        "train_mode": None if train_config is None else train_config.get("mode"),
        "seed": seed,
        "payload_floats": int(theta.size),
        "param_order": PARAM_ORDER,
    }
    if extra:
        header.update(extra)
    return Checkpoint(header, theta.astype("<f8").tobytes())


def from_checkpoint(ckpt: Checkpoint) -> AutoencoderModel:
    h = ckpt.header
    n, hid, r = h["n"], h["h"], h["r"]
    theta = np.frombuffer(ckpt.payload, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(theta)):
        raise CheckpointError("checkpoint payload contains non-finite values")
    try:
        gn = None if h["gn"] is None else GnConfig.from_dict(h["gn"])
    except (ValueError, TypeError, AttributeError) as exc:
        raise CheckpointError(f"bad gn config in checkpoint: {exc}") from None
    template = AutoencoderModel(zero_mlp(r, hid, n), zero_mlp(n, hid, r), h["mode"], gn)
    return load_model_vector(template, theta)


def save_model(path, model: AutoencoderModel, train_config: dict | None = None, seed: int | None = None,
               extra: dict | None = None) -> Checkpoint:
    ckpt = to_checkpoint(model, train_config, seed, extra)
    write_checkpoint(path, ckpt)
    return ckpt


def load_model(path) -> tuple[AutoencoderModel, dict]:
    ckpt = read_checkpoint(path)
    return from_checkpoint(ckpt), ckpt.header


def corrected(ckpt: Checkpoint, gn: GnConfig) -> Checkpoint:
    """Header switched to Gauss-Newton mode with ``gn``; payload bytes untouched."""
    if ckpt.mode != DIRECT:
        raise CheckpointError(f"only direct-mode checkpoints can be corrected, got mode {ckpt.mode!r}")
    header = dict(ckpt.header, mode=GAUSS_NEWTON, gn=gn.to_dict(), corrected=True)
    return Checkpoint(header, ckpt.payload)


__all__ = ["MAGIC", "FORMAT_VERSION", "Checkpoint", "canonical_json", "config_digest", "parse_checkpoint",
           "read_checkpoint", "write_checkpoint", "to_checkpoint", "from_checkpoint", "save_model",
           "load_model", "corrected"]
