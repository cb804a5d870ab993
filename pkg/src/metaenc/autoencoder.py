"""Autoencoder model: an MLP decoder plus an encoder network that is either
the encoder itself (``direct``) or the initial condition of a Gauss-Newton
encoder (``gauss_newton``)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError
from .gauss_newton import GnConfig, gauss_newton_encode
from .models import (DEFAULT_HIDDEN, DEFAULT_LATENT, MlpParams, init_mlp, load_param_vector,
                     mlp_forward, param_count, param_vector)
from .tape import Tape

DIRECT = "direct"
GAUSS_NEWTON = "gauss_newton"
MODES = (DIRECT, GAUSS_NEWTON)


@dataclass(frozen=True)
class AutoencoderModel:
    decoder: MlpParams  # r -> n
    encoder0: MlpParams  # n -> r
    mode: str = DIRECT
    gn: GnConfig | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown encoder mode {self.mode!r}")
        if (self.mode == GAUSS_NEWTON) != (self.gn is not None):
            raise ValueError("gn config must be given exactly when mode is gauss_newton")
        if self.decoder.d_in != self.encoder0.d_out or self.decoder.d_out != self.encoder0.d_in:
            raise ShapeError(
                f"decoder {self.decoder.dims} and encoder {self.encoder0.dims} are not compatible")

    @property
    def n(self) -> int:
        return self.decoder.d_out

    @property
    def r(self) -> int:
        return self.decoder.d_in

    @property
    def hidden(self) -> int:
        return self.decoder.hidden

    def bind(self, tape: Tape) -> "AutoencoderModel":
        return replace(self, decoder=self.decoder.bind(tape, "decoder."),
                       encoder0=self.encoder0.bind(tape, "encoder0."))

    def leaves(self) -> list:
        return [*self.decoder.tensors(), *self.encoder0.tensors()]


def init_autoencoder(n: int, r: int = DEFAULT_LATENT, h: int = DEFAULT_HIDDEN, seed: int = 0,
                     mode: str = DIRECT, gn: GnConfig | None = None) -> AutoencoderModel:
    """Fresh model; decoder and encoder draw from independent streams of ``seed``."""
    dec_seed, enc_seed = np.random.SeedSequence(seed).spawn(2)
    decoder = init_mlp(r, h, n, dec_seed)
    encoder0 = init_mlp(n, h, r, enc_seed)
    if mode == GAUSS_NEWTON and gn is None:
        gn = GnConfig()
    return AutoencoderModel(decoder, encoder0, mode, gn if mode == GAUSS_NEWTON else None)


def encode(model: AutoencoderModel, x):
    if model.mode == GAUSS_NEWTON:
        return gauss_newton_encode(model.decoder, model.encoder0, x, model.gn)
    return mlp_forward(model.encoder0, x)


def decode(model: AutoencoderModel, u):
    return mlp_forward(model.decoder, u)


def reconstruct(model: AutoencoderModel, x):
    return decode(model, encode(model, x))


def model_vector(model: AutoencoderModel) -> np.ndarray:
    """Decoder parameters followed by encoder parameters."""
    return np.concatenate([param_vector(model.decoder), param_vector(model.encoder0)])


def load_model_vector(model: AutoencoderModel, flat) -> AutoencoderModel:
    flat = np.asarray(flat, dtype=np.float64)
    k = param_count(*model.decoder.dims)
    if flat.size != k + param_count(*model.encoder0.dims):
        raise ShapeError(f"model vector has length {flat.size}, expected "
                         f"{k + param_count(*model.encoder0.dims)}")
    return replace(model, decoder=load_param_vector(flat[:k], model.decoder.dims),
                   encoder0=load_param_vector(flat[k:], model.encoder0.dims))

