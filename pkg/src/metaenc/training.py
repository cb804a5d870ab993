"""Training objectives, ADAM, the mini-batch loop and autoencoder correction."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .autoencoder import (DIRECT, GAUSS_NEWTON, AutoencoderModel, decode, encode,
                          load_model_vector, model_vector)
from .errors import ConfigError, SolveError
from .gauss_newton import GnConfig
from .tape import Tape, value_of

log = logging.getLogger(__name__)

CANONICAL = "canonical"
META = "meta"
WEAK_RI = "weak_ri"
TRAIN_MODES = (CANONICAL, META, WEAK_RI)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = CANONICAL
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lam: float = 0.0
    seed: int = 0
    gn: GnConfig = field(default_factory=GnConfig)

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"unknown training mode {self.mode!r}; expected one of {TRAIN_MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("ADAM betas must lie in (0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps must be positive")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def model_mode(self) -> str:
        return GAUSS_NEWTON if self.mode == META else DIRECT

    def to_dict(self) -> dict:
        return {"mode": self.mode, "epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "adam_beta1": self.adam_beta1,
                "adam_beta2": self.adam_beta2, "adam_eps": self.adam_eps, "lambda": self.lam,
                "seed": self.seed, "gn": self.gn.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {"mode", "epochs", "batch_size", "learning_rate", "adam_beta1", "adam_beta2",
                 "adam_eps", "lambda", "seed", "gn"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        kw = {k: d[k] for k in known - {"lambda", "gn"} if k in d}
        for k in ("epochs", "batch_size", "seed"):
            if k in kw:
                kw[k] = int(kw[k])
        for k in ("learning_rate", "adam_beta1", "adam_beta2", "adam_eps"):
            if k in kw:
                kw[k] = float(kw[k])
        if "lambda" in d:
            kw["lam"] = float(d["lambda"])
        if "gn" in d:
            try:
                kw["gn"] = GnConfig.from_dict(d["gn"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return cls(**kw)


def _require_mode(model: AutoencoderModel, mode: str, what: str):
    if model.mode != mode:
        raise ValueError(f"{what} needs a model in {mode!r} mode, got {model.mode!r}")


def canonical_loss(model: AutoencoderModel, batch):
    """Mean over the batch of ``|decoder(encoder(X)) - X|^2 / n``."""
    _require_mode(model, DIRECT, "canonical_loss")
    return ops.mse(decode(model, encode(model, batch)), batch)


def meta_loss(model: AutoencoderModel, batch):
    """Reconstruction error with the Gauss-Newton encoder in the forward pass."""
    _require_mode(model, GAUSS_NEWTON, "meta_loss")
    return ops.mse(decode(model, encode(model, batch)), batch)


def weak_ri_loss(model: AutoencoderModel, batch, lam: float):
    """Reconstruction error plus ``lam`` times the right-inverse violation in code space."""
    _require_mode(model, DIRECT, "weak_ri_loss")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    codes = encode(model, batch)
    recon = decode(model, codes)
    penalty = ops.mse(encode(model, recon), codes)
    return ops.add(ops.mse(recon, batch), ops.scale(penalty, lam))


def objective(model: AutoencoderModel, batch, cfg: TrainConfig):
    if cfg.mode == META:
        return meta_loss(model, batch)
    if cfg.mode == WEAK_RI:
        return weak_ri_loss(model, batch, cfg.lam)
    return canonical_loss(model, batch)


def loss_and_gradient(model: AutoencoderModel, batch, cfg: TrainConfig) -> tuple[float, np.ndarray]:
    """Objective value and its gradient, flattened in :func:`model_vector` order."""
    tape = Tape()
    bound = model.bind(tape)
    loss = objective(bound, tape.constant(batch, name="batch"), cfg)
    grads = tape.backward(loss, bound.leaves())
    return float(loss.value), np.concatenate([g.ravel() for g in grads])


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params, grads, state: AdamState, lr: float = 1e-3, b1: float = 0.9,
              b2: float = 0.999, eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not params.shape == grads.shape == state.m.shape == state.v.shape:
        raise ValueError(f"adam_step: shapes differ: params {params.shape}, grads {grads.shape}, "
                         f"state {state.m.shape}")
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * (grads * grads)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


@dataclass
class TrainResult:
    model: AutoencoderModel
    history: list[float]
    skipped_batches: int = 0
    steps: int = 0
    seconds: float = 0.0


def _samples(dataset) -> np.ndarray:
    return np.asarray(getattr(dataset, "samples", dataset), dtype=np.float64)


def epoch_order(n_samples: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n_samples)


def train(model: AutoencoderModel, dataset, cfg: TrainConfig, callback=None) -> TrainResult:
    """Mini-batch ADAM on the objective selected by ``cfg.mode``.

    Returns the trained model and the per-epoch mean batch loss. A batch whose
    Gauss-Newton solve fails even after damping escalation is logged and skipped.
    """
    X = _samples(dataset)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"training data must be a non-empty (N, n) matrix, got shape {X.shape}")
    if model.mode != cfg.model_mode:
        raise ValueError(f"{cfg.mode} training needs a {cfg.model_mode!r} model, got {model.mode!r}")
    if cfg.mode == META and model.gn != cfg.gn:
        model = replace(model, gn=cfg.gn)

    start = time.perf_counter()
    theta = model_vector(model)
    state = AdamState.zeros(theta.size)
    history: list[float] = []
    skipped = 0
    N = X.shape[0]
    for epoch in range(cfg.epochs):
        order = epoch_order(N, cfg.seed, epoch)
        total = 0.0
        count = 0
        for lo in range(0, N, cfg.batch_size):
            batch = X[order[lo:lo + cfg.batch_size]]
            try:
                loss, grad = loss_and_gradient(model, batch, cfg)
            except SolveError as exc:
                skipped += 1
                log.warning("epoch %d: skipped batch at offset %d: %s", epoch, lo, exc)
                continue
            theta, state = adam_step(theta, grad, state, cfg.learning_rate,
                                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            model = load_model_vector(model, theta)
            total += loss * batch.shape[0]
            count += batch.shape[0]
        history.append(total / count if count else float("nan"))
        log.info("epoch %d/%d %s loss %.6e", epoch + 1, cfg.epochs, cfg.mode, history[-1])
        if callback is not None:
            callback(epoch, history[-1], model)
    return TrainResult(model, history, skipped, state.t, time.perf_counter() - start)


def evaluate_objective(model: AutoencoderModel, data, cfg: TrainConfig, chunk: int = 1000) -> float:
    """Objective value over a full dataset, accumulated in sample order."""
    X = _samples(data)
    total = 0.0
    for lo in range(0, X.shape[0], chunk):
        part = X[lo:lo + chunk]
        total += float(value_of(objective(model, part, cfg))) * part.shape[0]
    return total / X.shape[0]


def correct_autoencoder(model: AutoencoderModel, gn: GnConfig = GnConfig()) -> AutoencoderModel:
    """Keep the decoder, reuse the trained encoder as the Gauss-Newton starting point."""
    if model.mode != DIRECT:
        raise ValueError(f"only direct-mode models can be corrected, got {model.mode!r}")
    return replace(model, mode=GAUSS_NEWTON, gn=gn)
