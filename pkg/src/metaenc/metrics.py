"""Evaluation metrics for trained autoencoders.

Per-sample quantities are computed in chunks and reduced with ``math.fsum``,
so every metric is exactly invariant to sample order and chunk size.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autoencoder
from .autoencoder import AutoencoderModel
from .errors import MetaencError, NonFiniteError

CHUNK = 1000


def _samples(data) -> np.ndarray:
    X = np.asarray(getattr(data, "samples", data), dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return X


def _rowwise(fn, X: np.ndarray, chunk: int = CHUNK) -> np.ndarray:
    return np.concatenate([fn(X[lo:lo + chunk]) for lo in range(0, X.shape[0], chunk)])


def _sq_norms(a) -> np.ndarray:
    a = np.asarray(a)
    return np.einsum("ij,ij->i", a, a)


def _mean(per_sample: np.ndarray, width: int) -> float:
    return math.fsum(per_sample.tolist()) / (width * per_sample.size)


def encode(model, x) -> np.ndarray:
    """Encode with the model's configured encoder; models with their own ``encode`` method use it."""
    if hasattr(model, "encode"):
        return np.asarray(model.encode(x))
    return np.asarray(autoencoder.encode(model, x))


def decode(model, u) -> np.ndarray:
    if hasattr(model, "decode"):
        return np.asarray(model.decode(u))
    return np.asarray(autoencoder.decode(model, u))


def reconstruct(model: AutoencoderModel, X) -> np.ndarray:
    return decode(model, encode(model, X))


def reconstruction_mse(model: AutoencoderModel, data) -> float:
    """``(1/(nN)) sum_i |decoder(encoder(X_i)) - X_i|^2``."""
    X = _samples(data)
    return _mean(_rowwise(lambda x: _sq_norms(reconstruct(model, x) - x), X), model.n)


def sr_mse(model: AutoencoderModel, data) -> float:
    """Second-reconstruction error: distance between the reconstruction and its own reconstruction."""
    X = _samples(data)

    def per_sample(x):
        first = reconstruct(model, x)
        return _sq_norms(reconstruct(model, first) - first)

    return _mean(_rowwise(per_sample, X), model.n)


def right_inverse_residual(model: AutoencoderModel, data) -> float:
    """``(1/(rN)) sum_i |enc(dec(enc(X_i))) - enc(X_i)|^2``."""
    X = _samples(data)

    def per_sample(x):
        codes = encode(model, x)
        return _sq_norms(encode(model, decode(model, codes)) - codes)

    return _mean(_rowwise(per_sample, X), model.r)


def kth_reconstruction(model: AutoencoderModel, x, k: int) -> np.ndarray:
    """Apply ``decoder . encoder`` ``k`` times."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    out = np.asarray(x, dtype=np.float64)
    for i in range(1, k + 1):
        try:
            out = reconstruct(model, out)
        except MetaencError as exc:
            raise NonFiniteError(f"reconstruction iterate {i} failed: {exc}") from exc
    return out


def reconstruction_iterates(model: AutoencoderModel, X, ks) -> dict[int, np.ndarray]:
    """Iterates ``x_k`` for every requested ``k`` (and ``k + 1``) in one pass."""
    wanted = sorted({int(k) for k in ks} | {int(k) + 1 for k in ks})
    if wanted[0] < 1:
        raise ValueError("iterate indices must be >= 1")
    out = {}
    cur = _samples(X)
    for i in range(1, wanted[-1] + 1):
        try:
            cur = _rowwise(lambda x: reconstruct(model, x), cur)
        except MetaencError as exc:
            raise NonFiniteError(f"reconstruction iterate {i} failed: {exc}") from exc
        if i in wanted:
            out[i] = cur
    return out


def drift_per_sample(x_k: np.ndarray, x_next: np.ndarray) -> np.ndarray:
    """``|x_{k+1} - x_k|_2 / sqrt(n)`` per sample."""
    return np.sqrt(_sq_norms(x_next - x_k) / x_k.shape[1])


@dataclass
class EvalReport:
    dataset: str
    N: int
    mode: str
    mse: float
    sr_mse: float
    ri_residual: float
    kth_recon_mse: dict[int, float] = field(default_factory=dict)
    drift: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("EvalReport needs N >= 1")
        values = [self.mse, self.sr_mse, self.ri_residual, *self.kth_recon_mse.values(), *self.drift.values()]
        if any(not v >= 0 for v in values):
            raise ValueError("metrics must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kth_recon_mse"] = {str(k): v for k, v in self.kth_recon_mse.items()}
        d["drift"] = {str(k): v for k, v in self.drift.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["kth_recon_mse"] = {int(k): float(v) for k, v in d.get("kth_recon_mse", {}).items()}
        d["drift"] = {int(k): float(v) for k, v in d.get("drift", {}).items()}
        return cls(**d)

    # CSV layout: fixed leading columns, then one (kth_mse, drift) pair per k in ascending order.
    BASE_COLUMNS = ("mode", "dataset", "n_samples", "mse", "sr_mse", "ri_residual")

    def csv_header(self) -> list[str]:
        cols = list(self.BASE_COLUMNS)
        for k in sorted(self.kth_recon_mse):
            cols += [f"kth_mse_{k}", f"drift_{k}"]
        return cols

    def csv_row(self) -> list[str]:
        row = [self.mode, self.dataset, str(self.N), repr(self.mse), repr(self.sr_mse),
               repr(self.ri_residual)]
        for k in sorted(self.kth_recon_mse):
            row += [repr(self.kth_recon_mse[k]), repr(self.drift[k])]
        return row


def evaluate_model(model: AutoencoderModel, data, ks=(1, 100), name: str | None = None) -> EvalReport:
    X = _samples(data)
    n = model.n
    kth, drift = {}, {}
    if ks:
        iterates = reconstruction_iterates(model, X, ks)
        for k in sorted({int(k) for k in ks}):
            kth[k] = _mean(_sq_norms(iterates[k] - X), n)
            drift[k] = math.fsum(drift_per_sample(iterates[k], iterates[k + 1]).tolist()) / X.shape[0]
    return EvalReport(
        dataset=name or getattr(data, "name", "data"),
        N=X.shape[0],
        mode=model.mode,
        mse=reconstruction_mse(model, X),
        sr_mse=sr_mse(model, X),
        ri_residual=right_inverse_residual(model, X),
        kth_recon_mse=kth,
        drift=drift,
    )
