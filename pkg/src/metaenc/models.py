"""One-hidden-layer tanh networks used for encoders and decoders.

``f(x) = W2 tanh(W1 x + b1) + b2``. Parameters may hold plain arrays or tape
variables (see :meth:`MlpParams.bind`); every function here works on both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ShapeError
from .tape import Tape, Var, as_tensor, value_of

DEFAULT_HIDDEN = 100
DEFAULT_LATENT = 5


@dataclass(frozen=True)
class MlpParams:
    W1: np.ndarray  # (h, d_in)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (d_out, h)
    b2: np.ndarray  # (d_out,)

    def __post_init__(self):
        w1, b1, w2, b2 = (tuple(x.shape) for x in (self.W1, self.b1, self.W2, self.b2))
        if len(w1) != 2 or len(w2) != 2 or b1 != (w1[0],) or w2[1] != w1[0] or b2 != (w2[0],):
            raise ShapeError(f"inconsistent MLP parameter shapes W1={w1} b1={b1} W2={w2} b2={b2}")

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def d_out(self) -> int:
        return self.W2.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.d_in, self.hidden, self.d_out)

    def bind(self, tape: Tape, prefix: str = "") -> "MlpParams":
        """Copy of these parameters as leaves on ``tape``."""
        return MlpParams(*(tape.leaf(value_of(x), name=f"{prefix}{k}")
                           for k, x in zip(("W1", "b1", "W2", "b2"), self.tensors())))

    def tensors(self) -> tuple:
        return (self.W1, self.b1, self.W2, self.b2)

    def values(self) -> "MlpParams":
        """Plain-array copy (reads the current values of bound variables)."""
        return MlpParams(*(as_tensor(value_of(x)) for x in self.tensors()))


def mlp_params(W1, b1, W2, b2) -> MlpParams:
    """Build :class:`MlpParams` from array-likes, checking finiteness."""
    arrays = [as_tensor(x) for x in (W1, b1, W2, b2)]
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("MLP parameters must be finite")
    return MlpParams(*arrays)


def init_mlp(d_in: int, h: int, d_out: int, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if min(d_in, h, d_out) < 1:
        raise ValueError(f"MLP dimensions must be >= 1, got ({d_in}, {h}, {d_out})")
    rng = np.random.default_rng(seed)
    s1 = np.sqrt(6.0 / (d_in + h))
    W1 = rng.uniform(-s1, s1, size=(h, d_in))
    s2 = np.sqrt(6.0 / (h + d_out))
    W2 = rng.uniform(-s2, s2, size=(d_out, h))
    return mlp_params(W1, np.zeros(h), W2, np.zeros(d_out))


def zero_mlp(d_in: int, h: int, d_out: int) -> MlpParams:
    return mlp_params(np.zeros((h, d_in)), np.zeros(h), np.zeros((d_out, h)), np.zeros(d_out))


def _as_batch(x):
    if value_of(x).ndim == 1:
        return ops.reshape(x, (1, -1)), True
    return x, False


def hidden_activation(p: MlpParams, x):
    """``tanh(W1 x + b1)`` for a batch ``x`` of shape (N, d_in)."""
    return ops.tanh(ops.add(ops.matmul(x, ops.transpose(p.W1)), p.b1))


def mlp_forward(p: MlpParams, x):
    """Apply the network to one sample (d_in,) or a batch (N, d_in)."""
    xb, single = _as_batch(x)
    if value_of(xb).shape[-1] != p.d_in:
        raise ShapeError(f"mlp_forward: input shape {value_of(x).shape} does not match d_in={p.d_in}")
    t = hidden_activation(p, xb)
    y = ops.add(ops.matmul(t, ops.transpose(p.W2)), p.b2)
    return ops.reshape(y, (p.d_out,)) if single else y


def scaled_input_weights(p: MlpParams, u):
    """``diag(1 - tanh(W1 u + b1)^2) W1`` for a batch ``u``: shape (N, h, d_in)."""
    t = hidden_activation(p, u)
    s = ops.sub(1.0, ops.hadamard(t, t))
    n = value_of(u).shape[0]
    return ops.hadamard(ops.reshape(s, (n, p.hidden, 1)), p.W1), t


def decoder_jacobian(p: MlpParams, u):
    """Jacobian of :func:`mlp_forward` at ``u``: (d_out, d_in), or (N, d_out, d_in) for a batch.

    Built from primitives, so gradients flow through it into the parameters and ``u``.
    """
    ub, single = _as_batch(u)
    if value_of(ub).shape[-1] != p.d_in:
        raise ShapeError(f"decoder_jacobian: input shape {value_of(u).shape} does not match d_in={p.d_in}")
    G, _ = scaled_input_weights(p, ub)
    J = ops.matmul(p.W2, G)
    return ops.reshape(J, (p.d_out, p.d_in)) if single else J


def param_count(d_in: int, h: int, d_out: int) -> int:
    return h * d_in + h + d_out * h + d_out


def param_vector(p: MlpParams) -> np.ndarray:
    """Flatten as W1 (row-major), b1, W2 (row-major), b2."""
    return np.concatenate([np.ravel(value_of(x)) for x in p.tensors()])


def load_param_vector(flat, dims: tuple[int, int, int]) -> MlpParams:
    d_in, h, d_out = dims
    flat = np.asarray(flat, dtype=np.float64).reshape(-1)
    expected = param_count(d_in, h, d_out)
    if flat.size != expected:
        raise ShapeError(f"parameter vector has length {flat.size}, expected {expected} for dims {dims}")
    sizes = [h * d_in, h, d_out * h, d_out]
    W1, b1, W2, b2 = np.split(flat, np.cumsum(sizes)[:-1])
    return mlp_params(W1.reshape(h, d_in), b1, W2.reshape(d_out, h), b2)


def is_taped(p: MlpParams) -> bool:
    return isinstance(p.W1, Var)
