"""Gauss-Newton encoder: a fixed number of damped Gauss-Newton steps that
minimize ``|decoder(U) - x|^2`` over the code ``U``, starting from an
initial-condition network. Every step is built from tape primitives, so the
outer loss can be differentiated through the iterations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import NonFiniteError, ShapeError, SolveError
from .models import MlpParams, hidden_activation, mlp_forward, scaled_input_weights
from .tape import Var, value_of

log = logging.getLogger(__name__)

MAX_DAMPING = 1e-2
MIN_ESCALATED_DAMPING = 1e-6
DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class GnConfig:
    iterations: int = 4
    damping: float = 1e-8
    cg_tol: float = 1e-10

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError(f"Gauss-Newton iterations must be a positive integer, got {self.iterations}")
        if not self.damping >= 0:
            raise ValueError(f"damping must be non-negative, got {self.damping}")
        if not self.cg_tol > 0:
            raise ValueError(f"cg_tol must be positive, got {self.cg_tol}")

    def to_dict(self) -> dict:
        return {"iterations": int(self.iterations), "damping": float(self.damping),
                "cg_tol": float(self.cg_tol)}

    @classmethod
    def from_dict(cls, d: dict) -> "GnConfig":
        return cls(int(d.get("iterations", 4)), float(d.get("damping", 1e-8)),
                   float(d.get("cg_tol", 1e-10)))


def _linear_matrix(decoder):
    """The (n, r) matrix of a linear decoder, or None for an MLP decoder."""
    if isinstance(decoder, MlpParams):
        return None
    V = getattr(decoder, "V", decoder)
    if not isinstance(V, (np.ndarray, Var)) or value_of(V).ndim != 2:
        raise TypeError(f"unsupported decoder type {type(decoder).__name__}")
    return V


def decode(decoder, U):
    """Decode a batch of codes (N, r) with an MLP or linear decoder."""
    V = _linear_matrix(decoder)
    if V is None:
        return mlp_forward(decoder, U)
    return ops.matmul(U, ops.transpose(V))


def _latent_dim(decoder) -> int:
    V = _linear_matrix(decoder)
    return decoder.d_in if V is None else value_of(V).shape[1]


def _as_batch(x):
    if value_of(x).ndim == 1:
        return ops.reshape(x, (1, -1)), True
    return x, False


def initial_codes(encoder0, X, r: int):
    """U0 from an initial-condition network, or an explicit (N, r) / (r,) array."""
    if isinstance(encoder0, MlpParams):
        return mlp_forward(encoder0, X)
    if encoder0 is None:
        return np.zeros((value_of(X).shape[0], r))
    U0 = encoder0
    if value_of(U0).ndim == 1:
        U0 = ops.reshape(U0, (1, -1))
    if value_of(U0).shape != (value_of(X).shape[0], r):
        raise ShapeError(f"initial codes have shape {value_of(U0).shape}, expected {(value_of(X).shape[0], r)}")
    return U0


def normal_equations(decoder, U, X, jacobian: str = "factored", gram=None):
    """Residual ``F = decoder(U) - X`` with the Gauss-Newton system ``(J^T J, J^T F)``.

    For an MLP decoder ``J = W2 G`` with ``G = diag(1 - tanh^2) W1``; the
    factored form evaluates ``J^T J = G^T (W2^T W2) G`` and
    ``J^T F = G^T (W2^T F)`` without materializing ``J``. ``gram`` may carry a
    precomputed ``W2^T W2``.
    """
    V = _linear_matrix(decoder)
    if V is not None:
        F = ops.sub(ops.matmul(U, ops.transpose(V)), X)
        return F, ops.matmul(ops.transpose(V), V), ops.matmul(F, V)

    p = decoder
    N, r = value_of(U).shape
    if jacobian == "explicit":
        G, t = scaled_input_weights(p, U)
        F = ops.sub(ops.add(ops.matmul(t, ops.transpose(p.W2)), p.b2), X)
        J = ops.matmul(p.W2, G)
        Jt = ops.transpose(J)
        JtJ = ops.matmul(Jt, J)
        JtF = ops.matmul(Jt, ops.reshape(F, (N, p.d_out, 1)))
    elif jacobian == "factored":
        t = hidden_activation(p, U)
        F = ops.sub(ops.add(ops.matmul(t, ops.transpose(p.W2)), p.b2), X)
        if gram is None:
            gram = ops.matmul(ops.transpose(p.W2), p.W2)
        # Gt = G^T = W1^T diag(s), laid out (N, r, h) so the Gram product is one 2-D contraction.
        s = ops.sub(1.0, ops.hadamard(t, t))
        Gt = ops.hadamard(ops.reshape(s, (N, 1, p.hidden)), ops.transpose(p.W1))
        GtM = ops.reshape(ops.matmul(ops.reshape(Gt, (N * r, p.hidden)), gram), (N, r, p.hidden))
        JtJ = ops.matmul(GtM, ops.transpose(Gt))
        c = ops.matmul(F, p.W2)
        JtF = ops.matmul(Gt, ops.reshape(c, (N, p.hidden, 1)))
    else:
        raise ValueError(f"unknown jacobian mode {jacobian!r}")
    return F, JtJ, ops.reshape(JtF, (N, p.d_in))


def _damped_solve(A, b, r: int, cfg: GnConfig):
    gamma = cfg.damping
    while True:
        A_damped = A if gamma == 0.0 else ops.add(A, gamma * np.eye(r))
        try:
            return ops.sym_solve(A_damped, b, tol=cfg.cg_tol)
        except SolveError as exc:
            escalated = max(10.0 * gamma, MIN_ESCALATED_DAMPING)
            if escalated > MAX_DAMPING:
                raise
            log.info("Gauss-Newton solve failed at damping %.1e (%s); retrying with %.1e",
                     gamma, exc, escalated)
            gamma = escalated


def _check_bounded(U, i: int):
    norms = np.sqrt(np.sum(value_of(U) ** 2, axis=-1))
    if np.any(norms > DIVERGENCE_BOUND):
        k = int(np.argmax(norms))
        raise NonFiniteError(f"Gauss-Newton iterate {i} diverged (|U| = {norms[k]:.3e} for sample {k})")


def gn_step(decoder, U, X, cfg: GnConfig, jacobian: str = "factored", gram=None):
    """One step ``U - (J^T J + damping I)^{-1} J^T F``. Returns ``(U_next, F)``."""
    r = value_of(U).shape[-1]
    F, JtJ, JtF = normal_equations(decoder, U, X, jacobian, gram)
    step = _damped_solve(JtJ, JtF, r, cfg)
    return ops.sub(U, step), F


def gauss_newton_encode(decoder, encoder0, x, cfg: GnConfig = GnConfig(), jacobian: str = "factored"):
    """Encode ``x`` (n,) or (N, n) with ``cfg.iterations`` Gauss-Newton steps.

    ``decoder`` is an :class:`MlpParams` or a linear decoder (an ``(n, r)``
    matrix or an object with a ``V`` attribute). ``encoder0`` supplies the
    starting code: an :class:`MlpParams` network, explicit codes, or ``None``
    for zeros.
    """
    X, single = _as_batch(x)
    r = _latent_dim(decoder)
    U = initial_codes(encoder0, X, r)
    gram = None
    if isinstance(decoder, MlpParams) and jacobian == "factored":
        gram = ops.matmul(ops.transpose(decoder.W2), decoder.W2)
    for i in range(1, cfg.iterations + 1):
        U, _ = gn_step(decoder, U, X, cfg, jacobian, gram)
        _check_bounded(U, i)
    return ops.reshape(U, (r,)) if single else U


def gn_trace(decoder, encoder0, x, cfg: GnConfig = GnConfig()):
    """Iterates of :func:`gauss_newton_encode` with their residual norms.

    Returns ``[(U_0, |F_0|), ..., (U_I, |F_I|)]`` where ``F_i = decoder(U_i) - x``;
    for a batch the norms are per-sample arrays.
    """
    X, single = _as_batch(value_of(x))
    r = _latent_dim(decoder)
    U = value_of(initial_codes(encoder0, X, r))
    trace = []
    for i in range(1, cfg.iterations + 1):
        U_next, F = gn_step(decoder, U, X, cfg)
        trace.append((U, np.sqrt(np.sum(F * F, axis=-1))))
        _check_bounded(U_next, i)
        U = U_next
    F = ops.sub(decode(decoder, U), X)
    trace.append((U, np.sqrt(np.sum(F * F, axis=-1))))
    if single:
        trace = [(u[0], float(f[0])) for u, f in trace]
    return trace
