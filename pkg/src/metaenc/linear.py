"""Linear autoencoders and PCA.

The PCA decoder spans the top-``r`` eigenvectors of the uncentered second
moment ``(1/N) X^T X``. Eigenvectors come from a cyclic Jacobi sweep in
round-robin order: each round rotates ``n/2`` disjoint index pairs at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import RankDeficientError, ShapeError
from .gauss_newton import GnConfig, gauss_newton_encode
from .tape import Tape

RANK_TOL = 1e-12
ORTHONORMAL_TOL = 1e-10


@dataclass(frozen=True)
class LinearDecoder:
    V: np.ndarray  # (n, r)
    orthonormal: bool = False
    eigenvalues: np.ndarray | None = None  # full descending spectrum, when fitted
    degenerate: bool = False  # eigenvalue r ties with eigenvalue r + 1

    def __post_init__(self):
        if self.V.ndim != 2 or self.V.shape[1] > self.V.shape[0] or self.V.shape[1] < 1:
            raise ShapeError(f"linear decoder needs an (n, r) matrix with 1 <= r <= n, got {self.V.shape}")
        if self.orthonormal:
            gap = np.linalg.norm(self.V.T @ self.V - np.eye(self.V.shape[1]))
            if gap > ORTHONORMAL_TOL:
                raise ValueError(f"V is flagged orthonormal but |V^T V - I|_F = {gap:.3e}")

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def r(self) -> int:
        return self.V.shape[1]


def _round_robin(m: int) -> list[np.ndarray]:
    """Circle-method schedule for even ``m``: ``m - 1`` orderings whose
    adjacent pairs ``(2i, 2i + 1)`` together cover every index pair once."""
    players = list(range(m))
    orders = []
    for _ in range(m - 1):
        half = m // 2
        pairs = np.stack([players[:half], players[half:][::-1]], axis=1)
        orders.append(np.sort(pairs, axis=1).ravel())
        players = [players[0], players[-1], *players[1:-1]]
    return orders


def _rotate_pairs(A: np.ndarray, Qt: np.ndarray) -> None:
    """Annihilate ``A[2i, 2i + 1]`` for every i in place, applying the same rotations to ``Qt``'s rows."""
    m = A.shape[0]
    h = m // 2
    app = A[0::2, 0::2].diagonal().copy()
    aqq = A[1::2, 1::2].diagonal().copy()
    apq = A[0::2, 1::2].diagonal().copy()
    active = np.abs(apq) > 1e-300
    safe = np.where(active, apq, 1.0)
    tau = (aqq - app) / (2.0 * safe)
    t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    for M in (A, Qt):
        rows = M.reshape(h, 2, -1)
        p, q = rows[:, 0, :].copy(), rows[:, 1, :].copy()
        rows[:, 0, :] = c[:, None] * p - s[:, None] * q
        rows[:, 1, :] = s[:, None] * p + c[:, None] * q
    cols = A.reshape(m, h, 2)
    p, q = cols[:, :, 0].copy(), cols[:, :, 1].copy()
    cols[:, :, 0] = p * c - q * s
    cols[:, :, 1] = p * s + q * c
    idx = np.arange(h)
    A[2 * idx, 2 * idx + 1] = 0.0
    A[2 * idx + 1, 2 * idx] = 0.0


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors (columns) of a symmetric matrix, unsorted.

    The working matrix is kept permuted so that the pairs rotated in a round
    are adjacent; moving to the next round is a single symmetric permutation.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape != (n, n):
        raise ShapeError(f"jacobi_eigh needs a square matrix, got {A.shape}")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max(initial=0.0))):
        raise ValueError("jacobi_eigh needs a symmetric matrix")
    if n < 2:
        return np.diag(A).copy(), np.eye(n)
    A = 0.5 * (A + A.T)
    m = n + (n % 2)
    if m != n:  # pad with an isolated zero row/column that never rotates
        A = np.pad(A, ((0, 1), (0, 1)))
    orders = _round_robin(m)
    layout = np.arange(m)  # layout[k] = original index stored at position k
    Qt = np.eye(m)  # rows are eigenvector estimates, in layout order
    scale = np.linalg.norm(A)
    for _ in range(max_sweeps):
        if np.linalg.norm(A - np.diag(np.diag(A))) <= tol * scale:
            break
        for order in orders:
            where = np.empty(m, dtype=np.intp)
            where[layout] = np.arange(m)
            move = where[order]
            A = A[np.ix_(move, move)]
            Qt = Qt[move]
            layout = order
            _rotate_pairs(A, Qt)
    vals = np.empty(m)
    vecs = np.empty((m, m))
    vals[layout] = np.diag(A)
    vecs[:, layout] = Qt.T
    return vals[:n].copy(), vecs[:n, :n].copy()


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Make each column's largest-magnitude entry positive (first index on ties)."""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[idx, np.arange(V.shape[1])] < 0, -1.0, 1.0)
    return V * signs


def second_moment(X, centered: bool = False) -> np.ndarray:
    X = np.asarray(getattr(X, "samples", X), dtype=np.float64)
    if centered:
        X = X - X.mean(axis=0)
    return X.T @ X / X.shape[0]


def pca_fit(data, r: int, centered: bool = False) -> LinearDecoder:
    """Top-``r`` eigenvectors of the (uncentered by default) second moment.

    Eigenvalue ties are broken by original index order and flagged through
    ``degenerate`` when they straddle the cut at ``r``.
    """
    X = np.asarray(getattr(data, "samples", data), dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"pca_fit needs an (N, n) matrix, got {X.shape}")
    N, n = X.shape
    if not 1 <= r <= min(N, n):
        raise ValueError(f"need 1 <= r <= min(N, n), got r={r} for data {X.shape}")
    vals, vecs = jacobi_eigh(second_moment(X, centered))
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    if vals[r - 1] < RANK_TOL:
        raise RankDeficientError(f"eigenvalue {r} of the second moment is {vals[r - 1]:.3e} < {RANK_TOL:g}; "
                                 f"the rank-{r} subspace is degenerate")
    degenerate = r < n and abs(vals[r - 1] - vals[r]) <= RANK_TOL * max(1.0, abs(vals[0]))
    return LinearDecoder(_fix_signs(vecs[:, :r]), orthonormal=True, eigenvalues=vals, degenerate=degenerate)


def _matrix(dec) -> np.ndarray:
    return dec.V if isinstance(dec, LinearDecoder) else np.asarray(dec, dtype=np.float64)


def linear_encode(dec, x):
    """``V^T x`` for a vector (n,) or a batch (N, n)."""
    V = _matrix(dec)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != V.shape[0] or x.ndim > 2:
        raise ShapeError(f"cannot encode shape {x.shape} with a decoder of shape {V.shape}")
    return np.asarray(ops.matmul(x, V))


def linear_decode(dec, u):
    """``V u`` for a code (r,) or a batch (N, r)."""
    V = _matrix(dec)
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != V.shape[1] or u.ndim > 2:
        raise ShapeError(f"cannot decode shape {u.shape} with a decoder of shape {V.shape}")
    return np.asarray(ops.matmul(u, ops.transpose(V)))


@dataclass(frozen=True)
class LinearAutoencoder:
    """``theta(x) = V^T x`` and ``phi(u) = V u``; usable wherever metrics need a model."""

    decoder: LinearDecoder
    mode: str = "linear"

    @property
    def n(self) -> int:
        return self.decoder.n

    @property
    def r(self) -> int:
        return self.decoder.r

    def encode(self, x):
        return linear_encode(self.decoder, x)

    def decode(self, u):
        return linear_decode(self.decoder, u)


def subspace_angle(A, B) -> float:
    """Largest principal angle between the column spans of ``A`` and ``B``.

    Computed from sines, ``|(I - P_A) Q_B|_2``, which stays accurate for small angles.
    """
    Qa, _ = np.linalg.qr(np.asarray(A, dtype=np.float64))
    Qb, _ = np.linalg.qr(np.asarray(B, dtype=np.float64))
    if Qa.shape[0] != Qb.shape[0]:
        raise ShapeError(f"subspaces live in different spaces: {A.shape} vs {B.shape}")
    if Qa.shape[1] < Qb.shape[1]:
        Qa, Qb = Qb, Qa
    residual = Qb - Qa @ (Qa.T @ Qb)
    return float(np.arcsin(min(1.0, np.linalg.norm(residual, 2))))


def linear_meta_loss_and_grad(V, X, gn: GnConfig) -> tuple[float, np.ndarray]:
    """Meta loss of a linear decoder (Gauss-Newton from zero codes) and its gradient in ``V``."""
    tape = Tape()
    Vv = tape.leaf(V, name="V")
    Xv = tape.constant(X, name="X")
    U = gauss_newton_encode(Vv, None, Xv, gn)
    loss = ops.mse(ops.matmul(U, ops.transpose(Vv)), Xv)
    (grad,) = tape.backward(loss, [Vv])
    return float(loss.value), grad


def train_linear_meta(X, r: int, gn: GnConfig = GnConfig(iterations=1, damping=0.0), steps: int = 500,
                      learning_rate: float | None = None, seed: int = 0, tol: float = 1e-12):
    """Full-batch gradient descent on the linear meta loss from a random orthonormal start.

    The default step is ``n / (2 lambda_1)``, the inverse curvature scale of
    the loss along the dominant direction. Stops early once the gradient norm
    drops below ``tol``. Returns ``(V, loss_history)``.
    """
    X = np.asarray(getattr(X, "samples", X), dtype=np.float64)
    n = X.shape[1]
    if learning_rate is None:
        lam1 = np.linalg.norm(X, 2) ** 2 / X.shape[0]
        learning_rate = n / (2.0 * lam1)
    V, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, r)))
    history = []
    for _ in range(steps):
        loss, grad = linear_meta_loss_and_grad(V, X, gn)
        history.append(loss)
        if np.linalg.norm(grad) < tol:
            break
        V = V - learning_rate * grad
    return V, history


def linear_meta_check(data, r: int, gn: GnConfig = GnConfig(iterations=1, damping=0.0), steps: int = 500,
                      seed: int = 0) -> dict:
    """Compare PCA with Gauss-Newton encoding and with a gradient-trained linear meta model.

    ``encode_gap`` is ``max |U_GN - V^T X|`` with the PCA decoder and zero
    initial codes; ``subspace_angle`` is the largest principal angle between
    the PCA span and the span of the trained linear decoder.
    """
    X = np.asarray(getattr(data, "samples", data), dtype=np.float64)
    dec = pca_fit(X, r)
    U = np.asarray(gauss_newton_encode(dec, None, X, gn))
    gap = float(np.max(np.abs(U - linear_encode(dec, X))))
    V, history = train_linear_meta(X, r, gn, steps=steps, seed=seed)
    return {"encode_gap": gap, "subspace_angle": subspace_angle(dec.V, V), "degenerate": dec.degenerate,
            "steps": len(history), "final_loss": history[-1]}
