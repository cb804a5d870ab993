"""Primitive operations with forward and vector-Jacobian-product rules.

Each public function accepts arrays or :class:`~metaenc.tape.Var` objects; see
:mod:`metaenc.tape` for the eager/recorded dispatch.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, NotPositiveDefiniteError, ShapeError, SolveError
from .tape import apply, register

CG_EXTRA_ITERATIONS = 5


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot combine shapes {a.shape} and {b.shape}") from None


# -- elementwise ------------------------------------------------------------

def _add_fwd(a, b):
    _broadcast_shape("add", a, b)
    return np.add(a, b)


def _add_vjp(g, out, inputs, attrs, needs):
    a, b = inputs
    return (_unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None)


def _sub_fwd(a, b):
    _broadcast_shape("sub", a, b)
    return np.subtract(a, b)


def _sub_vjp(g, out, inputs, attrs, needs):
    a, b = inputs
    return (_unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None)


def _hadamard_fwd(a, b):
    _broadcast_shape("hadamard", a, b)
    return np.multiply(a, b)


def _hadamard_vjp(g, out, inputs, attrs, needs):
    a, b = inputs
    return (_unbroadcast(g * b, a.shape) if needs[0] else None,
            _unbroadcast(g * a, b.shape) if needs[1] else None)


def _scale_fwd(a, factor):
    return np.multiply(a, factor)


def _scale_vjp(g, out, inputs, attrs, needs):
    return (np.multiply(g, attrs["factor"]),)


def _tanh_fwd(a):
    return np.tanh(a)


def _tanh_vjp(g, out, inputs, attrs, needs):
    return (g * (1.0 - out * out),)


register("add", _add_fwd, _add_vjp)
register("sub", _sub_fwd, _sub_vjp)
register("hadamard", _hadamard_fwd, _hadamard_vjp)
register("scale", _scale_fwd, _scale_vjp)
register("tanh", _tanh_fwd, _tanh_vjp)


# -- matmul -----------------------------------------------------------------

def _matmul_subscripts(a_shape, b_shape) -> tuple[str, str, str]:
    """einsum subscripts for numpy ``matmul`` semantics.

    Batch dimensions must match exactly, or one operand must have none.
    """
    if len(a_shape) == 0 or len(b_shape) == 0:
        raise ShapeError("matmul: scalar operands are not allowed")
    ka = a_shape[-1]
    kb = b_shape[0] if len(b_shape) == 1 else b_shape[-2]
    if ka != kb:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a_shape} and {b_shape}")
    a_batch = a_shape[:-2]
    b_batch = b_shape[:-2]
    if a_batch and b_batch and a_batch != b_batch:
        raise ShapeError(f"matmul: batch dimensions differ for shapes {a_shape} and {b_shape}")
    batch = "abcdefgh"[: max(len(a_batch), len(b_batch))]
    sa = "k" if len(a_shape) == 1 else batch[: len(a_batch)] + "mk"
    sb = "k" if len(b_shape) == 1 else batch[: len(b_batch)] + "kp"
    so = batch
    if len(a_shape) > 1:
        so += "m"
    if len(b_shape) > 1:
        so += "p"
    return sa, sb, so


def _matmul_fwd(a, b):
    sa, sb, so = _matmul_subscripts(a.shape, b.shape)
    return np.einsum(f"{sa},{sb}->{so}", a, b)


def _matmul_vjp(g, out, inputs, attrs, needs):
    a, b = inputs
    sa, sb, so = _matmul_subscripts(a.shape, b.shape)
    # Batch letters missing from an operand's subscripts are summed by einsum.
    # Adjoints may use BLAS (optimize=True); only forward values must be row-independent.
    ga = np.einsum(f"{so},{sb}->{sa}", g, b, optimize=True) if needs[0] else None
    gb = np.einsum(f"{sa},{so}->{sb}", a, g, optimize=True) if needs[1] else None
    return ga, gb


register("matmul", _matmul_fwd, _matmul_vjp)


# -- structural -------------------------------------------------------------

def _transpose_fwd(a):
    if a.ndim < 2:
        raise ShapeError(f"transpose: needs at least 2 dimensions, got shape {a.shape}")
    return np.ascontiguousarray(np.swapaxes(a, -1, -2))


def _transpose_vjp(g, out, inputs, attrs, needs):
    return (np.swapaxes(g, -1, -2),)


def _reshape_fwd(a, shape):
    try:
        return np.reshape(a, shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None


def _reshape_vjp(g, out, inputs, attrs, needs):
    return (np.reshape(g, inputs[0].shape),)


def _concat_fwd(*arrays, axis):
    try:
        return np.concatenate(arrays, axis=axis)
    except ValueError:
        shapes = ", ".join(str(a.shape) for a in arrays)
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None


def _concat_vjp(g, out, inputs, attrs, needs):
    axis = attrs["axis"]
    edges = np.cumsum([x.shape[axis] for x in inputs])[:-1]
    return tuple(np.split(g, edges, axis=axis))


def _sum_fwd(a, axis):
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"sum: axis {axis} out of range for shape {a.shape}")
    return np.sum(a, axis=axis)


def _sum_vjp(g, out, inputs, attrs, needs):
    (a,) = inputs
    axis = attrs["axis"]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _mse_fwd(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ: {a.shape} and {b.shape}")
    d = a - b
    return np.mean(d * d)


def _mse_vjp(g, out, inputs, attrs, needs):
    a, b = inputs
    ga = (2.0 * g / a.size) * (a - b)
    return (ga if needs[0] else None, -ga if needs[1] else None)


register("transpose", _transpose_fwd, _transpose_vjp)
register("reshape", _reshape_fwd, _reshape_vjp)
register("concat", _concat_fwd, _concat_vjp)
register("sum", _sum_fwd, _sum_vjp)
register("mse", _mse_fwd, _mse_vjp)


# -- symmetric positive definite solve --------------------------------------

def conjugate_gradient(A: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Solve ``A y = b`` for a batch of SPD systems by conjugate gradients.

    ``A`` has shape ``(..., m, m)`` and ``b`` has shape ``(..., m)``; batch
    dimensions broadcast. Each system stops independently once its true
    residual satisfies ``|Ay - b| <= tol * max(1, |b|)``. After ``m``
    iterations CG restarts from the true residual for up to
    ``CG_EXTRA_ITERATIONS`` more.
    """
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ShapeError(f"sym_solve: A must be square, got shape {A.shape}")
    m = A.shape[-1]
    if b.ndim < 1 or b.shape[-1] != m:
        raise ShapeError(f"sym_solve: shapes {A.shape} and {b.shape} do not match")
    try:
        batch = np.broadcast_shapes(A.shape[:-2], b.shape[:-1])
    except ValueError:
        raise ShapeError(f"sym_solve: batch shapes {A.shape} and {b.shape} do not match") from None

    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2))) if A.size else 0.0
    if asym > 1e-10 * max(1.0, float(np.max(np.abs(A))) if A.size else 0.0):
        raise SolveError(f"sym_solve: matrix is not symmetric (max asymmetry {asym:.3e})")

    As = np.broadcast_to(A, batch + (m, m)).reshape(-1, m, m)
    bs = np.broadcast_to(b, batch + (m,)).reshape(-1, m)

    def matvec(v):
        return np.einsum("bij,bj->bi", As, v)

    def norm(v):
        return np.sqrt(np.einsum("bi,bi->b", v, v))

    x = np.zeros_like(bs)
    threshold = tol * np.maximum(1.0, norm(bs))
    r = bs.copy()
    active = norm(r) > threshold
    # Search directions are A-orthogonalized against all earlier ones (full
    # reorthogonalization): identical to CG in exact arithmetic, and it keeps
    # the m-step termination in floating point for ill-conditioned systems.
    dirs: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []  # (p, Ap, p^T A p)

    for it in range(m + CG_EXTRA_ITERATIONS):
        if not active.any():
            break
        if it == m:  # restart from the true residual
            r = bs - matvec(x)
            dirs = []
        p = r.copy()
        for pj, Apj, cj in dirs:
            coef = np.einsum("bi,bi->b", Apj, r) / cj
            p = p - coef[:, None] * pj
        Ap = matvec(p)
        curv = np.einsum("bi,bi->b", p, Ap)
        bad = active & (curv <= 0.0)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise NotPositiveDefiniteError(
                f"sym_solve: non-positive CG curvature {curv[k]:.3e} in system {k} "
                f"at iteration {it}; increase damping"
            )
        safe = np.where(active, curv, 1.0)
        alpha = np.where(active, np.einsum("bi,bi->b", p, r) / safe, 0.0)
        x = x + alpha[:, None] * p
        r = r - alpha[:, None] * Ap
        dirs.append((p, Ap, safe))
        active = active & (norm(bs - matvec(x)) > threshold)

    if active.any():
        k = int(np.flatnonzero(active)[0])
        res = float(norm(bs - matvec(x))[k])
        raise ConvergenceError(
            f"sym_solve: CG did not converge in {m + CG_EXTRA_ITERATIONS} iterations "
            f"(system {k}, residual {res:.3e} > {threshold[k]:.3e})"
        )
    return x.reshape(batch + (m,))


def _sym_solve_fwd(A, b, tol):
    return conjugate_gradient(A, b, tol)


def _sym_solve_vjp(g, out, inputs, attrs, needs):
    A, b = inputs
    gb = conjugate_gradient(A, g, attrs["tol"])
    gA = None
    if needs[0]:
        outer = gb[..., :, None] * out[..., None, :]
        gA = _unbroadcast(-0.5 * (outer + np.swapaxes(outer, -1, -2)), A.shape)
    return gA, (_unbroadcast(gb, b.shape) if needs[1] else None)


register("sym_solve", _sym_solve_fwd, _sym_solve_vjp)


# -- public API -------------------------------------------------------------

def add(a, b):
    return apply("add", (a, b))


def sub(a, b):
    return apply("sub", (a, b))


def hadamard(a, b):
    return apply("hadamard", (a, b))


def scale(a, factor: float):
    return apply("scale", (a,), factor=float(factor))


def tanh(a):
    return apply("tanh", (a,))


def matmul(a, b):
    return apply("matmul", (a, b))


def transpose(a):
    """Swap the last two axes."""
    return apply("transpose", (a,))


def reshape(a, shape):
    return apply("reshape", (a,), shape=tuple(int(s) for s in shape))


def concat(arrays, axis: int = 0):
    return apply("concat", tuple(arrays), axis=int(axis))


def sum(a, axis: int | None = None):  # noqa: A001 - mirrors the primitive name
    return apply("sum", (a,), axis=axis)


def mse(a, b):
    """Mean of squared differences over all entries."""
    return apply("mse", (a, b))


def sym_solve(A, b, tol: float = 1e-10):
    """Differentiable SPD solve ``A^{-1} b`` by conjugate gradients.

    The adjoint solves with the same matrix: ``b_bar = A^{-1} y_bar`` and
    ``A_bar = -sym(b_bar y^T)``.
    """
    return apply("sym_solve", (A, b), tol=float(tol))
