import numpy as np
import pytest

from metaenc import ops
from metaenc.errors import ConvergenceError, NonFiniteError, NotPositiveDefiniteError, ShapeError, SolveError, TapeError
from metaenc.tape import PRIMITIVES, Tape, evaluate, grad_check

SEEDS = range(100)
VJP_TOL = 1e-6


def weighted(y, w):
    """Scalar probe sum(w * y) so every output entry reaches the gradient."""
    return ops.sum(ops.hadamard(y, w))


# -- forward examples ---------------------------------------------------------

def test_matmul_example():
    assert np.array_equal(ops.matmul([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0]), [3.0, 7.0])


def test_tanh_zero():
    assert np.array_equal(ops.tanh(np.zeros(3)), np.zeros(3))


def test_mse_example():
    assert ops.mse([1.0, 2.0], [0.0, 0.0]) == 2.5


@pytest.mark.parametrize("A, b, expected", [
    ([[2.0, 0.0], [0.0, 2.0]], [2.0, 4.0], [1.0, 2.0]),
    ([[2.0, 1.0], [1.0, 2.0]], [1.0, 0.0], [2.0 / 3.0, -1.0 / 3.0]),
])
def test_sym_solve_examples(A, b, expected):
    np.testing.assert_allclose(ops.sym_solve(A, b), expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("m", [1, 2, 5, 17])
def test_sym_solve_identity(m):
    b = np.random.default_rng(m).standard_normal(m)
    np.testing.assert_allclose(ops.sym_solve(np.eye(m), b), b, rtol=0, atol=1e-14)


# -- backward examples --------------------------------------------------------

def test_backward_mse_example():
    tape = Tape()
    x = tape.leaf([1.0, 2.0])
    (g,) = tape.backward(ops.mse(x, np.zeros(2)), [x])
    np.testing.assert_allclose(g, [1.0, 2.0], rtol=0, atol=1e-15)


def test_backward_sum_tanh_example():
    tape = Tape()
    x = tape.leaf(np.zeros(4))
    (g,) = tape.backward(ops.sum(ops.tanh(x)), [x])
    assert np.array_equal(g, np.ones(4))


def test_backward_sym_solve_example():
    tape = Tape()
    A = tape.leaf([[2.0, 0.0], [0.0, 2.0]])
    b = tape.leaf([2.0, 4.0])
    gA, gb = tape.backward(ops.sum(ops.sym_solve(A, b)), [A, b])
    np.testing.assert_allclose(gb, [0.5, 0.5], rtol=0, atol=1e-12)
    # dA = -sym(A^-1 1 y^T) with y = [1, 2]
    np.testing.assert_allclose(gA, -np.array([[0.5, 0.75], [0.75, 1.0]]), rtol=0, atol=1e-12)


# -- errors -------------------------------------------------------------------

def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2,\)"):
        ops.matmul(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ShapeError, match="mse"):
        ops.mse(np.ones(3), np.ones(4))


def test_non_finite_error_names_op():
    with pytest.raises(NonFiniteError, match="scale"):
        ops.scale(np.array([1e308]), 10.0)
    with pytest.raises(NonFiniteError):
        Tape().leaf([np.nan])


def test_backward_needs_scalar_root():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(TapeError, match="scalar"):
        tape.backward(ops.tanh(x), [x])


def test_backward_rejects_foreign_leaf():
    t1, t2 = Tape(), Tape()
    x = t1.leaf(np.ones(2))
    y = t2.leaf(np.ones(2))
    with pytest.raises(TapeError):
        t1.backward(ops.mse(x, np.zeros(2)), [y])
    with pytest.raises(TapeError):
        ops.add(x, y)


def test_backward_rejects_non_leaf_target():
    tape = Tape()
    x = tape.leaf(np.ones(2))
    y = ops.tanh(x)
    with pytest.raises(TapeError, match="not a leaf"):
        tape.backward(ops.mse(y, np.zeros(2)), [y])


def test_unreached_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.leaf(np.ones(2))
    z = tape.leaf(np.ones(3))
    gx, gz = tape.backward(ops.mse(x, np.zeros(2)), [x, z])
    assert np.array_equal(gz, np.zeros(3))


def test_sym_solve_not_spd():
    with pytest.raises(NotPositiveDefiniteError):
        ops.sym_solve([[1.0, 0.0], [0.0, -1.0]], [0.0, 1.0])
    with pytest.raises(NotPositiveDefiniteError):
        ops.sym_solve(np.zeros((2, 2)), [1.0, 0.0])


def test_sym_solve_not_symmetric():
    with pytest.raises(SolveError, match="symmetric"):
        ops.sym_solve([[2.0, 1.0], [0.0, 2.0]], [1.0, 0.0])


def test_sym_solve_non_convergence():
    # SPD in exact arithmetic but so ill-conditioned that m + 5 CG steps cannot reach the tolerance.
    m = 12
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((m, m)))
    A = Q @ np.diag(np.logspace(0, 15, m)) @ Q.T
    A = 0.5 * (A + A.T)
    with pytest.raises(SolveError) as info:
        ops.sym_solve(A, np.ones(m), tol=1e-14)
    assert isinstance(info.value, (ConvergenceError, NotPositiveDefiniteError))


def test_grad_check_perturbation_range():
    for h in (1e-9, 1e-3):
        with pytest.raises(ValueError):
            grad_check(lambda x: ops.mse(x, np.zeros(2)), {"x": np.ones(2)}, perturbation=h)


# -- VJP vs finite differences, 100 random instances per primitive ------------

def _case(kind, rng):
    """(expression, leaves) exercising one primitive through a weighted scalar probe."""
    if kind == "add":
        shape = tuple(rng.integers(1, 5, size=2))
        w = rng.standard_normal(shape)
        return (lambda a, b: weighted(ops.add(a, b), w)), {"a": rng.standard_normal(shape),
                                                            "b": rng.standard_normal(shape[1:])}
    if kind == "sub":
        shape = tuple(rng.integers(1, 5, size=2))
        w = rng.standard_normal(shape)
        return (lambda a, b: weighted(ops.sub(a, b), w)), {"a": rng.standard_normal(shape),
                                                            "b": rng.standard_normal(shape)}
    if kind == "hadamard":
        shape = tuple(rng.integers(1, 5, size=2))
        w = rng.standard_normal(shape)
        return (lambda a, b: weighted(ops.hadamard(a, b), w)), {"a": rng.standard_normal(shape),
                                                                 "b": rng.standard_normal(shape)}
    if kind == "scale":
        c = float(rng.uniform(-3, 3))
        w = rng.standard_normal(4)
        return (lambda a: weighted(ops.scale(a, c), w)), {"a": rng.standard_normal(4)}
    if kind == "tanh":
        w = rng.standard_normal((3, 2))
        return (lambda a: weighted(ops.tanh(a), w)), {"a": rng.standard_normal((3, 2))}
    if kind == "matmul":
        n, k, m = rng.integers(1, 5, size=3)
        batch = () if rng.random() < 0.5 else (int(rng.integers(1, 4)),)
        w = rng.standard_normal(batch + (n, m))
        return (lambda a, b: weighted(ops.matmul(a, b), w)), {"a": rng.standard_normal(batch + (n, k)),
                                                               "b": rng.standard_normal((k, m))}
    if kind == "transpose":
        w = rng.standard_normal((2, 4, 3))
        return (lambda a: weighted(ops.transpose(a), w)), {"a": rng.standard_normal((2, 3, 4))}
    if kind == "reshape":
        w = rng.standard_normal((3, 4))
        return (lambda a: weighted(ops.reshape(a, (3, 4)), w)), {"a": rng.standard_normal((2, 6))}
    if kind == "concat":
        axis = int(rng.integers(0, 2))
        w = rng.standard_normal((5, 3) if axis == 0 else (2, 6))
        shapes = ((2, 3), (3, 3)) if axis == 0 else ((2, 2), (2, 4))
        return (lambda a, b: weighted(ops.concat([a, b], axis), w)), {"a": rng.standard_normal(shapes[0]),
                                                                       "b": rng.standard_normal(shapes[1])}
    if kind == "sum":
        axis = [None, 0, 1][int(rng.integers(0, 3))]
        w = rng.standard_normal({None: (), 0: (4,), 1: (3,)}[axis])
        return (lambda a: weighted(ops.sum(a, axis), w)), {"a": rng.standard_normal((3, 4))}
    if kind == "mse":
        shape = tuple(rng.integers(1, 5, size=2))
        return (lambda a, b: ops.mse(a, b)), {"a": rng.standard_normal(shape), "b": rng.standard_normal(shape)}
    if kind == "sym_solve":
        m = int(rng.integers(1, 6))
        w = rng.standard_normal(m)

        def expr(S, b):
            # A = S + S^T + c I stays symmetric under entrywise perturbation of S
            A = ops.add(ops.add(S, ops.transpose(S)), 2.0 * m * np.eye(m))
            return weighted(ops.sym_solve(A, b), w)
        return expr, {"S": rng.uniform(-1, 1, (m, m)), "b": rng.standard_normal(m)}
    raise AssertionError(kind)


@pytest.mark.parametrize("kind", sorted(PRIMITIVES))
def test_vjp_matches_finite_differences(kind):
    worst = 0.0
    for seed in SEEDS:
        expr, leaves = _case(kind, np.random.default_rng([7, seed]))
        worst = max(worst, grad_check(expr, leaves, perturbation=1e-6))
    assert worst <= VJP_TOL, f"{kind}: worst relative error {worst:.3e}"


def test_grad_check_linear_expression():
    rng = np.random.default_rng(3)
    W = rng.standard_normal((4, 3))
    err = grad_check(lambda x, b: ops.sum(ops.add(ops.matmul(W, x), b)),
                     {"x": rng.standard_normal(3), "b": rng.standard_normal(4)})
    assert err <= 1e-8


def test_grad_check_mse_expression():
    rng = np.random.default_rng(4)
    err = grad_check(lambda a, b: ops.mse(a, b), {"a": rng.standard_normal((3, 4)),
                                                  "b": rng.standard_normal((3, 4))})
    assert err <= 1e-6


# -- solver contract ----------------------------------------------------------

@pytest.mark.parametrize("m", [1, 2, 3, 8, 16, 32, 64])
def test_sym_solve_residual_contract(m):
    rng = np.random.default_rng(m)
    for _ in range(5):
        B = rng.standard_normal((m, m))
        A = B.T @ B + np.eye(m)
        b = rng.standard_normal(m) * 10.0 ** rng.uniform(-3, 3)
        y = ops.sym_solve(A, b)
        assert np.linalg.norm(A @ y - b) <= 1e-10 * max(1.0, np.linalg.norm(b))


def test_sym_solve_batched_matches_single():
    rng = np.random.default_rng(11)
    B = rng.standard_normal((6, 3, 3))
    A = np.einsum("nki,nkj->nij", B, B) + np.eye(3)
    b = rng.standard_normal((6, 3))
    batched = ops.sym_solve(A, b)
    for i in range(6):
        y = ops.sym_solve(A[i], b[i])
        assert np.linalg.norm(A[i] @ batched[i] - b[i]) <= 1e-10 * max(1.0, np.linalg.norm(b[i]))
        np.testing.assert_allclose(batched[i], y, rtol=1e-12, atol=1e-14)


# -- tape properties ----------------------------------------------------------

def _mlp_expr(W, x):
    return ops.mse(ops.tanh(ops.matmul(x, ops.transpose(W))), np.full((4, 3), 0.25))


def test_replay_reproduces_every_node():
    rng = np.random.default_rng(5)
    tape, root, _ = evaluate(_mlp_expr, {"W": rng.standard_normal((3, 2)), "x": rng.standard_normal((4, 2))})
    assert tape.replay()


def test_two_forwards_are_bit_identical():
    rng = np.random.default_rng(6)
    leaves = {"W": rng.standard_normal((3, 2)), "x": rng.standard_normal((4, 2))}
    _, r1, _ = evaluate(_mlp_expr, leaves)
    _, r2, _ = evaluate(_mlp_expr, leaves)
    assert np.array_equal(r1.value, r2.value)


def test_nodes_reference_earlier_nodes():
    rng = np.random.default_rng(8)
    tape, _, _ = evaluate(_mlp_expr, {"W": rng.standard_normal((3, 2)), "x": rng.standard_normal((4, 2))})
    for i, node in enumerate(tape.nodes):
        assert all(j < i for j in node.inputs)


def test_backward_linearity_over_independent_subgraphs():
    rng = np.random.default_rng(9)
    a0, b0 = rng.standard_normal(5), rng.standard_normal((2, 3))

    def f(a):
        return ops.sum(ops.tanh(a))

    def g(b):
        return ops.mse(ops.matmul(b, np.ones((3, 2))), np.zeros((2, 2)))

    tape = Tape()
    a, b = tape.leaf(a0), tape.leaf(b0)
    ga, gb = tape.backward(ops.add(f(a), g(b)), [a, b])

    t1 = Tape()
    a1 = t1.leaf(a0)
    (ga_sep,) = t1.backward(f(a1), [a1])
    t2 = Tape()
    b2 = t2.leaf(b0)
    (gb_sep,) = t2.backward(g(b2), [b2])
    assert np.array_equal(ga, ga_sep)
    assert np.array_equal(gb, gb_sep)


def test_shared_leaf_accumulates():
    tape = Tape()
    x = tape.leaf([1.0, -2.0])
    (g,) = tape.backward(ops.sum(ops.add(ops.hadamard(x, x), x)), [x])
    np.testing.assert_allclose(g, 2.0 * np.array([1.0, -2.0]) + 1.0, rtol=0, atol=1e-15)


def test_batched_matmul_rows_match_single_rows_bit_exactly():
    rng = np.random.default_rng(10)
    W = rng.standard_normal((100, 784))
    X = rng.standard_normal((37, 784))
    full = ops.matmul(X, ops.transpose(W))
    for i in (0, 5, 36):
        assert np.array_equal(full[i], ops.matmul(X[i], ops.transpose(W)))


def test_eager_values_are_read_only():
    y = ops.tanh(np.ones(3))
    with pytest.raises(ValueError):
        y[0] = 0.0
