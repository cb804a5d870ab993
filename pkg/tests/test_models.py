import math

import numpy as np
import pytest

from metaenc import ops
from metaenc.autoencoder import (DIRECT, GAUSS_NEWTON, AutoencoderModel, init_autoencoder, load_model_vector,
                                 model_vector)
from metaenc.errors import ShapeError
from metaenc.gauss_newton import GnConfig
from metaenc.models import (MlpParams, decoder_jacobian, init_mlp, load_param_vector, mlp_forward, mlp_params,
                            param_count, param_vector, zero_mlp)
from metaenc.tape import Tape, grad_check

SCALAR_NET = mlp_params([[1.0]], [0.0], [[1.0]], [0.0])


def random_mlp(rng, d_in, h, d_out):
    return mlp_params(rng.standard_normal((h, d_in)), rng.standard_normal(h),
                      rng.standard_normal((d_out, h)), rng.standard_normal(d_out))


def test_init_is_deterministic():
    a, b = init_mlp(2, 3, 2, seed=7), init_mlp(2, 3, 2, seed=7)
    for x, y in zip(a.tensors(), b.tensors()):
        assert np.array_equal(x, y)


def test_init_biases_zero_and_bound():
    p = init_mlp(2, 3, 2, seed=7)
    assert not p.b1.any() and not p.b2.any()
    assert np.abs(p.W1).max() <= math.sqrt(6 / (2 + 3))
    assert np.abs(p.W2).max() <= math.sqrt(6 / (3 + 2))


def test_init_rejects_bad_dims():
    with pytest.raises(ValueError):
        init_mlp(0, 3, 2, seed=0)


def test_shape_invariant():
    with pytest.raises(ShapeError):
        MlpParams(np.ones((3, 2)), np.ones(2), np.ones((2, 3)), np.ones(2))


def test_non_finite_params_rejected():
    with pytest.raises(ValueError):
        mlp_params([[np.inf]], [0.0], [[1.0]], [0.0])


def test_forward_examples():
    assert np.array_equal(mlp_forward(zero_mlp(3, 4, 2), np.ones(3)), np.zeros(2))
    assert mlp_forward(SCALAR_NET, np.array([0.0]))[0] == 0.0
    assert mlp_forward(SCALAR_NET, np.array([1.0]))[0] == pytest.approx(0.7615941559557649, abs=1e-15)


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        mlp_forward(init_mlp(3, 4, 2, 0), np.ones(4))


def test_batch_equals_row_stacked_single_forwards():
    rng = np.random.default_rng(0)
    p = random_mlp(rng, 784, 100, 5)
    X = rng.standard_normal((23, 784))
    batch = mlp_forward(p, X)
    stacked = np.stack([mlp_forward(p, x) for x in X])
    assert np.array_equal(batch, stacked)


def test_jacobian_examples():
    assert np.array_equal(decoder_jacobian(zero_mlp(2, 3, 4), np.ones(2)), np.zeros((4, 2)))
    assert decoder_jacobian(SCALAR_NET, np.array([0.0]))[0, 0] == 1.0
    assert decoder_jacobian(SCALAR_NET, np.array([1.0]))[0, 0] == pytest.approx(0.4199743416140261, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = random_mlp(rng, 3, 5, 7)
    u = rng.standard_normal(3)
    J = decoder_jacobian(p, u)
    h = 1e-6
    fd = np.empty_like(J)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd[:, j] = (mlp_forward(p, u + e) - mlp_forward(p, u - e)) / (2 * h)
    assert np.abs(J - fd).max() / np.abs(J).max() <= 1e-6


def test_batched_jacobian_matches_single():
    rng = np.random.default_rng(1)
    p = random_mlp(rng, 2, 4, 6)
    U = rng.standard_normal((5, 2))
    JB = decoder_jacobian(p, U)
    for i in range(5):
        assert np.array_equal(JB[i], decoder_jacobian(p, U[i]))


def test_gradient_flows_through_jacobian():
    rng = np.random.default_rng(2)
    p = random_mlp(rng, 2, 3, 4)
    target = rng.standard_normal((4, 2))

    def expr(W1, b1, W2, b2, u):
        return ops.mse(decoder_jacobian(MlpParams(W1, b1, W2, b2), u), target)

    leaves = dict(zip(("W1", "b1", "W2", "b2"), p.tensors()), u=rng.standard_normal(2))
    assert grad_check(expr, leaves) <= 1e-6


def test_param_count_example():
    assert param_count(2, 3, 4) == 25


@pytest.mark.parametrize("dims", [(1, 1, 1), (2, 3, 4), (784, 100, 5), (5, 100, 784)])
def test_param_vector_round_trip(dims):
    p = random_mlp(np.random.default_rng(3), *dims)
    flat = param_vector(p)
    assert flat.size == param_count(*dims)
    q = load_param_vector(flat, dims)
    for x, y in zip(p.tensors(), q.tensors()):
        assert np.array_equal(x, y)
    assert np.array_equal(param_vector(q), flat)


def test_param_vector_order():
    p = mlp_params([[1.0, 2.0]], [3.0], [[4.0], [5.0]], [6.0, 7.0])
    assert param_vector(p).tolist() == [1, 2, 3, 4, 5, 6, 7]


def test_zero_vector_loads_zero_params():
    q = load_param_vector(np.zeros(25), (2, 3, 4))
    assert all(not x.any() for x in q.tensors())


def test_param_vector_length_error():
    with pytest.raises(ShapeError):
        load_param_vector(np.zeros(24), (2, 3, 4))


def test_bind_creates_leaves():
    tape = Tape()
    p = init_mlp(2, 3, 2, 0).bind(tape, "dec.")
    assert [tape.nodes[v.index].name for v in p.tensors()] == ["dec.W1", "dec.b1", "dec.W2", "dec.b2"]


# -- autoencoder model ----------------------------------------------------------

def test_autoencoder_dims_must_match():
    with pytest.raises(ShapeError):
        AutoencoderModel(init_mlp(2, 3, 6, 0), init_mlp(6, 3, 3, 1))


def test_gn_config_required_exactly_in_gn_mode():
    dec, enc = init_mlp(2, 3, 6, 0), init_mlp(6, 3, 2, 1)
    with pytest.raises(ValueError):
        AutoencoderModel(dec, enc, GAUSS_NEWTON)
    with pytest.raises(ValueError):
        AutoencoderModel(dec, enc, DIRECT, GnConfig())
    with pytest.raises(ValueError):
        AutoencoderModel(dec, enc, "other")


def test_init_autoencoder_defaults():
    m = init_autoencoder(784)
    assert (m.n, m.r, m.hidden) == (784, 5, 100)
    assert m.mode == DIRECT and m.gn is None
    g = init_autoencoder(784, mode=GAUSS_NEWTON)
    assert g.gn == GnConfig() and g.gn.iterations == 4


def test_model_vector_round_trip():
    m = init_autoencoder(6, 2, 4, seed=3)
    theta = model_vector(m)
    assert theta.size == param_count(2, 4, 6) + param_count(6, 4, 2)
    assert np.array_equal(model_vector(load_model_vector(m, theta)), theta)
    assert np.array_equal(theta[:param_count(2, 4, 6)], param_vector(m.decoder))
