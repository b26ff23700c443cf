import numpy as np
import pytest

from fdin.autodiff import Graph, grad_check
from fdin.layers import (BatchNorm, DenseLayer, LstmStack, batchnorm_forward, count_parameters,
                         dense_forward, dropout_apply, lstm_forward)

from oracles import lstm_reference


def test_dense_forward_matches_numpy(rng):
    layer = DenseLayer.init("d", 4, 3, rng, activation="relu")
    layer.bias[...] = rng.normal(size=3)
    x = rng.normal(size=(5, 4))
    g = Graph()
    out = g.forward(dense_forward(g, layer, g.const(x), width=4))
    np.testing.assert_allclose(out, np.maximum(x @ layer.weight.T + layer.bias, 0.0), rtol=1e-12)


def test_dense_width_mismatch_is_eager(rng):
    layer = DenseLayer.init("d", 4, 3, rng)
    with pytest.raises(ValueError):
        dense_forward(Graph(), layer, Graph().const(np.ones((1, 5))), width=5)


def test_lstm_init_ranges(rng):
    st = LstmStack.init("l", 5, [6, 4], rng)
    for cell in st.cells:
        h = cell.hidden
        assert np.all(np.abs(cell.w_x) <= 0.08) and np.all(np.abs(cell.w_h) <= 0.08)
        np.testing.assert_array_equal(cell.bias[h:2 * h], 1.0)
        assert np.all(cell.bias[:h] == 0) and np.all(cell.bias[2 * h:] == 0)
    assert st.hidden == 4
    assert count_parameters(st) == 4 * 6 * (5 + 6 + 1) + 4 * 4 * (6 + 4 + 1)


@pytest.mark.parametrize("fused", [True, False])
def test_lstm_matches_loop_reference(rng, fused):
    st = LstmStack.init("l", 3, [4, 5], rng, scale=0.7)
    x = rng.normal(size=(6, 2, 3))
    g = Graph()
    out = g.forward(lstm_forward(g, st, g.const(x), 6, 2, fused=fused))
    ref = lstm_reference(x, [(c.w_x, c.w_h, c.bias) for c in st.cells])[-1]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-14)


def test_fused_and_unrolled_gradients_agree(rng):
    st = LstmStack.init("l", 3, [4, 4], rng, scale=0.5)
    x = rng.normal(size=(5, 2, 3))
    w = rng.normal(size=(2, 4))
    grads = []
    for fused in (True, False):
        g = Graph()
        xn = g.param("x", x)
        h = lstm_forward(g, st, xn, 5, 2, fused=fused)
        g.sum(g.mul(h, g.const(w)))
        g.forward()
        grads.append(g.backward())
    for k in grads[0]:
        np.testing.assert_allclose(grads[0][k], grads[1][k], rtol=1e-10, atol=1e-14)


def test_lstm_grad_check(rng):
    st = LstmStack.init("l", 2, [3, 3], rng, scale=0.5)
    g = Graph()
    h = lstm_forward(g, st, g.param("x", rng.normal(size=(4, 2, 2))), 4, 2)
    g.sum(g.mul(h, g.const(rng.normal(size=(2, 3)))))
    rep = grad_check(g, step=1e-5, tol=1e-4)
    assert rep.passed, rep.summary()


def test_lstm_handles_different_lengths(rng):
    st = LstmStack.init("l", 2, [3], rng)
    for t in (1, 2, 7):
        g = Graph()
        assert g.forward(lstm_forward(g, st, g.const(rng.normal(size=(t, 1, 2))), t, 1)).shape == (1, 3)
    with pytest.raises(ValueError):
        lstm_forward(Graph(), st, Graph().const(np.zeros((1, 1, 2))), 0, 1)


def test_lstm_stack_shape_validation(rng):
    a = LstmStack.init("a", 2, [3], rng).cells[0]
    b = LstmStack.init("b", 4, [3], rng).cells[0]
    with pytest.raises(ValueError):
        LstmStack("bad", [a, b])


def test_dropout_apply_identity_at_inference():
    g = Graph()
    x = g.const(np.ones(4))
    assert dropout_apply(g, x, 0.5, 0, training=False) is x
    with pytest.raises(ValueError):
        dropout_apply(g, x, 1.0, 0, training=True)


def test_batchnorm_running_stats_deferred(rng):
    bn = BatchNorm.init("bn", 3)
    x = rng.normal(loc=2.0, size=(8, 3))
    g = Graph()
    pending = []
    out = batchnorm_forward(g, bn, g.const(x), training=True, pending=pending)
    y = g.forward(out)
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_array_equal(bn.running_mean, 0.0)
    for p in pending:
        p.apply(g)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0), rtol=1e-12)


def test_batchnorm_validation():
    with pytest.raises(ValueError):
        BatchNorm.init("bn", 2, eps=0.0)
