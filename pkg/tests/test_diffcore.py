import numpy as np
import pytest
from hypothesis import given, strategies as st

from opac.diffcore import DomainError, ShapeError, Tape, backward, finite_diff_gradient, forward_op


def test_identity_matmul(rng):
    tape = Tape()
    x = rng.normal(size=(3, 4))
    out = tape.constant(np.eye(3)) @ tape.leaf(x)
    np.testing.assert_array_equal(out.value, x)


def test_tanh_at_zero():
    tape = Tape()
    x = tape.leaf(np.array(0.0))
    y = x.tanh()
    assert y.value == 0.0
    assert tape.grad(y, [x])[0] == 1.0


def test_sum_of_squares():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0, 3.0]))
    y = x.square().sum()
    assert y.value == 14.0
    np.testing.assert_array_equal(tape.grad(y, [x])[0], [2.0, 4.0, 6.0])


def test_forward_op_by_id():
    tape = Tape()
    a = tape.leaf(np.array([1.0, 2.0]))
    b = tape.leaf(np.array([3.0, 4.0]))
    i = forward_op(tape, "mul", [a.id, b.id])
    root = forward_op(tape, "sum", [i])
    table = backward(tape, root)
    np.testing.assert_array_equal(table[a.id], [3.0, 4.0])
    np.testing.assert_array_equal(table[root], 1.0)


def test_product_rule():
    tape = Tape()
    x, y = tape.leaf(np.array(2.0)), tape.leaf(np.array(3.0))
    gx, gy = tape.grad(x * y, [x, y])
    assert (gx, gy) == (3.0, 2.0)


def test_constant_root_gives_zero_gradients():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    c = tape.constant(np.array(5.0))
    np.testing.assert_array_equal(tape.grad(c, [x])[0], np.zeros(3))


def test_multiple_uses_accumulate():
    tape = Tape()
    x = tape.leaf(np.array(3.0))
    y = x * x + x  # d/dx = 2x + 1
    assert tape.grad(y, [x])[0] == 7.0


def test_non_scalar_root_rejected():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ValueError):
        tape.backward(x.tanh())


def test_shape_error_names_op():
    tape = Tape()
    with pytest.raises(ShapeError) as exc:
        tape.leaf(np.ones((2, 3))) @ tape.leaf(np.ones((2, 3)))
    assert "matmul" in str(exc.value)
    assert "(2, 3)" in str(exc.value)


def test_log_domain():
    tape = Tape()
    with pytest.raises(DomainError):
        tape.leaf(np.array([1.0, 0.0])).log()


def test_clamp_gradient_is_zero_outside():
    tape = Tape()
    x = tape.leaf(np.array([-3.0, 0.5, 3.0]))
    g = tape.grad(x.clamp(-1.0, 1.0).sum(), [x])[0]
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


def test_values_are_read_only():
    tape = Tape()
    y = tape.leaf(np.ones(2)).exp()
    with pytest.raises(ValueError):
        y.value[0] = 0.0


def test_parents_precede_children():
    tape = Tape()
    x = tape.leaf(np.ones((2, 2)))
    (x @ x).tanh().mean()
    for i, parents in enumerate(tape.parents):
        assert all(p < i for p in parents)


def test_finite_diff_examples():
    assert finite_diff_gradient(lambda p: p[0] ** 2, np.array([3.0]))[0] == pytest.approx(6.0, abs=1e-6)
    np.testing.assert_array_equal(finite_diff_gradient(lambda p: 4.0, np.zeros(3)), np.zeros(3))
    assert finite_diff_gradient(lambda p: np.tanh(p[0]), np.array([0.0]))[0] == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda p: 0.0, np.zeros(1), step=0.0)


def _mlp_loss(tape, w1, b1, w2, b2, x, y):
    h = (tape.constant(x) @ w1 + b1).relu()
    out = (h @ w2 + b2).tanh()
    return (out - tape.constant(y)).square().mean()


def test_two_layer_mlp_matches_finite_differences(rng):
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    shapes = [(3, 4), (4,), (4, 2), (2,)]
    params = [rng.normal(size=s) for s in shapes]
    sizes = [int(np.prod(s)) for s in shapes]

    def unpack(vec):
        out, k = [], 0
        for s, n in zip(shapes, sizes):
            out.append(vec[k:k + n].reshape(s))
            k += n
        return out

    def f(vec):
        tape = Tape()
        return float(_mlp_loss(tape, *(tape.leaf(p) for p in unpack(vec)), x, y).value)

    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    analytic = np.concatenate([g.ravel() for g in tape.grad(_mlp_loss(tape, *leaves, x, y), leaves)])
    numeric = finite_diff_gradient(f, np.concatenate([p.ravel() for p in params]))
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-6)
    assert rel.max() < 1e-4


def _graph(tape, x, kind):
    if kind == 0:
        return (x.tanh() * x).sum()
    if kind == 1:
        return x.exp().mean() + x.softplus().sum()
    if kind == 2:
        return (x.square() + 1.0).log().sum() - x.relu().mean()
    return x.reshape(x.shape[0] * x.shape[1]).clamp(-0.5, 0.5).square().sum()


@given(st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_composed_graphs_match_finite_differences(kind, seed):
    r = np.random.default_rng(seed)
    x0 = r.normal(size=(3, 2))
    # keep clamp and relu kinks out of the difference stencil
    x0 = np.where(np.abs(x0) < 1e-3, 0.1, x0)
    x0 = np.where(np.abs(np.abs(x0) - 0.5) < 1e-3, 0.3, x0)
    tape = Tape()
    leaf = tape.leaf(x0)
    analytic = tape.grad(_graph(tape, leaf, kind), [leaf])[0].ravel()

    def f(v):
        t = Tape()
        return float(_graph(t, t.leaf(v.reshape(3, 2)), kind).value)

    numeric = finite_diff_gradient(f, x0)
    small = np.abs(analytic) < 1e-6
    assert np.all(np.abs(analytic - numeric)[small] < 1e-6)
    assert np.all(np.abs(analytic - numeric)[~small] / np.abs(analytic[~small]) < 1e-4)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_backward_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x0 = r.normal(size=4)
    tape = Tape()
    x = tape.leaf(x0)
    f = x.tanh().sum()
    g = x.square().mean()
    gf, gg = tape.grad(f, [x])[0], tape.grad(g, [x])[0]
    combo = tape.grad(f * a + g * b, [x])[0]
    np.testing.assert_allclose(combo, a * gf + b * gg, rtol=1e-12, atol=1e-12)


def test_appending_nodes_keeps_gradients(rng):
    tape = Tape()
    x = tape.leaf(rng.normal(size=(2, 3)))
    root = (x.tanh() @ tape.constant(rng.normal(size=(3, 1)))).sum()
    before = tape.grad(root, [x])[0]
    (x.exp() * x).sum()  # unrelated downstream nodes
    tape.leaf(np.ones(4)).square()
    np.testing.assert_array_equal(tape.grad(root, [x])[0], before)


def test_row_vector_bias_broadcast():
    tape = Tape()
    x = tape.leaf(np.ones((3, 2)))
    b = tape.leaf(np.array([1.0, -1.0]))
    gb = tape.grad((x + b).sum(), [b])[0]
    np.testing.assert_array_equal(gb, [3.0, 3.0])
    with pytest.raises(ShapeError):
        x + tape.leaf(np.ones(3))
