import numpy as np
import pytest

from vidfill import autodiff as ad
from vidfill.autodiff import NonFiniteError, ShapeError, Tensor

from oracles import gradcheck, rel_err, straight_line_attention


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (3, 3))
    out = ad.matmul(Tensor(np.eye(3)), Tensor(a))
    assert np.allclose(out.data, a, atol=1e-6)


def test_matmul_example():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0, 0.0], [0.0, 1.0]])
    assert np.array_equal(ad.matmul(a, b).data, [[1, 2], [3, 4]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


def test_matmul_gradient_matches_ones_bt():
    rng = np.random.default_rng(1)
    a = Tensor(rng.uniform(-1, 1, (3, 4)).astype(np.float64), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (4, 2)).astype(np.float64), requires_grad=True)
    ad.backward(ad.tsum(ad.matmul(a, b)))
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T, atol=1e-9)
    err = gradcheck(lambda ts: ad.tsum(ad.matmul(ts[0], ts[1])), [a.data, b.data])
    assert err < 1e-4


def test_softmax_uniform():
    out = ad.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
    assert np.allclose(out.data, [1 / 3] * 3, atol=1e-6)


def test_softmax_stabilized_no_overflow():
    out = ad.softmax(Tensor([1000.0, 0.0]), axis=0)
    assert abs(out.data[0] - 1.0) < 1e-12
    assert abs(out.data[1]) < 1e-12


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    for scale in (1.0, 100.0, 1e30):
        x = Tensor(rng.uniform(-1, 1, (5, 7)) * scale)
        out = ad.softmax(x, axis=1)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
        assert (out.data > 0).all() or scale > 1e20  # huge scales may underflow to 0


def test_softmax_gradient():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, 4)
    w = rng.uniform(-1, 1, 4)
    err = gradcheck(lambda ts: ad.tsum(ad.mul(ad.softmax(ts[0], 0), Tensor(w))), [x])
    assert err < 1e-4


def test_layer_norm_constant_row_is_zero():
    out = ad.layer_norm(Tensor(np.full((2, 5), 3.7)), Tensor(np.ones(5)), Tensor(np.zeros(5)))
    assert np.allclose(out.data, 0.0, atol=1e-3)


def test_layer_norm_zero_gamma_gives_beta():
    rng = np.random.default_rng(4)
    x = Tensor(rng.uniform(-1, 1, (3, 6)))
    beta = rng.uniform(-1, 1, 6)
    out = ad.layer_norm(x, Tensor(np.zeros(6)), Tensor(beta))
    assert np.allclose(out.data, np.broadcast_to(beta, (3, 6)), atol=1e-6)


def test_layer_norm_standardizes():
    rng = np.random.default_rng(5)
    x = Tensor(rng.uniform(-1, 1, (4, 32)))
    out = ad.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32)))
    assert np.abs(out.data.mean(axis=-1)).max() < 1e-5
    assert np.abs(out.data.var(axis=-1) - 1.0).max() < 1e-4


def test_layer_norm_gradient():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (2, 5))
    gamma = rng.uniform(0.5, 1.5, 5)
    beta = rng.uniform(-0.5, 0.5, 5)
    w = rng.uniform(-1, 1, (2, 5))

    def build(ts):
        return ad.tsum(ad.mul(ad.layer_norm(ts[0], ts[1], ts[2]), Tensor(w)))

    assert gradcheck(build, [x, gamma, beta]) < 1e-4


def test_layer_norm_eps_validation():
    with pytest.raises(ValueError):
        ad.layer_norm(Tensor(np.zeros((1, 4))), Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=0.0)


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(7)
    q = Tensor(rng.uniform(-1, 1, (5, 4)))
    k = Tensor(rng.uniform(-1, 1, (1, 4)))
    v = Tensor(rng.uniform(-1, 1, (1, 4)))
    out = ad.scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, np.broadcast_to(v.data, (5, 4)), atol=1e-6)


def test_attention_constant_values():
    rng = np.random.default_rng(8)
    q = Tensor(rng.uniform(-1, 1, (3, 4)))
    k = Tensor(rng.uniform(-1, 1, (6, 4)))
    v = Tensor(np.tile(rng.uniform(-1, 1, (1, 4)), (6, 1)))
    out = ad.scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, np.broadcast_to(v.data[0], (3, 4)), atol=1e-6)


def test_attention_matches_straight_line_oracle():
    rng = np.random.default_rng(9)
    q = rng.uniform(-1, 1, (3, 4))
    k = rng.uniform(-1, 1, (3, 4))
    v = rng.uniform(-1, 1, (3, 4))
    out = ad.scaled_dot_attention(Tensor(q.astype(np.float64)), Tensor(k), Tensor(v))
    assert np.abs(out.data - straight_line_attention(q, k, v)).max() < 1e-6


def test_attention_dim_mismatch():
    with pytest.raises(ShapeError):
        ad.scaled_dot_attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))),
                                Tensor(np.zeros((2, 4))))


def test_backward_sum_of_squares():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    ad.backward(ad.tsum(ad.mul(x, x)))
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_constant_leaves_zero_grads():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    c = Tensor(np.array(5.0))
    loss = ad.tsum(ad.mul(x, 0.0)) + c
    ad.backward(loss)
    assert np.allclose(x.grad, 0.0)


def test_backward_requires_scalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ShapeError):
        ad.backward(ad.mul(x, 2.0))


def test_backward_accumulates_until_reset():
    x = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    for expected in (2.0, 4.0):
        ad.backward(ad.tsum(ad.mul(x, 2.0)))
        assert np.allclose(x.grad, expected)
    x.zero_grad()
    assert x.grad is None


def test_composite_graph_gradient():
    rng = np.random.default_rng(10)
    x = rng.uniform(-1, 1, (2, 6))
    w = rng.uniform(-1, 1, (6, 6))
    probe = rng.uniform(-1, 1, (2, 6))

    def build(ts):
        h = ad.matmul(ts[0], ts[1])
        h = ad.layer_norm(h, Tensor(np.ones(6)), Tensor(np.zeros(6)))
        return ad.tsum(ad.mul(ad.softmax(h, axis=1), Tensor(probe)))

    assert gradcheck(build, [x, w]) < 1e-4


def test_nonfinite_forward_raises():
    big = Tensor(np.array([1e30], dtype=np.float32))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        ad.mul(ad.mul(big, big), big)  # overflows float32


def test_forward_deterministic():
    rng = np.random.default_rng(11)
    a = rng.uniform(-1, 1, (16, 16)).astype(np.float32)
    b = rng.uniform(-1, 1, (16, 16)).astype(np.float32)
    runs = [ad.matmul(ad.softmax(Tensor(a), 1), Tensor(b)).data for _ in range(2)]
    assert np.array_equal(runs[0], runs[1])


def test_shape_invariant():
    t = Tensor(np.zeros((2, 3, 4)))
    assert t.size == 24 and t.shape == (2, 3, 4)


def test_take_flat_and_gather_rows():
    rng = np.random.default_rng(12)
    x = rng.uniform(-1, 1, (4, 3))
    rows = np.array([2, 0])
    w = rng.uniform(-1, 1, (2, 3))

    def build(ts):
        return ad.tsum(ad.mul(ad.gather_rows(ts[0], rows), Tensor(w)))

    assert gradcheck(build, [x]) < 1e-4
    out = ad.gather_rows(Tensor(x), rows)
    assert np.allclose(out.data, x[rows])


def test_take_flat_range_check():
    with pytest.raises(ShapeError):
        ad.take_flat(Tensor(np.zeros(3)), np.array([3]))


def test_concat_narrow_roundtrip():
    rng = np.random.default_rng(13)
    a = Tensor(rng.uniform(-1, 1, (2, 3)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    cat = ad.concat([a, b], axis=0)
    back = ad.narrow(cat, 0, 0, 2)
    assert np.array_equal(back.data, a.data)
    ad.backward(ad.tsum(back))
    assert np.allclose(a.grad, 1.0) and np.allclose(b.grad, 0.0)


def test_bmm_matches_loop():
    rng = np.random.default_rng(14)
    a = rng.uniform(-1, 1, (3, 2, 4))
    b = rng.uniform(-1, 1, (3, 4, 5))
    out = ad.bmm(Tensor(a), Tensor(b))
    for i in range(3):
        assert np.allclose(out.data[i], a[i] @ b[i], atol=1e-6)
    w = rng.uniform(-1, 1, (3, 2, 5))
    err = gradcheck(lambda ts: ad.tsum(ad.mul(ad.bmm(ts[0], ts[1]), Tensor(w))), [a, b])
    assert err < 1e-4


def test_silu_gradient():
    rng = np.random.default_rng(15)
    x = rng.uniform(-1, 1, 8)
    assert gradcheck(lambda ts: ad.tsum(ad.silu(ts[0])), [x]) < 1e-4


def test_mean_and_broadcast_ops():
    rng = np.random.default_rng(16)
    x = rng.uniform(-1, 1, (3, 4))
    bias = rng.uniform(-1, 1, (1, 4))

    def build(ts):
        return ad.tmean(ad.mul(ad.add(ts[0], ts[1]), ad.sub(ts[0], ts[1])))

    assert gradcheck(build, [x, bias]) < 1e-4
