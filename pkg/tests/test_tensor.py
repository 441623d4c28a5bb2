import numpy as np
import pytest

from svcomplete import tensor as T
from svcomplete.tensor import Adam, ShapeError, Tensor

from _oracles import conv_transpose_oracle, finite_diff_grads, max_rel_err


def test_softmax_uniform_logits():
    out = T.softmax(Tensor(np.zeros(3))).data
    assert np.allclose(out, [1 / 3, 1 / 3, 1 / 3])
    assert out[0] == out[1] == out[2]


def test_softmax_row_stochastic_and_stable():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(scale=200.0, size=(6, 9)))  # large logits
    y = T.softmax(x, axis=1).data
    assert np.all(y >= 0)
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(np.isfinite(y))


def test_matmul_identity():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 3))
    out = T.matmul(Tensor(np.eye(3)), Tensor(a)).data
    assert np.array_equal(out, a.astype(out.dtype))


def test_matmul_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(3, 4\).*\(5, 2\)"):
        T.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 2))))


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(4, dtype=np.float64), requires_grad=True)
    T.sum_reduce(x).backward()
    assert np.array_equal(x.grad, np.ones(4))


def test_backward_square_analytic():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.sum_reduce(x * x).backward()
    assert np.allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        (x * 2).backward()


def test_backward_accumulates_without_reset():
    x = Tensor(np.ones(3), requires_grad=True)
    T.sum_reduce(x).backward()
    T.sum_reduce(x).backward()
    assert np.array_equal(x.grad, 2 * np.ones(3))


def test_conv_transpose_matches_scatter_oracle():
    rng = np.random.default_rng(2)
    for stride in (1, 2, 3):
        x = rng.normal(size=(3, 5))
        w = rng.normal(size=(3, 4, 3))
        got = T.conv_transpose_1d(Tensor(x), Tensor(w), stride=stride).data
        want = conv_transpose_oracle(x, w, stride)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-6


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    with T.precision(np.float64):
        w1 = Tensor(rng.normal(size=(4, 8)) * 0.5, requires_grad=True)
        b1 = Tensor(rng.normal(size=8) * 0.1, requires_grad=True)
        w2 = Tensor(rng.normal(size=(8, 6)) * 0.5, requires_grad=True)
        w3 = Tensor(rng.normal(size=(6, 2)) * 0.5, requires_grad=True)
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        weights = rng.uniform(0.5, 1.5, size=(5, 2))

        def forward():
            h = T.relu(T.linear(x, w1, b1))
            h = T.relu(T.matmul(h, w2))
            return float(np.sum(T.matmul(h, w3).data * weights))

        out = T.matmul(T.relu(T.matmul(T.relu(T.linear(x, w1, b1)), w2)), w3)
        T.sum_reduce(out * Tensor(weights)).backward()
        params = [x, w1, b1, w2, w3]
        numeric = finite_diff_grads(forward, params)
        assert max_rel_err([p.grad for p in params], numeric) < 1e-4


def test_relu_gradcheck_exact_in_linear_region():
    # integer inputs and a power-of-two step keep every float op exact
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), requires_grad=True, dtype=np.float64)
    T.sum_reduce(T.relu(x)).backward()
    numeric = finite_diff_grads(lambda: float(np.sum(T.relu(x).data)), [x], h=2.0**-20)
    assert np.array_equal(x.grad, numeric[0])
    assert max_rel_err([x.grad], numeric) == 0.0


def test_grad_check_registry_all_ops_pass():
    for name in T.GRAD_CHECK_OPS:
        worst = T.grad_check(name, tolerance=1e-4)
        assert worst < 1e-4, f"{name}: {worst}"


def test_grad_check_specific_calls():
    assert T.grad_check("softmax", ((5,),)) < 1e-4
    assert T.grad_check("matmul", ((3, 4), (4, 2))) < 1e-4


def test_grad_check_unknown_op_errors():
    with pytest.raises(ValueError, match="unknown op"):
        T.grad_check("not_a_real_op")


def test_sinusoidal_zero_position_row():
    out = T.sinusoidal_encoding(Tensor(np.zeros(2)), 8).data
    assert np.array_equal(out[0], np.tile([0.0, 1.0], 4))


def test_gather_rows_backward_scatters():
    x = Tensor(np.arange(6, dtype=np.float64).reshape(3, 2), requires_grad=True)
    T.sum_reduce(T.gather_rows(x, np.array([0, 0, 2]))).backward()
    assert np.array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_max_reduce_routes_to_first_max():
    x = Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True)
    T.sum_reduce(T.max_reduce(x, axis=1)).backward()
    assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_concat_shapes_and_backward():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    out = T.concat([a, b], axis=1)
    assert out.shape == (2, 5)
    T.sum_reduce(out * Tensor(np.arange(10, dtype=out.dtype).reshape(2, 5))).backward()
    assert np.array_equal(a.grad, [[0.0, 1.0], [5.0, 6.0]])
    with pytest.raises(ShapeError, match="concat"):
        T.concat([a, Tensor(np.ones((3, 2)))], axis=1)


def test_forward_bit_identical_across_runs():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(16, 16))
    w = rng.normal(size=(16, 16))

    def run():
        t = T.softmax(T.matmul(Tensor(x), Tensor(w)), axis=1)
        return T.mean_reduce(T.relu(t)).data.copy()

    assert np.array_equal(run(), run())


def test_sqrt_subgradient_zero_at_zero():
    x = Tensor(np.array([0.0, 4.0]), requires_grad=True)
    T.sum_reduce(T.sqrt(x)).backward()
    assert np.array_equal(x.grad, [0.0, 0.25])
    with pytest.raises(ValueError, match="negative"):
        T.sqrt(Tensor(np.array([-1.0])))


class TestAdam:
    def test_zero_gradients_leave_params_unchanged(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        opt = Adam([p], lr=0.1)
        before = p.data.copy()
        opt.step()
        assert np.array_equal(p.data, before)
        assert opt.state.t == 1

    def test_first_step_with_unit_grad_moves_by_lr(self):
        p = Tensor(np.full(3, 5.0), requires_grad=True)
        p.grad = np.ones(3)
        Adam([p], lr=0.001).step()
        assert np.allclose(5.0 - p.data, 0.001, atol=1e-8)

    def test_missing_grad_raises(self):
        p = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(ValueError, match="no grad"):
            Adam([p], lr=0.1).step()

    def test_converges_on_quadratic(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.uniform(-1, 1, size=3), requires_grad=True)
        opt = Adam([x], lr=0.05)
        for _ in range(200):
            opt.zero_grad()
            T.sum_reduce(x * x).backward()
            opt.step()
        assert np.linalg.norm(x.data) < 0.05

    def test_step_counter_increments_by_one(self):
        p = Tensor(np.ones(1), requires_grad=True)
        opt = Adam([p], lr=0.1)
        for expected in (1, 2, 3):
            p.grad = np.ones(1)
            opt.step()
            assert opt.state.t == expected


def test_backward_populates_finite_grads_through_deep_graph():
    rng = np.random.default_rng(7)
    with T.precision(np.float64):
        params = [Tensor(rng.normal(size=(6, 6)) * 0.3, requires_grad=True) for _ in range(4)]
        x = Tensor(rng.normal(size=(5, 6)))
        h = x
        for w in params:
            h = T.softmax(T.matmul(h, w), axis=1)
        T.mean_reduce(h).backward()
    for p in params:
        assert p.grad is not None
        assert p.grad.shape == p.data.shape
        assert np.all(np.isfinite(p.grad))
