import zlib

import numpy as np
import pytest

from smartattack import autograd as ag
from smartattack.autograd import AdamState, Tensor, adam_step, grad_check
from smartattack.errors import DomainError, GraphError, OptimizerError
from smartattack.skeleton import standard_skeleton

CHILD, PARENT = standard_skeleton().bone_index_arrays()

# each entry: name -> (builder(rng) -> list of input arrays, fn(*tensors) -> scalar Tensor)
# a fixed random projection makes every output coordinate matter in the scalar
def _proj(shape, seed=7):
    return np.random.default_rng(seed).uniform(-1, 1, shape)


def _reduce(t):
    return ag.tsum(ag.mul(t, _proj(t.shape)))


PRIMITIVES = {
    "add": (lambda r: [r.uniform(-1, 1, (3, 4)), r.uniform(-1, 1, (4,))],
            lambda a, b: _reduce(ag.add(a, b))),
    "sub": (lambda r: [r.uniform(-1, 1, (2, 3, 4)), r.uniform(-1, 1, (3, 1))],
            lambda a, b: _reduce(ag.sub(a, b))),
    "mul": (lambda r: [r.uniform(-1, 1, (3, 4)), r.uniform(-1, 1, (3, 4))],
            lambda a, b: _reduce(ag.mul(a, b))),
    "scale": (lambda r: [r.uniform(-1, 1, (5,))], lambda a: _reduce(ag.scale(a, -2.5))),
    "matmul": (lambda r: [r.uniform(-1, 1, (2, 3, 4)), r.uniform(-1, 1, (4, 5))],
               lambda a, b: _reduce(ag.matmul(a, b))),
    "conv1d": (lambda r: [r.uniform(-1, 1, (2, 9, 4)), r.uniform(-1, 1, (20, 3)), r.uniform(-1, 1, (3,))],
               lambda x, w, b: _reduce(ag.conv1d(x, w, b))),
    "tanh": (lambda r: [r.uniform(-1, 1, (4, 3))], lambda a: _reduce(ag.tanh(a))),
    "relu": (lambda r: [r.uniform(-1, 1, (4, 3))], lambda a: _reduce(ag.relu(a))),
    "exp": (lambda r: [r.uniform(-1, 1, (4, 3))], lambda a: _reduce(ag.exp(a))),
    "log": (lambda r: [r.uniform(0.2, 1, (4, 3))], lambda a: _reduce(ag.log(a))),
    "sum": (lambda r: [r.uniform(-1, 1, (3, 4, 2))], lambda a: _reduce(ag.tsum(a, axis=1))),
    "mean": (lambda r: [r.uniform(-1, 1, (3, 4, 2))], lambda a: _reduce(ag.mean(a, axis=(0, 2)))),
    "square": (lambda r: [r.uniform(-1, 1, (6,))], lambda a: _reduce(ag.square(a))),
    "slice": (lambda r: [r.uniform(-1, 1, (5, 6))], lambda a: _reduce(a[1:4, ::2])),
    "concat": (lambda r: [r.uniform(-1, 1, (2, 3)), r.uniform(-1, 1, (2, 5))],
               lambda a, b: _reduce(ag.concat([a, b], axis=1))),
    "broadcast": (lambda r: [r.uniform(-1, 1, (1, 4))], lambda a: _reduce(ag.broadcast_to(a, (3, 4)))),
    "reshape": (lambda r: [r.uniform(-1, 1, (3, 4))], lambda a: _reduce(ag.reshape(a, (2, 6)))),
    "transpose": (lambda r: [r.uniform(-1, 1, (2, 3, 4))], lambda a: _reduce(ag.transpose(a, (2, 0, 1)))),
    "softmax": (lambda r: [r.uniform(-1, 1, (3, 8))], lambda a: _reduce(ag.softmax(a, axis=-1))),
    "log_softmax": (lambda r: [r.uniform(-1, 1, (3, 8))], lambda a: _reduce(ag.log_softmax(a, axis=-1))),
    "l2sq": (lambda r: [r.uniform(-1, 1, (3, 5))], lambda a: ag.l2sq(a)),
    "diff2": (lambda r: [r.uniform(-1, 1, (2, 10, 4))], lambda a: _reduce(ag.diff(a, 2))),
    "diff4": (lambda r: [r.uniform(-1, 1, (10, 4))], lambda a: _reduce(ag.diff(a, 4))),
    "bone_lengths": (lambda r: [r.uniform(-1, 1, (3, 75))],
                     lambda a: _reduce(ag.bone_lengths(a, CHILD, PARENT))),
}


def _check_every_input(build, fn, rng, h=1e-5):
    inputs = build(rng)
    worst = 0.0
    for i in range(len(inputs)):
        def f(t, i=i):
            args = [Tensor(x) for x in inputs]
            args[i] = t
            return fn(*args)
        worst = max(worst, grad_check(f, inputs[i], h=h).max_rel_error)
    return worst


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(name):
    build, fn = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    trials = 100
    worst = max(_check_every_input(build, fn, rng) for _ in range(trials))
    assert worst < 1e-5, f"{name}: max relative error {worst:.2e}"


class TestForwardValues:
    def test_uniform_softmax(self):
        p = ag.softmax(Tensor(np.full(8, 1.7))).data
        np.testing.assert_array_equal(p, np.full(8, 0.125))

    def test_softmax_is_a_distribution(self, rng):
        for _ in range(50):
            p = ag.softmax(Tensor(rng.normal(0, 30, (4, 8))), axis=-1).data
            assert (p >= 0).all()
            np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    def test_log_softmax_stable_for_huge_logits(self):
        z = ag.log_softmax(Tensor([1000.0, 0.0, -1000.0])).data
        assert np.isfinite(z).all()
        assert z[0] == 0.0

    def test_conv1d_against_direct_sum(self, rng):
        x = rng.normal(size=(2, 7, 3))
        w = rng.normal(size=(5 * 3, 4))
        y = ag.conv1d(Tensor(x), Tensor(w)).data
        xp = np.pad(x, ((0, 0), (2, 2), (0, 0)))
        ref = np.zeros((2, 7, 4))
        for t in range(7):
            for i in range(5):
                ref[:, t] += xp[:, t + i] @ w[i * 3:(i + 1) * 3]
        np.testing.assert_allclose(y, ref, atol=1e-12)


class TestBackward:
    def test_identity(self):
        x = Tensor(3.0, requires_grad=True)
        ag.backward(ag.scale(x, 1.0))
        assert x.grad == 1.0

    def test_squared_norm(self, rng):
        v = rng.normal(size=(4, 5))
        x = Tensor(v, requires_grad=True)
        ag.backward(ag.l2sq(x))
        np.testing.assert_array_equal(x.grad, 2 * v)

    def test_sum_gives_ones(self):
        x = Tensor(np.zeros((3, 2)), requires_grad=True)
        ag.backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((3, 2)))

    def test_matmul_rule(self, rng):
        a, b, g = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        ag.backward(ag.tsum(ag.mul(ag.matmul(ta, tb), g)))
        np.testing.assert_allclose(ta.grad, g @ b.T, atol=1e-14)
        np.testing.assert_allclose(tb.grad, a.T @ g, atol=1e-14)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GraphError):
            ag.backward(ag.scale(x, 2.0))

    def test_single_shot_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = ag.l2sq(x)
        ag.backward(loss)
        with pytest.raises(GraphError, match="consumed"):
            ag.backward(loss)

    def test_reused_subgraph_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        shared = ag.tanh(x)
        ag.backward(ag.tsum(shared))
        with pytest.raises(GraphError):
            ag.backward(ag.l2sq(shared))

    def test_diamond_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        y = ag.mul(x, x)
        ag.backward(ag.add(y, y))
        assert x.grad == 8.0

    def test_deterministic(self, rng):
        v = rng.normal(size=(2, 12, 75))
        w = rng.normal(size=(5 * 75, 6))
        out = []
        for _ in range(2):
            x = Tensor(v, requires_grad=True)
            loss = ag.l2sq(ag.tanh(ag.conv1d(x, w)))
            ag.backward(loss)
            out.append((loss.data.tobytes(), x.grad.tobytes()))
        assert out[0] == out[1]

    def test_three_layer_mlp_parameters(self, rng):
        x = rng.normal(size=(6, 5))
        shapes = {"W1": (5, 7), "W2": (7, 7), "W3": (7, 3)}
        params = {k: rng.normal(0, 0.6, s) for k, s in shapes.items()}
        labels = np.eye(3)[rng.integers(0, 3, 6)]

        def loss_with(name):
            def f(t):
                p = {k: Tensor(v) for k, v in params.items()}
                p[name] = t
                h = ag.tanh(ag.matmul(Tensor(x), p["W1"]))
                h = ag.tanh(ag.matmul(h, p["W2"]))
                return ag.scale(ag.tsum(ag.mul(ag.log_softmax(ag.matmul(h, p["W3"])), labels)), -1.0)
            return f

        for name in shapes:
            assert grad_check(loss_with(name), params[name]).max_rel_error < 1e-4


class TestErrors:
    def test_shape_mismatch(self):
        with pytest.raises(GraphError):
            ag.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
        with pytest.raises(GraphError):
            ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(GraphError):
            ag.conv1d(Tensor(np.ones((1, 5, 3))), Tensor(np.ones((10, 2))))

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_log_domain(self, bad):
        with pytest.raises(DomainError):
            ag.log(Tensor([1.0, bad]))

    def test_tensor_data_is_frozen(self):
        t = Tensor(np.zeros(3))
        with pytest.raises(ValueError):
            t.data[0] = 1


class TestGradCheck:
    def test_squared_norm(self, rng):
        report = grad_check(ag.l2sq, rng.normal(size=(4, 6)))
        assert report.passed
        assert report.max_rel_error < 1e-7

    def test_constant_function(self):
        report = grad_check(lambda t: ag.scale(ag.tsum(t), 0.0), np.ones(5))
        np.testing.assert_array_equal(report.analytic, 0)
        np.testing.assert_array_equal(report.numeric, 0)
        assert report.passed

    def test_batched_numeric_path_agrees(self, rng):
        w = rng.normal(size=(5, 4))
        point = rng.normal(size=(3, 5))
        fn = lambda t: ag.l2sq(ag.tanh(ag.matmul(t, w)))
        batch = lambda xs: (np.tanh(xs @ w) ** 2).sum(axis=(1, 2))
        a = grad_check(fn, point)
        b = grad_check(fn, point, batch_fn=batch)
        np.testing.assert_allclose(a.numeric, b.numeric, rtol=1e-9, atol=1e-12)

    def test_detects_wrong_gradient(self):
        # a constant folded in from raw data changes the value but not the tape
        point = np.full(3, 2.0)
        bad = grad_check(lambda t: ag.add(ag.tsum(t), float(np.sum(t.data ** 2))), point)
        assert not bad.passed


class TestAdam:
    def test_first_step_is_signed_lr(self, rng):
        g = rng.normal(size=10)
        p = rng.normal(size=10)
        state = AdamState.zeros_like(p, lr=0.01)
        new, st = adam_step(p, g, state)
        expected = p - 0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(new, expected, rtol=0, atol=1e-15)
        assert st.step == 1
        np.testing.assert_allclose(st.m, 0.1 * g)
        np.testing.assert_allclose(st.v, 0.001 * g * g)

    def test_second_step_by_hand(self):
        p, g1, g2 = np.array([1.0]), np.array([0.5]), np.array([-0.25])
        s = AdamState.zeros_like(p, lr=0.1)
        p1, s = adam_step(p, g1, s)
        p2, s = adam_step(p1, g2, s)
        m = 0.9 * 0.05 + 0.1 * -0.25
        v = 0.999 * 0.001 * 0.25 + 0.001 * 0.0625
        m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.999 ** 2)
        np.testing.assert_allclose(p2, p1 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8), atol=1e-15)

    def test_zero_gradient_leaves_param(self, rng):
        p = rng.normal(size=4)
        new, _ = adam_step(p, np.zeros(4), AdamState.zeros_like(p))
        np.testing.assert_array_equal(new, p)

    def test_deterministic(self, rng):
        p, g = rng.normal(size=6), rng.normal(size=6)
        s = AdamState.zeros_like(p)
        a = adam_step(p, g, s)
        b = adam_step(p, g, s)
        assert a[0].tobytes() == b[0].tobytes()

    def test_non_finite_gradient(self):
        p = np.zeros(3)
        with pytest.raises(OptimizerError):
            adam_step(p, np.array([0.0, np.inf, 1.0]), AdamState.zeros_like(p))

    def test_mask_freezes_rows(self, rng):
        p, g = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        new, st = adam_step(p, g, AdamState.zeros_like(p), mask=np.array([[True], [False]]))
        assert np.array_equal(new[1], p[1]) and np.all(st.m[1] == 0)
        assert not np.array_equal(new[0], p[0])


def test_grad_check_coordinate_subset(rng):
    from smartattack.autograd.gradcheck import numeric_gradient
    x = rng.normal(size=(4, 5))
    fn = lambda t: ag.tsum(ag.mul(t, t))
    num = numeric_gradient(fn, x, coords=[0, 7, 7, 19])
    assert np.isnan(num).sum() == 17
    np.testing.assert_allclose(num.ravel()[[0, 7, 19]], 2 * x.ravel()[[0, 7, 19]], rtol=1e-8)
    assert grad_check(fn, x, coords=[3, 11]).passed
    detached = lambda t: ag.tsum(ag.mul(Tensor(t.data), t))
    assert not grad_check(detached, x, coords=[3, 11]).passed


def test_grad_check_refines_across_kinks():
    x = np.array([3e-6, -0.5, 0.7])
    fn = lambda t: ag.tsum(ag.relu(t))
    assert not grad_check(fn, x, h=1e-5, refine=0).passed
    assert grad_check(fn, x, h=1e-5).passed
    # a wrong gradient stays wrong at every step size
    doubled = lambda t: ag.tsum(ag.mul(Tensor(t.data), t))
    assert not grad_check(doubled, x, h=1e-5).passed
