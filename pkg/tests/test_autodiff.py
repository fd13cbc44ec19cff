import math

import numpy as np
import pytest

from trajcast import autodiff as ad
from trajcast.autodiff import Value


def finite_diff(f, x, step=1e-5):
    """Independent central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * step)
    return g


class TestForwardEval:
    def test_identity_matvec(self):
        out = ad.matmul(Value(np.eye(2)), Value([3.0, 4.0]))
        assert np.allclose(ad.forward_eval(out), [3.0, 4.0])

    def test_zero_matrix_annihilates(self):
        out = ad.matmul(Value(np.zeros((3, 3))), Value([1.0, -2.0, 5.0]))
        assert np.array_equal(out.data, np.zeros(3))

    def test_hand_matvec(self):
        out = ad.matmul(Value([[1.0, 2.0], [3.0, 4.0]]), Value([1.0, 1.0]))
        assert np.allclose(out.data, [3.0, 7.0])

    def test_shape_mismatch_names_shapes_and_op(self):
        with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 2\).*\(3,\)"):
            ad.matmul(Value(np.eye(2)), Value([1.0, 2.0, 3.0]))
        with pytest.raises(ad.ShapeError, match="add"):
            ad.add(Value([1.0, 2.0]), Value([1.0, 2.0, 3.0]))

    def test_rank_limit(self):
        with pytest.raises(ad.ShapeError):
            Value(np.zeros((2, 2, 2, 2)))


class TestBackward:
    def test_identity_derivative(self):
        x = Value(3.0, requires_grad=True)
        x.backward()
        assert x.grad == pytest.approx(1.0)

    def test_sigmoid_at_zero(self):
        x = Value(0.0, requires_grad=True)
        y = ad.sigmoid(x)
        y.backward()
        assert float(x.grad) == pytest.approx(0.25, abs=1e-12)

    def test_matvec_sum_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        A0 = rng.standard_normal((3, 3))
        v0 = rng.standard_normal(3)
        A = Value(A0, requires_grad=True)
        v = Value(v0, requires_grad=True)
        root = ad.vsum(ad.matmul(A, v))
        root.backward()

        gA = finite_diff(lambda a: float(np.sum(a @ v0)), A0.copy())
        gv = finite_diff(lambda w: float(np.sum(A0 @ w)), v0.copy())
        assert np.max(np.abs(A.grad - gA) / np.maximum(np.abs(gA), 1.0)) < 1e-4
        assert np.max(np.abs(v.grad - gv) / np.maximum(np.abs(gv), 1.0)) < 1e-4

    def test_non_scalar_root_rejected(self):
        v = Value([1.0, 2.0], requires_grad=True)
        with pytest.raises(ad.ShapeError):
            ad.backward_grad(v)

    def test_two_consumers_accumulate(self):
        x = Value(2.0, requires_grad=True)
        y = ad.add(ad.mul(x, 3.0), ad.mul(x, 5.0))
        y.backward()
        assert float(x.grad) == pytest.approx(8.0)

    def test_each_node_visited_once(self):
        # diamond graph: shared node feeds two consumers of the root
        x = Value(1.5, requires_grad=True)
        s = ad.mul(x, x)
        root = ad.add(s, s)
        root.backward()
        assert float(x.grad) == pytest.approx(2 * 2 * 1.5)


@pytest.mark.parametrize("seed", range(10))
def test_primitive_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(5)
    m0 = rng.standard_normal((4, 5))

    cases = {
        "tanh": (lambda x: ad.vsum(ad.tanh(x)), v0),
        "sigmoid": (lambda x: ad.vsum(ad.sigmoid(x)), v0),
        "relu": (lambda x: ad.vsum(ad.relu(x)), v0 + 0.05),
        "exp": (lambda x: ad.vsum(ad.exp(x)), v0),
        "log": (lambda x: ad.vsum(ad.log(x)), np.abs(v0) + 0.5),
        "softmax": (lambda x: ad.dot(ad.softmax(x), Value(np.arange(5.0))), v0),
        "logsumexp": (lambda x: ad.logsumexp(x), v0),
        "mean": (lambda x: ad.vmean(ad.mul(x, x)), v0),
        "narrow": (lambda x: ad.vsum(ad.narrow(x, 1, 4)), v0),
        "matmul": (lambda x: ad.vsum(ad.tanh(ad.matmul(x, Value(v0)))), m0),
        "flatten": (lambda x: ad.vsum(ad.flatten(x)), m0),
        "bias_row": (lambda x: ad.vsum(ad.add(Value(m0[:, :5]), x)), v0),
    }
    for name, (build, x0) in cases.items():
        leaf = Value(x0.copy(), requires_grad=True, name=name)
        report = ad.grad_check(lambda: build(leaf), [leaf], step=1e-5, tol=1e-4)
        assert report.passed, f"{name}: {report}"


class TestAdam:
    def test_zero_gradients_no_op(self):
        p = Value([1.0, -2.0], requires_grad=True, name="p")
        params = {"p": p}
        state = ad.AdamState(params, learning_rate=0.05)
        before = p.data.copy()
        for _ in range(7):
            ad.zero_grad(params)
            ad.adam_step(params, state)
        assert np.array_equal(p.data, before)

    def test_first_step_magnitude_is_learning_rate(self):
        p = Value(0.0, requires_grad=True, name="p")
        params = {"p": p}
        state = ad.AdamState(params, learning_rate=0.002)
        p.grad = np.asarray(1.0)
        ad.adam_step(params, state)
        assert abs(float(p.data)) == pytest.approx(0.002, rel=1e-6)

    def test_missing_gradient_is_error(self):
        p = Value(0.0, requires_grad=True, name="p")
        params = {"p": p}
        state = ad.AdamState(params)
        with pytest.raises(ValueError, match="p"):
            ad.adam_step(params, state)

    def test_converges_on_quadratic(self):
        p = Value(0.0, requires_grad=True, name="x")
        params = {"x": p}
        state = ad.AdamState(params, learning_rate=0.1)
        for _ in range(100):
            ad.zero_grad(params)
            diff = ad.sub(p, 3.0)
            loss = ad.mul(diff, diff)
            loss.backward()
            ad.adam_step(params, state)
        assert abs(float(p.data) - 3.0) < 0.1


class TestGradCheck:
    def test_square(self):
        x = Value(2.0, requires_grad=True, name="x")
        report = ad.grad_check(lambda: ad.mul(x, x), [x])
        assert report.passed
        assert report.per_leaf["x"] < 1e-6

    def test_wrong_gradient_names_leaf(self):
        x = Value(1.0, requires_grad=True, name="bad_leaf")

        def wrong_square():
            y = x.data * x.data

            def backward(g):
                x.accumulate(g * 3.0 * x.data)  # wrong: claims d(x^2)/dx = 3x

            return ad.make_op(np.asarray(y), (x,), backward)

        report = ad.grad_check(wrong_square, [x])
        assert not report.passed
        assert "bad_leaf" in report.failing_leaves()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_reported(self):
        x = Value(0.0, requires_grad=True, name="x")
        report = ad.grad_check(lambda: ad.log(x), [x])
        assert not report.passed
        assert report.non_finite and report.non_finite[0][0] == "x"


def test_clip_global_norm():
    a = Value([3.0, 0.0], requires_grad=True, name="a")
    b = Value([0.0, 4.0], requires_grad=True, name="b")
    a.grad = np.array([3.0, 0.0])
    b.grad = np.array([0.0, 4.0])
    norm = ad.clip_global_norm({"a": a, "b": b}, 1.0)
    assert norm == pytest.approx(5.0)
    total = math.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2))
    assert total == pytest.approx(1.0)


def test_detach_blocks_gradient():
    x = Value(2.0, requires_grad=True)
    y = ad.mul(x.detach(), 5.0)
    assert not y.requires_grad


def test_concat_and_scalar_broadcast():
    a = Value([1.0, 2.0], requires_grad=True, name="a")
    s = Value(3.0, requires_grad=True, name="s")
    out = ad.vsum(ad.mul(ad.concat([a, s]), 2.0))
    out.backward()
    assert np.allclose(a.grad, [2.0, 2.0])
    assert float(s.grad) == pytest.approx(2.0)
    scaled = ad.mul(a, s)  # scalar Value broadcast
    assert np.allclose(scaled.data, [3.0, 6.0])
