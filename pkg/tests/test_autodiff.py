import numpy as np
import pytest

from pointfca import autodiff as ad
from pointfca.autodiff import GradTape, NumericsError, ShapeError, Tensor
from pointfca.gradcheck import finite_diff_check
from pointfca.rng import RngStream


def t(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=grad)


class TestForward:
    def test_matmul_identity(self):
        x = t([[1.0, 2.0], [3.0, 4.0]])
        eye = t(np.eye(2))
        out = ad.matmul(eye, x)
        np.testing.assert_array_equal(out.data, x.data)

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ShapeError) as ei:
            ad.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))
        assert "(2, 3)" in str(ei.value)

    def test_softmax_symmetry(self):
        out = ad.row_softmax(t([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-7)

    def test_softmax_rows_sum_to_one(self):
        rng = RngStream(0, "sm")
        x = t(rng.normal((5, 7), std=3.0))
        out = ad.row_softmax(x)
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(5), atol=1e-6)

    def test_layer_norm_constant_row_is_zero(self):
        d = 6
        x = t(np.full((2, d), 3.7))
        out = ad.layer_norm(x, t(np.ones(d)), t(np.zeros(d)))
        np.testing.assert_array_equal(out.data, np.zeros((2, d)))

    def test_l2_normalize_rows_unit_norm(self):
        x = t(RngStream(1, "l2").normal((4, 5)))
        out = ad.l2_normalize(x)
        np.testing.assert_allclose(
            np.linalg.norm(out.data, axis=1), np.ones(4), atol=1e-6
        )

    def test_non_finite_raises(self):
        with pytest.raises(NumericsError):
            ad.log(t([0.0, 1.0]))

    def test_concat_slice_roundtrip(self):
        a, b = t([[1.0, 2.0]]), t([[3.0, 4.0], [5.0, 6.0]])
        c = ad.concat_rows(a, b)
        np.testing.assert_array_equal(ad.slice_rows(c, 1, 3).data, b.data)

    def test_max_pool_groups(self):
        x = t([[1.0, 5.0], [2.0, 4.0], [9.0, 0.0], [8.0, 1.0]])
        out = ad.max_pool_groups(x, 2)
        np.testing.assert_array_equal(out.data, [[2.0, 5.0], [9.0, 1.0]])

    def test_attention_single_token_weight_one(self):
        # with one key, softmax weight is exactly 1: output equals v
        q = t(RngStream(2, "q").normal((1, 4)))
        k = t(RngStream(2, "k").normal((1, 4)))
        v = t(RngStream(2, "v").normal((1, 4)))
        out = ad.multi_head_attention(q, k, v, heads=2)
        np.testing.assert_allclose(out.data, v.data, atol=1e-6)


class TestBackward:
    def test_square_gradient(self):
        x = t(3.0, grad=True)
        with GradTape() as tape:
            y = ad.mul(x, x)
        grads = tape.backward(y)
        np.testing.assert_allclose(grads[x], 6.0)

    def test_softmax_jacobian_row(self):
        # f(x) = softmax(x)[0] at x = [0, 0]: analytic gradient [0.25, -0.25]
        x = t([0.0, 0.0], grad=True)
        with GradTape() as tape:
            y = ad.take(ad.row_softmax(x), [0])
            y = ad.sum_all(y)
        grads = tape.backward(y)
        np.testing.assert_allclose(grads[x], [0.25, -0.25], atol=1e-7)

    def test_frozen_leaf_absent(self):
        x = t([1.0, 2.0], grad=True)
        frozen = t([3.0, 4.0], grad=False)
        with GradTape() as tape:
            y = ad.sum_all(ad.mul(x, frozen))
        grads = tape.backward(y)
        assert x in grads
        assert frozen not in grads

    def test_backward_non_scalar_errors(self):
        x = t([1.0, 2.0], grad=True)
        with GradTape() as tape:
            y = ad.scale(x, 2.0)
        with pytest.raises(NumericsError):
            tape.backward(y)

    def test_unused_leaf_gets_zeros(self):
        x = t([1.0], grad=True)
        unused = t([5.0], grad=True)
        with GradTape() as tape:
            _ = ad.scale(unused, 2.0)  # participates, not on loss path
            y = ad.sum_all(ad.mul(x, x))
        grads = tape.backward(y)
        np.testing.assert_array_equal(grads[unused], [0.0])

    def test_reused_input_accumulates(self):
        x = t([2.0], grad=True)
        with GradTape() as tape:
            y = ad.sum_all(ad.add(ad.mul(x, x), ad.scale(x, 3.0)))
        grads = tape.backward(y)
        np.testing.assert_allclose(grads[x], [7.0])  # 2x + 3

    def test_ops_outside_tape_not_recorded(self):
        x = t([1.0, 2.0], grad=True)
        _ = ad.scale(x, 2.0)
        with GradTape() as tape:
            y = ad.sum_all(x)
        assert len(tape) == 1
        tape.backward(y)


def _param(shape, seed, name):
    return Tensor(RngStream(seed, name).normal(shape, std=0.5), requires_grad=True)


def _scalarize(out, w):
    return ad.sum_all(ad.mul(out, w))


PRIMITIVE_CASES = {
    "matmul": lambda p: ad.matmul(p["a"], p["b"]),
    "transpose": lambda p: ad.transpose(p["a"]),
    "add": lambda p: ad.add(p["a"], p["a2"]),
    "sub": lambda p: ad.sub(p["a"], p["a2"]),
    "mul": lambda p: ad.mul(p["a"], p["a2"]),
    "scale": lambda p: ad.scale(p["a"], -1.7),
    "add_scalar": lambda p: ad.add_scalar(p["a"], 0.3),
    "add_row": lambda p: ad.add_row(p["a"], p["row"]),
    "row_softmax": lambda p: ad.row_softmax(p["a"]),
    "layer_norm": lambda p: ad.layer_norm(p["a"], p["row"], p["row2"]),
    "gelu": lambda p: ad.gelu(p["a"]),
    "mean_pool_rows": lambda p: ad.mean_pool_rows(p["a"]),
    "l2_normalize": lambda p: ad.l2_normalize(p["a"]),
    "concat_rows": lambda p: ad.concat_rows(p["a"], p["a2"]),
    "slice_rows": lambda p: ad.slice_rows(p["a"], 1, 3),
    "take": lambda p: ad.take(p["a"], [2, 0, 2]),
    "flatten": lambda p: ad.flatten(p["a"]),
    "log": lambda p: ad.log(ad.add_scalar(ad.gelu(p["a"]), 5.0)),
    "exp": lambda p: ad.exp(p["a"]),
    "clamp_min": lambda p: ad.clamp_min(p["a"], 0.1),
    "max_pool_groups": lambda p: ad.max_pool_groups(p["a"], 2),
    "stack_rows": lambda p: ad.stack_rows([p["row"], p["row2"], p["row"]]),
    "attention": lambda p: ad.multi_head_attention(p["q"], p["k"], p["v"], 2),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(name):
    # per-primitive soundness on random small tensors (dims <= 8)
    p = {
        "a": _param((4, 6), 10, f"{name}/a"),
        "a2": _param((4, 6), 11, f"{name}/a2"),
        "b": _param((6, 3), 12, f"{name}/b"),
        "row": _param((6,), 13, f"{name}/row"),
        "row2": _param((6,), 14, f"{name}/row2"),
        "q": _param((3, 4), 15, f"{name}/q"),
        "k": _param((5, 4), 16, f"{name}/k"),
        "v": _param((5, 4), 17, f"{name}/v"),
    }
    fn = PRIMITIVE_CASES[name]
    out_shape = fn(p).shape
    w = Tensor(RngStream(18, name).normal(out_shape))

    def loss():
        return _scalarize(fn(p), w)

    report = finite_diff_check(loss, p, eps=5e-3, tolerance=1e-2, min_coords=64)
    assert report.passed, f"{name}: {report}"


def test_finite_diff_quadratic_tight():
    x = _param((5,), 20, "quad")

    def loss():
        return ad.sum_all(ad.mul(x, x))

    for eps in (1e-3, 1e-2):
        report = finite_diff_check(loss, {"x": x}, eps=eps, tolerance=1e-4)
        assert report.passed


def test_finite_diff_constant_parameter_passes():
    x = _param((4,), 21, "cst")
    unused = _param((4,), 22, "cst2")

    def loss():
        return ad.add(ad.sum_all(ad.mul(x, x)), ad.sum_all(ad.scale(unused, 0.0)))

    report = finite_diff_check(loss, {"x": x, "unused": unused}, eps=1e-2, tolerance=1e-2)
    assert report.passed
