import math

import numpy as np
import pytest

from vulnmoe import autograd as ag
from vulnmoe.autograd import ShapeError, Tensor


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(ag.matmul(a, b).data, [[3.0, 4.0], [5.0, 6.0]])


def test_matmul_zero():
    out = ag.matmul(Tensor([[1.0, 2.0]]), Tensor([[0.0], [0.0]]))
    assert np.array_equal(out.data, [[0.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ag.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradcheck_3x4_4x2():
    rng = np.random.default_rng(0)
    b = Tensor(rng.normal(size=(4, 2)))
    cot = Tensor(rng.normal(size=(3, 2)))
    report = ag.grad_check(lambda x: ag.tsum(ag.mul(ag.matmul(x, b), cot)),
                           Tensor(rng.normal(size=(3, 4))), eps=1e-5,
                           tol=1e-6, name="matmul")
    assert report.passed, report


def test_softmax_symmetry():
    out = ag.softmax(Tensor([0.0, 0.0, 0.0]), axis=-1)
    assert np.allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_stability_no_overflow():
    out = ag.softmax(Tensor([1000.0, 0.0]), axis=-1)
    assert np.isfinite(out.data).all()
    assert out.data[0] == pytest.approx(1.0)
    assert out.data[1] == pytest.approx(0.0, abs=1e-12)


def test_softmax_closed_form():
    # softmax(ln 1, ln 2, ln 3) = (1, 2, 3) / 6
    out = ag.softmax(Tensor([math.log(1), math.log(2), math.log(3)]), axis=-1)
    assert np.allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-15)


def test_softmax_sums_to_one_property():
    rng = np.random.default_rng(1)
    for _ in range(50):
        shape = tuple(rng.integers(1, 6, size=int(rng.integers(1, 3))))
        x = Tensor(rng.normal(scale=float(rng.uniform(0.1, 50)), size=shape))
        sums = ag.softmax(x, axis=-1).data.sum(axis=-1)
        assert np.all(np.abs(sums - 1.0) <= 1e-12)


def test_softmax_empty_axis_errors():
    with pytest.raises(ShapeError):
        ag.softmax(Tensor(np.zeros((2, 0))), axis=-1)


def test_silu_sigmoid_argmax_points():
    assert ag.silu(Tensor([0.0])).data[0] == 0.0
    assert ag.sigmoid(Tensor([0.0])).data[0] == 0.5
    assert ag.argmax(Tensor([0.1, 0.7, 0.2])) == 1


def test_embedding_out_of_range_names_offender():
    table = Tensor(np.zeros((3, 2)))
    with pytest.raises(IndexError, match="id 7"):
        ag.embedding_lookup(table, [0, 7, 1])


def test_matmul_associativity():
    rng = np.random.default_rng(2)
    for _ in range(20):
        m, k, n, p = rng.integers(1, 6, size=4)
        a, b, c = (Tensor(rng.normal(size=s)) for s in ((m, k), (k, n), (n, p)))
        left = ag.matmul(ag.matmul(a, b), c).data
        right = ag.matmul(a, ag.matmul(b, c)).data
        scale = max(np.abs(left).max(), 1e-12)
        assert np.abs(left - right).max() / scale <= 1e-9


def test_backward_accumulation_doubles_without_zero():
    x = Tensor([1.0, 2.0], requires_grad=True)
    out = ag.tsum(ag.mul(x, x))
    out.backward()
    once = x.grad.copy()
    out.backward()
    assert np.array_equal(x.grad, 2 * once)
    x.zero_grad()
    assert x.grad is None


def test_backward_linearity_over_independent_subgraphs():
    rng = np.random.default_rng(3)
    a_data = rng.normal(size=(3,))
    b_data = rng.normal(size=(4,))

    a1 = Tensor(a_data, requires_grad=True)
    b1 = Tensor(b_data, requires_grad=True)
    joint = ag.add(ag.tsum(ag.mul(a1, a1)), ag.tsum(ag.silu(b1)))
    joint.backward()

    a2 = Tensor(a_data, requires_grad=True)
    ag.tsum(ag.mul(a2, a2)).backward()
    b2 = Tensor(b_data, requires_grad=True)
    ag.tsum(ag.silu(b2)).backward()

    assert np.array_equal(a1.grad, a2.grad)
    assert np.array_equal(b1.grad, b2.grad)


def test_backward_requires_scalar_root():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ag.mul(x, x).backward()


def test_broadcast_rules_rejected():
    with pytest.raises(ShapeError):
        ag.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        ag.mul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2,))))  # not trailing


def test_broadcast_bias_and_rowscalar_gradients():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(3, 4)))
    cot = Tensor(rng.normal(size=(3, 4)))
    rep = ag.grad_check(lambda b: ag.tsum(ag.mul(ag.add(x, b), cot)),
                        Tensor(rng.normal(size=(4,))), name="bias")
    assert rep.passed
    rep = ag.grad_check(lambda s: ag.tsum(ag.mul(ag.mul(x, s), cot)),
                        Tensor(rng.normal(size=(3, 1))), name="rowscalar")
    assert rep.passed


def test_grad_check_sum_of_squares():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    out = ag.tsum(ag.mul(x, x))
    out.backward()
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])
    report = ag.grad_check(lambda t: ag.tsum(ag.mul(t, t)), x, tol=1e-8,
                           name="sum-squares")
    assert report.passed and report.max_relative_error < 1e-8


def test_grad_check_silu_at_zero():
    # d/dx silu = sigmoid(x) + x*sigmoid'(x) = 0.5 at x = 0
    x = Tensor(np.zeros(4), requires_grad=True)
    ag.tsum(ag.silu(x)).backward()
    assert np.allclose(x.grad, 0.5)
    report = ag.grad_check(lambda t: ag.tsum(ag.silu(t)), x, name="silu-zero")
    assert report.passed


def test_grad_check_constant_function():
    report = ag.grad_check(lambda t: Tensor(np.array(3.0)),
                           Tensor([1.0, 2.0]), name="constant")
    assert report.passed and report.max_relative_error == 0.0


def test_grad_check_nonfinite_diagnostic():
    def f(t):
        return ag.tsum(ag.log(t))  # log of negative coordinate explodes

    with pytest.raises(FloatingPointError, match="coordinate"):
        ag.grad_check(f, Tensor([1.0, 1e-12]), eps=1e-5, name="log-blowup")


def test_every_primitive_passes_gradcheck_at_small_shapes():
    from vulnmoe.cli import _op_grad_checks
    reports = _op_grad_checks(np.random.default_rng(7))
    failed = [r for r in reports if not r.passed]
    assert not failed, failed


def test_dropout_inverse_scaling_and_determinism():
    x = Tensor(np.ones((100, 10)))
    out1 = ag.dropout(x, 0.3, np.random.default_rng(0)).data
    out2 = ag.dropout(x, 0.3, np.random.default_rng(0)).data
    assert np.array_equal(out1, out2)
    kept = out1 != 0
    assert np.allclose(out1[kept], 1.0 / 0.7)
    assert ag.dropout(x, 0.0, np.random.default_rng(0)) is x
