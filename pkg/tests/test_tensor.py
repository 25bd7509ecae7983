import numpy as np
import pytest

from condfuse.errors import ContractError, DimensionError, NumericError
from condfuse.tensor import (
    Parameter,
    Tape,
    Tensor,
    backward,
    concat,
    exp,
    log,
    matmul,
    no_grad,
    relu,
    reset_tape,
    softmax,
    tanh,
)


class TestTensorBasics:
    def test_shape_data_consistency(self, rng):
        t = Tensor(rng.standard_normal((3, 4, 5)))
        assert t.size == np.prod(t.shape) == t.data.size

    def test_int_data_is_cast_to_float(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32

    def test_nonfinite_op_output_raises(self):
        with pytest.raises(NumericError):
            log(Tensor([0.0]))  # -inf

    def test_grad_shape_matches_data(self, rng):
        x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        with Tape():
            backward((x * x).sum())
        assert x.grad.shape == x.shape


class TestBackward:
    def test_square_gradient(self):
        x = Tensor(1.0, requires_grad=True)
        with Tape():
            loss = x * x
            backward(loss)
        assert x.grad == pytest.approx(2.0)

    def test_sum_of_softmax_has_zero_gradient(self, rng):
        x = Tensor(rng.standard_normal(5), requires_grad=True, dtype=np.float64)
        with Tape():
            backward(softmax(x.reshape((1, 5)), axis=1).sum())
        assert np.allclose(x.grad, 0.0, atol=1e-12)

    def test_non_scalar_loss_rejected(self, rng):
        x = Tensor(rng.standard_normal(3), requires_grad=True)
        with Tape():
            y = x * 2.0
            with pytest.raises(ContractError):
                backward(y)

    def test_empty_tape_rejected(self):
        x = Tensor(1.0, requires_grad=True)
        with Tape():
            with pytest.raises(ContractError):
                backward(x)

    def test_second_backward_without_reset_errors(self):
        x = Tensor(2.0, requires_grad=True)
        with Tape():
            loss = x * x
            backward(loss)
            with pytest.raises(ContractError):
                backward(loss)

    def test_reset_allows_fresh_backward(self):
        x = Tensor(2.0, requires_grad=True)
        loss = x * x
        backward(loss)
        reset_tape()
        loss2 = x * x
        backward(loss2)
        # grads accumulate additively across backward calls
        assert x.grad == pytest.approx(8.0)

    def test_gradients_accumulate_over_consumers(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape():
            y = x * x + x * 4.0  # two consumers of x
            backward(y)
        assert x.grad == pytest.approx(2 * 3.0 + 4.0)

    def test_no_grad_disables_recording(self):
        x = Tensor(1.0, requires_grad=True)
        with Tape() as tape:
            with no_grad():
                y = x * x
            assert len(tape) == 0
            assert not y.requires_grad


class TestOps:
    def test_matmul_matches_numpy(self, rng):
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((5, 3))
        assert np.allclose(matmul(Tensor(a), Tensor(b)).data, a @ b, atol=1e-6)

    def test_matmul_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            matmul(Tensor(rng.standard_normal((2, 3))), Tensor(rng.standard_normal((2, 3))))

    def test_concat_roundtrip_gradient(self, rng):
        a = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        with Tape():
            backward((concat([a, b], axis=0) * 2.0).sum())
        assert np.allclose(a.grad, 2.0) and np.allclose(b.grad, 2.0)

    def test_broadcast_add_gradient_sums(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((1, 4)), requires_grad=True)
        with Tape():
            backward((a + b).sum())
        assert np.allclose(b.grad, 3.0)

    def test_relu_and_tanh_shapes(self, rng):
        x = Tensor(rng.standard_normal((2, 3)))
        assert relu(x).shape == x.shape
        assert tanh(x).shape == x.shape

    def test_exp_log_inverse(self, rng):
        x = Tensor(np.abs(rng.standard_normal(10)) + 0.1, dtype=np.float64)
        assert np.allclose(log(exp(x)).data, x.data, atol=1e-12)


class TestSoftmax:
    def test_uniform_on_zeros(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_closed_form_log_inputs(self):
        out = softmax(Tensor(np.log([1.0, 2.0, 3.0])), axis=0)
        assert np.allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-6)

    def test_slices_sum_to_one(self, rng):
        for _ in range(5):
            x = Tensor(rng.standard_normal((4, 7)) * 10)
            s = softmax(x, axis=1)
            assert np.allclose(s.data.sum(axis=1), 1.0, atol=1e-6)
            assert np.all(s.data > 0)

    def test_shift_invariance(self, rng):
        for _ in range(5):
            x = rng.standard_normal((3, 6))
            a = softmax(Tensor(x), axis=1).data
            b = softmax(Tensor(x + 123.456), axis=1).data
            assert np.allclose(a, b, atol=1e-6)

    def test_singleton_axis_weight_is_exactly_one(self, rng):
        # one-token attention weight: softmax over a length-1 axis
        x = Tensor(rng.standard_normal((4, 1)) * 50)
        assert np.all(softmax(x, axis=1).data == 1.0)

    def test_invalid_axis(self):
        with pytest.raises(DimensionError):
            softmax(Tensor([1.0, 2.0]), axis=3)


class TestParameter:
    def test_parameter_requires_grad(self):
        p = Parameter(np.zeros(3))
        assert p.requires_grad

    def test_thread_isolated_tapes(self, rng):
        import threading

        errs = []

        def work(seed):
            try:
                x = Tensor(float(seed), requires_grad=True)
                with Tape():
                    backward(x * x)
                assert x.grad == pytest.approx(2.0 * seed)
            except Exception as exc:  # pragma: no cover
                errs.append(exc)

        threads = [threading.Thread(target=work, args=(s,)) for s in (1.0, 2.0, 3.0)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errs
