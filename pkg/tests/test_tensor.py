import numpy as np
import pytest

from conftest import max_rel_err, numeric_grad
from covit.rng import generator
from covit.tensor import (
    AdamState,
    Tensor,
    adam_step,
    concat_last_axis,
    dropout,
    layer_norm,
    no_grad,
    softmax_rows,
)


def check_op(build, shapes, seed=0, tol=1e-6):
    """Gradcheck one op against central differences on random inputs."""
    rng = generator(seed, 0xC0)
    arrays = [rng.standard_normal(s) for s in shapes]
    weights_rng = generator(seed, 0xC1)

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    weights = weights_rng.standard_normal(out.shape)
    (out * Tensor(weights)).sum().backward()

    def scalar():
        ts = [Tensor(a, requires_grad=True) for a in arrays]
        return float((build(*ts) * Tensor(weights)).sum().data)

    for t, arr in zip(tensors, arrays):
        numeric = numeric_grad(scalar, arr)
        analytic = t.grad if t.grad is not None else np.zeros_like(arr)
        assert max_rel_err(analytic, numeric) <= tol


class TestPrimitiveGradients:
    def test_add_broadcast(self):
        check_op(lambda a, b: a + b, [(3, 4), (4,)])

    def test_sub_broadcast(self):
        check_op(lambda a, b: a - b, [(3, 4), (3, 1)])

    def test_mul_broadcast(self):
        check_op(lambda a, b: a * b, [(2, 3, 4), (4,)])

    def test_div(self):
        check_op(lambda a, b: a / (b * b + 2.0), [(3, 4), (3, 4)])

    def test_pow(self):
        check_op(lambda a: (a * a + 1.0) ** -0.5, [(5,)])

    def test_matmul_2d(self):
        check_op(lambda a, b: a @ b, [(3, 4), (4, 2)])

    def test_matmul_batched(self):
        check_op(lambda a, b: a @ b, [(2, 3, 4), (2, 4, 2)])

    def test_matmul_broadcast_weight(self):
        check_op(lambda a, b: a @ b, [(2, 3, 4), (4, 2)])

    def test_sum_axis(self):
        check_op(lambda a: a.sum(axis=1), [(3, 4)])

    def test_mean_keepdims(self):
        check_op(lambda a: a.mean(axis=-1, keepdims=True), [(3, 4)])

    def test_exp_log(self):
        check_op(lambda a: ((a * a + 1.0).log()).exp(), [(3, 4)])

    def test_relu(self):
        check_op(lambda a: a.relu(), [(3, 4)])

    def test_maximum(self):
        check_op(lambda a: (a * a).maximum(0.5), [(3, 4)])

    def test_shape_ops(self):
        check_op(lambda a: a.reshape(4, 3).swapaxes(0, 1), [(3, 4)])

    def test_softmax(self):
        check_op(lambda a: softmax_rows(a), [(3, 4)])

    def test_layer_norm(self):
        check_op(lambda a, g, b: layer_norm(a, g, b, eps=1e-5), [(3, 8), (8,), (8,)])

    def test_concat(self):
        check_op(lambda a, b, c: concat_last_axis([a, b, c]), [(3, 2), (3, 3), (3, 1)])

    def test_random_two_op_compositions(self):
        # chain consistency on random compositions of two primitives
        ops = [
            lambda x: softmax_rows(x),
            lambda x: x.relu(),
            lambda x: x.exp(),
            lambda x: x.sum(axis=-1, keepdims=True) + x,
            lambda x: layer_norm(x, Tensor(np.ones(x.shape[-1])), Tensor(np.zeros(x.shape[-1]))),
        ]
        rng = generator(8)
        for trial in range(10):
            i, j = rng.integers(0, len(ops), size=2)
            check_op(lambda a: ops[j](ops[i](a)), [(3, 5)], seed=trial)


class TestSoftmax:
    def test_symmetric_pair(self):
        out = softmax_rows(Tensor([0.0, 0.0])).data
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)

    def test_closed_form(self):
        out = softmax_rows(Tensor([0.0, np.log(3.0)])).data
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)

    def test_shift_invariance_no_overflow(self):
        out = softmax_rows(Tensor([1000.0, 1000.0, 1000.0])).data
        np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-12)

    def test_rows_sum_to_one(self):
        x = Tensor(generator(4).standard_normal((50, 7)) * 30)
        sums = softmax_rows(x).data.sum(axis=-1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)


class TestLayerNorm:
    def test_already_normalized(self):
        out = layer_norm(Tensor([1.0, -1.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-4)

    def test_constant_vector_maps_to_bias(self):
        bias = np.array([0.3, 0.3, 0.3])
        out = layer_norm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(bias))
        np.testing.assert_allclose(out.data, bias, atol=1e-9)

    def test_output_statistics(self):
        x = Tensor(generator(5).standard_normal(16) * 3 + 1)
        out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=1e-12).data
        assert abs(out.mean()) < 1e-6
        assert abs(out.var() - 1.0) < 1e-6

    def test_eps_validated(self):
        with pytest.raises(ValueError):
            layer_norm(Tensor([1.0]), Tensor([1.0]), Tensor([0.0]), eps=0.0)


class TestDropout:
    def test_inference_identity(self):
        x = Tensor(generator(1).standard_normal((4, 5)))
        assert dropout(x, 0.2, training=False, rng=generator(0)) is x

    def test_rate_validated(self):
        x = Tensor([1.0])
        with pytest.raises(ValueError):
            dropout(x, 1.0, training=True, rng=generator(0))

    def test_statistics(self):
        x = Tensor(np.ones(1_000_000))
        out = dropout(x, 0.2, training=True, rng=generator(123)).data
        kept = (out != 0).mean()
        assert abs(kept - 0.8) <= 0.002
        assert abs(out.mean() - 1.0) <= 0.005

    def test_deterministic_per_key(self):
        x = Tensor(np.ones((100,)))
        a = dropout(x, 0.5, training=True, rng=generator(9)).data
        b = dropout(x, 0.5, training=True, rng=generator(9)).data
        assert np.array_equal(a, b)


class TestBackward:
    def test_requires_scalar(self):
        t = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            (t * 2).backward()

    def test_unused_parameter_has_no_gradient(self):
        used = Tensor(np.ones(3), requires_grad=True)
        unused = Tensor(np.ones(3), requires_grad=True)
        (used * 2.0).sum().backward()
        assert unused.grad is None  # treated as zero by the optimizer
        np.testing.assert_allclose(used.grad, 2.0)

    def test_grad_accumulates_over_backward_calls(self):
        w = Tensor(np.ones(2), requires_grad=True)
        w.sum().backward()
        w.sum().backward()
        np.testing.assert_allclose(w.grad, 2.0)

    def test_no_grad_disables_recording(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            out = (w * 3.0).sum()
        assert out._parents == ()

    def test_matmul_identity(self):
        x = np.arange(4.0).reshape(2, 2)
        out = Tensor(np.eye(2)) @ Tensor(x)
        np.testing.assert_array_equal(out.data, x)

    def test_matmul_hand_case(self):
        out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_matmul_against_triple_loop(self):
        rng = generator(2)
        a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
        naive = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(7):
                    naive[i, j] += a[i, k] * b[k, j]
        assert np.abs((Tensor(a) @ Tensor(b)).data - naive).max() <= 1e-12

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ValueError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_float32_path(self):
        a = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
        out = softmax_rows(a @ a)
        assert out.dtype == np.float32
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-5)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = {"w": np.array([1.0, -2.0, 3.0])}
        g = {"w": np.array([0.5, -0.25, 1e-3])}
        new, state = adam_step(p, g, AdamState.init(p), lr=0.1)
        np.testing.assert_allclose(new["w"] - p["w"], -0.1 * np.sign(g["w"]), atol=1e-4)
        assert state.t == 1

    def test_zero_gradient_keeps_parameters(self):
        p = {"w": np.array([1.0, -2.0])}
        g = {"w": np.zeros(2)}
        new, _ = adam_step(p, g, AdamState.init(p), lr=0.1)
        np.testing.assert_array_equal(new["w"], p["w"])

    def test_quadratic_descent(self):
        # three steps on f(w) = w^2 from w=1 move strictly toward 0
        p = {"w": np.array(1.0)}
        state = AdamState.init(p)
        seen = [1.0]
        for _ in range(3):
            g = {"w": 2.0 * p["w"]}
            p, state = adam_step(p, g, state, lr=0.1)
            seen.append(float(p["w"]))
        assert all(b < a for a, b in zip(seen, seen[1:]))
        assert seen[-1] > -0.5

    def test_decay_applies_only_to_listed_names(self):
        p = {"w": np.array([2.0]), "b": np.array([2.0])}
        g = {"w": np.zeros(1), "b": np.zeros(1)}
        new, _ = adam_step(p, g, AdamState.init(p), lr=0.5, weight_decay=0.1,
                           decay_names={"w"})
        assert new["w"][0] == pytest.approx(2.0 * (1 - 0.05))
        assert new["b"][0] == 2.0

    def test_shape_mismatch_rejected(self):
        p = {"w": np.ones(2)}
        g = {"w": np.ones(3)}
        with pytest.raises(ValueError):
            adam_step(p, g, AdamState.init(p), lr=0.1)

    def test_bit_determinism(self):
        rng = generator(6)
        p = {"w": rng.standard_normal(8)}
        g = {"w": rng.standard_normal(8)}
        a, _ = adam_step(p, g, AdamState.init(p), lr=0.01, weight_decay=1e-4,
                         decay_names={"w"})
        b, _ = adam_step(p, g, AdamState.init(p), lr=0.01, weight_decay=1e-4,
                         decay_names={"w"})
        assert np.array_equal(a["w"], b["w"])
