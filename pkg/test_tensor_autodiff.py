import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ncn import tensor_autodiff as ad
from ncn.errors import CheckpointError, ConfigError, NumericError, ShapeError
from ncn.tensor_autodiff import Tape, Tensor, constant, parameter


def compare(numeric, analytic, rel_tol=1e-4):
    assert numeric.shape == analytic.shape
    scale = np.maximum(np.abs(numeric) + np.abs(analytic), 1e-2)
    rel = np.abs(numeric - analytic) / scale
    assert rel.max() < rel_tol, f"max relative error {rel.max()}"


def check_gradients(build, tensors, h=1e-3, rel_tol=1e-4):
    """Compare tape gradients of sum(w * build()) against central differences"""
    rng = np.random.default_rng(123)
    out_shape = build().shape
    weights = rng.standard_normal(int(np.prod(out_shape))).reshape(out_shape)

    def loss_value():
        return float(np.sum(weights * build().data))

    with Tape() as tape:
        out = build()
        loss = ad.matmul(ad.reshape(out, (1, -1)), constant(weights.reshape(-1, 1)))
        loss = ad.reshape(loss, ())
    tape.backward(loss)

    for t in tensors:
        numeric = ad.numerical_gradient(loss_value, t.data, h=h)
        compare(numeric, t.grad, rel_tol)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_default_dtype_is_float32():
    assert Tensor([1.0, 2.0]).data.dtype == np.float32


def test_precision_context(f64):
    assert Tensor([1.0]).data.dtype == np.float64
    with ad.precision(np.float32):
        assert Tensor([1.0]).data.dtype == np.float32
    assert Tensor([1.0]).data.dtype == np.float64


def test_set_default_dtype_rejects_ints():
    with pytest.raises(ConfigError):
        ad.set_default_dtype(np.int32)


def test_grad_is_zero_initialized():
    p = parameter(np.ones((2, 3)))
    assert_array_equal(p.grad, np.zeros((2, 3)))
    assert constant(np.ones(2)).grad is None


def test_softmax_of_equal_logits():
    assert_allclose(ad.softmax_last_dim(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_rows_sum_to_one(rng):
    s = ad.softmax_last_dim(Tensor(rng.standard_normal((20, 5)) * 10)).data
    assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(s > 0)


def test_softmax_over_empty_dim():
    with pytest.raises(ShapeError):
        ad.softmax_last_dim(Tensor(np.zeros((3, 0))))


def test_nll_approaches_zero_for_confident_prediction():
    losses = []
    for gap in (1.0, 5.0, 20.0):
        logits = Tensor([[gap, 0.0, 0.0], [0.0, gap, 0.0]])
        losses.append(ad.nll_loss(ad.log_softmax(logits), [0, 1]).item())
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-6


def test_nll_errors():
    logp = ad.log_softmax(Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        ad.nll_loss(logp, [0])
    with pytest.raises(ShapeError):
        ad.nll_loss(logp, [0, 3])
    with pytest.raises(ShapeError):
        ad.nll_loss(ad.log_softmax(Tensor(np.zeros((0, 3)))), [])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_shared_input_accumulates(f64):
    # y = x * x + x, dy/dx = 2x + 1
    x = parameter([1.5, -2.0, 0.25])
    with Tape() as tape:
        y = ad.add(ad.elementwise_mul(x, x), x)
        loss = ad.matmul(ad.reshape(y, (1, 3)), constant(np.ones((3, 1))))
        loss = ad.reshape(loss, ())
    tape.backward(loss)
    assert_allclose(x.grad, 2 * x.data + 1)


def test_backward_needs_scalar():
    x = parameter(np.ones(3))
    with Tape() as tape:
        y = ad.relu(x)
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_ops_outside_tape_are_not_recorded():
    x = parameter(np.ones((2, 2)))
    y = ad.relu(x)
    assert not y.requires_grad


@pytest.mark.parametrize("name", [
    "matmul", "matmul_batched", "add_bias", "relu", "concat", "mul", "softmax", "log_softmax_nll",
    "permute", "expand_column", "add",
])
def test_op_gradients(name, f64, rng):
    a = parameter(rng.standard_normal((4, 3)))
    b = parameter(rng.standard_normal((3, 5)))
    c = parameter(rng.standard_normal((4, 3)))
    bias = parameter(rng.standard_normal(3))
    batched = parameter(rng.standard_normal((2, 4, 3)))
    # keep relu inputs away from the kink
    kinked = parameter(np.sign(rng.standard_normal((4, 3))) * rng.uniform(0.1, 1.0, (4, 3)))

    cases = {
        "matmul": (lambda: ad.matmul(a, b), [a, b]),
        "matmul_batched": (lambda: ad.matmul(batched, b), [batched, b]),
        "add_bias": (lambda: ad.add_bias(a, bias), [a, bias]),
        "relu": (lambda: ad.relu(kinked), [kinked]),
        "concat": (lambda: ad.concat_last_dim([a, c]), [a, c]),
        "mul": (lambda: ad.elementwise_mul(a, c), [a, c]),
        "softmax": (lambda: ad.softmax_last_dim(a), [a]),
        "log_softmax_nll": (lambda: ad.nll_loss(ad.log_softmax(a), [0, 2, 1, 1]), [a]),
        "permute": (lambda: ad.permute(batched, (0, 2, 1)), [batched]),
        "expand_column": (lambda: ad.expand_column(a, 1, 4), [a]),
        "add": (lambda: ad.add(a, c), [a, c]),
    }
    build, tensors = cases[name]
    check_gradients(build, tensors)


def naive_conv(x, kernel, bias):
    batch, c_in, height, _ = x.shape
    c_out, _, h, _ = kernel.shape
    out = np.zeros((batch, c_out, height - h + 1, 1))
    for b in range(batch):
        for o in range(c_out):
            for i in range(height - h + 1):
                out[b, o, i, 0] = bias[o] + np.sum(kernel[o, :, :, 0] * x[b, :, i:i + h, 0])
    return out


def test_conv_matches_loop_oracle(f64, rng):
    x = rng.standard_normal((2, 3, 5, 1))
    kernel = rng.standard_normal((4, 3, 3, 1))
    bias = rng.standard_normal(4)
    out = ad.conv2d_hx1(Tensor(x), Tensor(kernel), Tensor(bias))
    assert out.shape == (2, 4, 3, 1)
    assert_allclose(out.data, naive_conv(x, kernel, bias), atol=1e-6)


def test_conv_full_height_sums_columns(rng):
    x = rng.standard_normal((3, 1, 4, 1))
    out = ad.conv2d_hx1(Tensor(x), Tensor(np.ones((1, 1, 4, 1))), Tensor(np.zeros(1)))
    assert out.shape == (3, 1, 1, 1)
    assert_allclose(out.data[:, 0, 0, 0], x[:, 0, :, 0].sum(axis=1), rtol=1e-5, atol=1e-5)


def test_pointwise_conv_is_channel_map(f64, rng):
    x = rng.standard_normal((2, 3, 4, 1))
    kernel = rng.standard_normal((5, 3, 1, 1))
    out = ad.conv2d_hx1(Tensor(x), Tensor(kernel), Tensor(np.zeros(5)))
    expected = np.einsum("oc,bch->boh", kernel[:, :, 0, 0], x[..., 0])[..., None]
    assert_allclose(out.data, expected, atol=1e-12)


def test_conv_gradients(f64, rng):
    x = parameter(rng.standard_normal((2, 3, 5, 1)))
    kernel = parameter(rng.standard_normal((4, 3, 3, 1)))
    bias = parameter(rng.standard_normal(4))
    check_gradients(lambda: ad.conv2d_hx1(x, kernel, bias), [x, kernel, bias])


def test_conv_kernel_taller_than_input():
    with pytest.raises(ShapeError):
        ad.conv2d_hx1(Tensor(np.ones((1, 1, 2, 1))), Tensor(np.ones((1, 1, 3, 1))), Tensor(np.zeros(1)))


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        ad.conv2d_hx1(Tensor(np.ones((1, 2, 3, 1))), Tensor(np.ones((1, 3, 1, 1))), Tensor(np.zeros(1)))


def test_adamw_zero_gradient_no_decay():
    p = np.array([1.0, -2.0])
    ad.adamw_step([p], [np.zeros(2)], {}, lr=0.1, weight_decay=0.0, t=1)
    assert_array_equal(p, [1.0, -2.0])


def test_adamw_zero_gradient_pure_shrink():
    p = np.array([1.0, -2.0])
    ad.adamw_step([p], [np.zeros(2)], {}, lr=0.1, weight_decay=0.5, t=1)
    assert_allclose(p, np.array([1.0, -2.0]) * (1 - 0.05))


def test_adamw_converges_on_quadratic():
    theta = np.array([1.0])
    state = {}
    for t in range(1, 201):
        ad.adamw_step([theta], [2 * theta], state, lr=0.1, weight_decay=0.0, t=t)
    assert abs(theta[0]) < 1e-3


def test_adamw_rejects_non_finite_gradient():
    p = np.array([1.0, 2.0])
    with pytest.raises(NumericError):
        ad.adamw_step([p], [np.array([np.nan, 0.0])], {}, lr=0.1, weight_decay=0.1, t=1)
    assert_array_equal(p, [1.0, 2.0])


def test_adamw_step_counter():
    with pytest.raises(ConfigError):
        ad.adamw_step([np.ones(1)], [np.ones(1)], {}, lr=0.1, weight_decay=0.0, t=0)


def test_adamw_class_matches_function(f64):
    p = parameter([0.5, -0.5])
    opt = ad.AdamW([p], lr=0.01, weight_decay=0.1)
    p.grad[...] = [1.0, 2.0]
    opt.step()
    expected = np.array([0.5, -0.5])
    ad.adamw_step([expected], [np.array([1.0, 2.0])], {}, lr=0.01, weight_decay=0.1, t=1)
    assert_allclose(p.data, expected)
    opt.zero_grad()
    assert not p.grad.any()


def test_check_finite_flag(monkeypatch):
    monkeypatch.setattr(ad, "CHECK_FINITE", True)
    with pytest.raises(NumericError):
        ad.add(Tensor([np.inf]), Tensor([1.0]))


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"w": rng.standard_normal((3, 2)).astype(np.float32), "b": np.zeros(2, dtype=np.float32)}
    ad.save_checkpoint(tmp_path / "ckpt", tensors, {"note": "x"})
    loaded, meta = ad.load_checkpoint(tmp_path / "ckpt")
    assert meta == {"note": "x"}
    assert_array_equal(loaded["w"], tensors["w"])
    assert loaded["b"].shape == (2,)


def test_checkpoint_detects_tampering(tmp_path):
    ad.save_checkpoint(tmp_path / "ckpt", {"w": np.ones(4, dtype=np.float32)})
    blob = tmp_path / "ckpt" / "w.f32"
    blob.write_bytes(np.zeros(4, dtype='<f4').tobytes())
    with pytest.raises(CheckpointError, match="hash"):
        ad.load_checkpoint(tmp_path / "ckpt")
    with pytest.raises(CheckpointError):
        ad.load_checkpoint(tmp_path / "missing")
