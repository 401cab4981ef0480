import numpy as np
import pytest

from errors import NonFiniteError, ShapeError, TapeError
from numcore import (
    AdamW,
    BatchNorm2d,
    OptimState,
    ScheduleConfig,
    Tensor,
    adamw_step,
    backward,
    grad_check,
    lr_at,
    no_grad,
    reset_tape,
)
from numcore import functional as F


def leaf(arr):
    return Tensor(arr, requires_grad=True)


# ====== Forward ops ======

def test_softmax_uniform():
    out = F.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(0).normal(size=(5, 7)) * 10)
    out = F.softmax(x, axis=-1)
    assert np.all(out.data >= 0)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        F.softmax(Tensor(np.zeros((2, 3))), axis=2)


def test_matmul_identity():
    m = np.random.default_rng(1).normal(size=(3, 3))
    out = F.matmul(Tensor(np.eye(3)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        F.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_conv2d_window_sum():
    x = Tensor(np.ones((1, 1, 4, 4)))
    w = Tensor(np.ones((1, 1, 2, 2)))
    out = F.conv2d(x, w, stride=2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))


@pytest.mark.parametrize("n,k,s,p", [(7, 3, 1, 0), (7, 3, 2, 1), (8, 2, 2, 0), (9, 3, 2, 0), (5, 5, 1, 2)])
def test_conv_and_pool_extents(n, k, s, p):
    x = Tensor(np.zeros((1, 2, n, n)))
    expected = (n + 2 * p - k) // s + 1
    conv = F.conv2d(x, Tensor(np.zeros((3, 2, k, k))), stride=s, padding=p)
    pool = F.avg_pool2d(x, k, stride=s, padding=p)
    assert conv.shape == (1, 3, expected, expected)
    assert pool.shape == (1, 2, expected, expected)


def test_nonfinite_forward_raises():
    with pytest.raises(NonFiniteError):
        F.log(Tensor([0.0, 1.0]))


def test_pad2d_modes_match_numpy():
    x = np.arange(12.0).reshape(1, 1, 3, 4)
    for mode, np_mode in (("reflect", "reflect"), ("symmetric", "symmetric")):
        out = F.pad2d(Tensor(x), (1, 2, 2, 1), mode=mode)
        ref = np.pad(x, [(0, 0), (0, 0), (1, 2), (2, 1)], mode=np_mode)
        np.testing.assert_array_equal(out.data, ref)


# ====== Backward ======

def test_backward_sum_gives_ones():
    x = leaf([1.0, -2.0, 3.0])
    backward(F.sum(x))
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_quadratic():
    x = leaf([1.0, 2.0])
    backward(F.sum(x * x))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_clears_tape_and_rejects_empty():
    x = leaf([1.0, 2.0])
    backward(F.sum(x))
    with pytest.raises(TapeError):
        backward(F.sum(Tensor([1.0])))


def test_backward_rejects_vector_loss():
    x = leaf([1.0, 2.0])
    with pytest.raises(TapeError):
        backward(x * 2.0)
    reset_tape()


def test_no_grad_records_nothing():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = F.sum(x * x)
    assert not y.requires_grad
    with pytest.raises(TapeError):
        backward(y)


def test_relu_grad_at_zero_is_zero():
    x = leaf([-1.0, 0.0, 2.0])
    backward(F.sum(F.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_grad_check_linear_graph():
    rng = np.random.default_rng(2)
    x = leaf(rng.normal(size=(4, 3)))
    w = leaf(rng.normal(size=(3, 2)))
    report = grad_check(lambda: F.sum(F.matmul(x, w)), {"x": x, "w": w})
    assert report.passed
    assert report.max_error < 1e-8


def test_grad_check_composite_of_all_ops():
    rng = np.random.default_rng(3)
    img = leaf(rng.normal(size=(2, 2, 6, 6)))
    kernel = leaf(rng.normal(size=(3, 2, 3, 3)) * 0.3)
    gamma = leaf(rng.uniform(0.5, 1.5, size=3))
    beta = leaf(rng.normal(size=3))
    ln_w = leaf(rng.uniform(0.5, 1.5, size=4))
    ln_b = leaf(rng.normal(size=4))
    bn = BatchNorm2d(3)

    def build():
        h = F.conv2d(F.pad2d(img, 1, mode="reflect"), kernel, stride=1)
        h = F.batch_norm(h, gamma, beta, bn.running_mean, bn.running_var, training=True)
        h = F.sigmoid(h) * F.softplus(h)
        h = F.avg_pool2d(h, 2)  # (2, 3, 3, 3)
        h = F.upsample_nearest2d(h, 2)[:, :, 1:5, 1:5]
        tokens = F.transpose(F.reshape(h, (2, 3, 16)), (0, 2, 1))
        mixed = F.concat([tokens, F.exp(tokens * 0.1)], axis=-1)[..., :4]
        normed = F.layer_norm(mixed, ln_w, ln_b)
        att = F.softmax(F.matmul(normed, F.transpose(normed, (0, 2, 1))) / 2.0, axis=-1)
        out = F.log_softmax(F.matmul(att, normed), axis=-1)
        cos = F.cosine_similarity(F.mean(out, axis=1), F.sum(normed, axis=1) + 3.0)
        return F.sum(cos) - F.mean(out * out)

    report = grad_check(build, {"img": img, "kernel": kernel, "gamma": gamma, "beta": beta,
                                "ln_w": ln_w, "ln_b": ln_b})
    assert report.passed, report.summary()


def test_grad_check_exempts_relu_kinks():
    x = leaf([0.0, 1.0, -1.0])
    report = grad_check(lambda: F.sum(F.relu(x)), {"x": x})
    assert report.passed
    assert report.leaves[0].exempt == 1


def test_grad_check_nonfinite_loss():
    x = leaf([1.0])
    with pytest.raises(NonFiniteError):
        grad_check(lambda: F.sum(x) / 0.0, {"x": x})


def test_depthwise_conv_grad():
    rng = np.random.default_rng(4)
    x = leaf(rng.normal(size=(1, 3, 5, 5)))
    w = leaf(rng.normal(size=(3, 1, 3, 3)))
    b = leaf(rng.normal(size=3))

    def build():
        y = F.conv2d(x, w, b, stride=2, padding=1, groups=3)
        return F.sum(y * y)

    report = grad_check(build, {"x": x, "w": w, "b": b})
    assert report.passed


# ====== AdamW / schedule ======

def test_adamw_zero_grad_no_decay_keeps_params():
    p = Tensor([1.0, -2.0])
    state = OptimState.zeros_like([p])
    adamw_step([p], [np.zeros(2)], state, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_first_step_closed_form():
    p = Tensor([0.5, 0.5, 0.5])
    g = np.array([0.3, -2.0, 1e-3])
    state = OptimState.zeros_like([p])
    adamw_step([p], [g], state, lr=0.01, weight_decay=0.0)
    expected = 0.5 - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)
    assert state.step == 1


def test_adamw_decoupled_decay_only():
    p = Tensor([2.0, -4.0])
    state = OptimState.zeros_like([p])
    adamw_step([p], [np.zeros(2)], state, lr=0.1, weight_decay=0.01)
    np.testing.assert_allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.1 * 0.01), rtol=1e-15)


def test_adamw_deterministic():
    results = []
    for _ in range(2):
        p = Tensor(np.linspace(-1, 1, 5))
        state = OptimState.zeros_like([p])
        for k in range(3):
            adamw_step([p], [np.sin(np.arange(5.0) + k)], state, lr=1e-3)
        results.append(p.data.tobytes())
    assert results[0] == results[1]


def test_adamw_shape_mismatch():
    p = Tensor([1.0, 2.0])
    with pytest.raises(ShapeError):
        adamw_step([p], [np.zeros(3)], OptimState.zeros_like([p]), lr=0.1)


def test_adamw_groups_skip_frozen():
    a, b = Tensor([1.0], requires_grad=True), Tensor([1.0], requires_grad=False)
    opt = AdamW({"backbone": [b], "head": [a]}, {"backbone": 1e-3, "head": 5e-3}, weight_decay=0.0)
    a.grad = np.array([1.0])
    b.grad = np.array([1.0])
    assert opt.step(1.0) == 1
    assert b.data[0] == 1.0
    np.testing.assert_allclose(a.data, [1.0 - 5e-3], rtol=1e-6)


def test_lr_schedule_points():
    cfg = ScheduleConfig(base_lr=1e-3, warmup_epochs=5, max_epochs=105)
    assert lr_at(5, cfg) == pytest.approx(1e-3)
    assert lr_at(105, cfg) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(55, cfg) == pytest.approx(5e-4)
    assert lr_at(0, cfg) == 0.0
    with pytest.raises(ValueError):
        lr_at(106, cfg)
