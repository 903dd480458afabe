import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshqa import autodiff as ad
from meshqa.autodiff import (
    Adam,
    ContainerError,
    Parameter,
    Tensor,
    cosine_lr,
    default_dtype,
    grad_check,
    load_parameters,
    no_grad,
    save_parameters,
)
from meshqa.autodiff.tensor import _make
from meshqa.verify import _op_cases


@pytest.fixture(autouse=True)
def float64():
    with default_dtype(np.float64):
        yield


def leaf(values):
    return Tensor(np.asarray(values, float), requires_grad=True)


# -- forward / backward semantics ----------------------------------------
def test_relu_forward_and_backward():
    x = leaf([-1.0, 0.0, 2.0])
    y = ad.relu(x)
    np.testing.assert_array_equal(y.data, [0, 0, 2])
    ad.sum_(y).backward()
    np.testing.assert_array_equal(x.grad, [0, 0, 1])


def test_matmul_with_identity_returns_input():
    a = np.arange(6.0).reshape(2, 3)
    out = ad.matmul(Tensor(a), Tensor(np.eye(3)))
    np.testing.assert_array_equal(out.data, a)


def test_sum_backward_is_ones():
    x = leaf([3.0, -1.0, 7.0])
    ad.sum_(x).backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_sum_of_squares_gradient():
    x = leaf([1.0, 2.0])
    ad.sum_(ad.mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_second_backward_doubles_gradient():
    x = leaf([1.0, -2.0, 0.5])
    y = ad.sum_(ad.mul(x, x))
    y.backward()
    first = x.grad.copy()
    y.backward()
    np.testing.assert_array_equal(x.grad, 2 * first)


def test_backward_requires_scalar():
    with pytest.raises(ValueError, match="scalar"):
        ad.relu(leaf([1.0, 2.0])).backward()


def test_shape_mismatch_and_bad_index_raise():
    with pytest.raises(ValueError, match="shape mismatch"):
        ad.add(leaf([1.0, 2.0]), leaf([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError, match="shape mismatch"):
        ad.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))
    with pytest.raises(IndexError):
        ad.gather_rows(leaf(np.ones((3, 2))), [0, 3])
    with pytest.raises(IndexError):
        ad.scatter_add_rows(leaf(np.ones((2, 2))), [0, -1], 4)


def test_shared_subexpression_accumulates():
    x = leaf([2.0])
    y = ad.mul(x, x)
    ad.sum_(ad.add(y, y)).backward()
    np.testing.assert_array_equal(x.grad, [8.0])


def test_no_grad_records_nothing():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = ad.sum_(ad.mul(x, x))
    assert not y.requires_grad
    assert ad.sum_(ad.mul(x, x)).requires_grad


def test_default_precision_is_32_bit():
    with default_dtype(np.float32):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 7)) * 30)
    s = ad.softmax(x, axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


# -- oracles for the heavier kernels ---------------------------------------
def naive_conv2d(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[ni, oi, i, j] = np.sum(patch * w[oi]) + (b[oi] if b is not None else 0.0)
    return out


@pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (4, 0, 4), (2, 0, 3)])
def test_conv2d_matches_loop_oracle(stride, padding, k):
    rng = np.random.default_rng(stride * 10 + k)
    x = rng.normal(size=(2, 3, 9, 9))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding).data
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, stride, padding), atol=1e-12)


def test_max_pool_matches_loop_oracle():
    x = np.random.default_rng(1).normal(size=(2, 3, 6, 6))
    got = ad.max_pool2d(Tensor(x), 2).data
    want = x.reshape(2, 3, 3, 2, 3, 2).max(axis=(3, 5))
    np.testing.assert_array_equal(got, want)


def test_bilinear_resize_preserves_constants():
    x = Tensor(np.full((1, 2, 7, 5), 0.25))
    for size in [(3, 2), (14, 10), (7, 5)]:
        np.testing.assert_allclose(ad.resize_bilinear(x, size).data, 0.25, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(1, 4), st.integers(1, 12), st.integers(0, 10_000))
def test_scatter_add_is_adjoint_of_gather(rows, cols, n_idx, seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng.normal(size=(rows, cols)))
    idx = rng.integers(0, rows, size=n_idx)
    u = rng.normal(size=(n_idx, cols))
    ad.sum_(ad.mul(ad.gather_rows(x, idx), Tensor(u))).backward()
    np.testing.assert_allclose(x.grad, ad.scatter_add_rows(Tensor(u), idx, rows).data, atol=1e-12)


def test_forward_is_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 3, 8, 8)))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)))
        y = ad.relu(ad.conv2d(x, w, padding=1))
        return ad.softmax(ad.reshape(ad.mean(y, axis=(2, 3)), (2, 4)), axis=-1).data

    assert run().tobytes() == run().tobytes()


# -- gradient checking -----------------------------------------------------
OP_NAMES = [name for name, _, _ in _op_cases(np.random.default_rng(0))]


@pytest.mark.parametrize("name", OP_NAMES)
def test_every_op_passes_grad_check(name):
    for seed in range(2):
        cases = {n: (fn, inputs) for n, fn, inputs in _op_cases(np.random.default_rng(seed))}
        fn, inputs = cases[name]
        proj = {}

        def scalar(*args):
            out = fn(*args)
            if "w" not in proj:
                proj["w"] = Tensor(np.random.default_rng(seed + 7).normal(size=out.shape))
            return ad.sum_(ad.mul(out, proj["w"]))

        report = grad_check(scalar, inputs, tol=1e-4)
        assert report.passed, (name, seed, report.errors)


def test_grad_check_on_linear_map_is_exact():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 3))
    x = leaf(rng.normal(size=(3, 2)))
    report = grad_check(lambda t: ad.sum_(ad.matmul(Tensor(a), t)), [x], step=1e-5)
    assert report.max_error < 1e-9


def test_grad_check_on_convolution():
    rng = np.random.default_rng(3)
    x = leaf(rng.normal(size=(2, 3, 5, 5)))
    w = leaf(rng.normal(size=(4, 3, 3, 3)))
    u = Tensor(rng.normal(size=(2, 4, 5, 5)))
    report = grad_check(lambda a, b: ad.sum_(ad.mul(ad.conv2d(a, b, padding=1), u)), [x, w], step=1e-5)
    assert report.max_error < 1e-4


def test_grad_check_flags_corrupted_backward():
    def bad_square(a):
        return _make(a.data ** 2, (a,), lambda g: (g * 3.0 * a.data,), "bad_square")

    x = leaf([0.5, -1.2, 2.0])
    report = grad_check(lambda t: ad.sum_(bad_square(t)), [x])
    assert report.max_error > 1e-2
    assert not report.passed


# -- optimiser and schedule ------------------------------------------------
def test_adam_single_step_by_hand():
    p = Parameter(np.array([1.0, -2.0]))
    p.grad = np.array([0.5, 0.1])
    opt = Adam([p], lr=0.1, weight_decay=0.01)
    opt.step()
    g = np.array([0.5, 0.1]) + 0.01 * np.array([1.0, -2.0])
    m_hat = (0.1 * g) / 0.1
    v_hat = (0.001 * g * g) / 0.001
    want = np.array([1.0, -2.0]) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(p.data, want, rtol=0, atol=1e-12)


def test_adam_skips_parameters_without_gradient():
    p = Parameter(np.array([3.0]))
    Adam([p], lr=1.0).step()
    assert p.data[0] == 3.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 500), st.floats(1e-6, 1.0), st.floats(1e-8, 1e-3))
def test_cosine_schedule_endpoints(total, lr0, lr1):
    assert abs(cosine_lr(0, total, lr0, lr1) - lr0) <= 1e-12
    assert abs(cosine_lr(total - 1, total, lr0, lr1) - lr1) <= 1e-12
    mid = cosine_lr(total // 2, total, lr0, lr1)
    assert min(lr0, lr1) - 1e-15 <= mid <= max(lr0, lr1) + 1e-15


def test_cosine_schedule_midpoint():
    assert math.isclose(cosine_lr(50, 101, 1e-4, 1e-5), 5.5e-5, rel_tol=1e-12)


# -- parameter container -----------------------------------------------------
def test_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    named = [("a.weight", rng.normal(size=(3, 4))), ("b", rng.normal(size=(5,))),
             ("scalar", np.array(2.5)), ("ünicode", np.zeros((2, 1, 2)))]
    path = tmp_path / "p.mqaw"
    save_parameters(path, named)
    back = load_parameters(path)
    assert list(back) == [n for n, _ in named]
    for name, value in named:
        np.testing.assert_array_equal(back[name], value.astype(np.float32))


def test_container_layout(tmp_path):
    path = tmp_path / "p.mqaw"
    save_parameters(path, [("w", np.array([[1.0, 2.0]]))])
    raw = path.read_bytes()
    assert raw[:4] == b"MQAW"
    # header 12 bytes, name 4+1, rank 4, dims 8, values 8
    assert len(raw) == 12 + 5 + 4 + 8 + 8
    assert np.frombuffer(raw[-8:], "<f4").tolist() == [1.0, 2.0]


def test_container_rejects_damage(tmp_path):
    path = tmp_path / "p.mqaw"
    save_parameters(path, [("w", np.ones((4, 4)))])
    raw = path.read_bytes()
    for bad in (b"XXXX" + raw[4:], raw[:-6], raw + b"\0"):
        path.write_bytes(bad)
        with pytest.raises(ContainerError):
            load_parameters(path)
    with pytest.raises(ContainerError, match="unique"):
        save_parameters(path, [("w", np.ones(1)), ("w", np.ones(1))])
