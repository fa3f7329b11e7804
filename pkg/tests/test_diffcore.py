import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from duple import diffcore as dc
from duple.diffcore import ParamStore, Tensor, grad_check, kernels


floats = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def rand(*shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


# forward values

def test_log_sum_exp_two_equal_terms():
    assert dc.log_sum_exp(Tensor([0.0, 0.0])).item() == pytest.approx(math.log(2), abs=1e-12)


@given(floats)
def test_log_sum_exp_single_term_identity(a):
    assert dc.log_sum_exp(Tensor([a])).item() == a


def test_cosine_similarity_hand_value():
    assert dc.cosine_similarity(Tensor([1.0, 0.0]), Tensor([1.0, 1.0])).item() == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_cosine_zero_norm_is_zero_with_zero_grad():
    a = Tensor(np.zeros((1, 3)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    s = dc.cosine_similarity(a, b)
    assert np.all(s.data == 0)
    s.sum().backward()
    assert np.all(a.grad == 0) and np.all(b.grad == 0)


@given(st.floats(-20, 20))
def test_softmax_symmetric_pair(z):
    np.testing.assert_allclose(dc.softmax(Tensor([z, z])).data, [0.5, 0.5], atol=1e-15)


# invariants

@given(arrays(np.float64, st.integers(1, 12), elements=floats))
def test_lse_bounds(v):
    lse = dc.log_sum_exp(Tensor(v)).item()
    assert v.max() <= lse <= v.max() + math.log(len(v)) + 1e-12


@given(arrays(np.float64, st.integers(1, 12), elements=floats), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(v, c):
    p = dc.softmax(Tensor(v)).data
    assert np.all(p > 0) or np.any(v - v.max() < -700)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(dc.softmax(Tensor(v + c)).data, p, atol=1e-9)


@given(arrays(np.float64, 5, elements=st.floats(-10, 10)), arrays(np.float64, 5, elements=st.floats(-10, 10)),
       st.floats(1e-3, 1e3))
def test_cosine_positive_scale_invariance(u, v, a):
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    s1 = dc.cosine_similarity(Tensor(a * u), Tensor(v)).item()
    s0 = dc.cosine_similarity(Tensor(u), Tensor(v)).item()
    assert abs(s1 - s0) <= 1e-12


def test_shape_mismatch_names_shapes():
    with pytest.raises(dc.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(dc.ShapeError, match="conv1d"):
        dc.conv1d(Tensor(np.ones((1, 2, 10))), Tensor(np.ones((3, 4, 3))))


def test_non_finite_is_rejected():
    with pytest.raises(FloatingPointError):
        dc.log(Tensor([-1.0]))


# gradient checks

def test_grad_check_square_at_three():
    x = Tensor(np.array(3.0))
    err = grad_check(lambda x: x * x, x, 1e-5)
    assert x.grad == pytest.approx(6.0)
    assert err < 1e-8


def test_grad_check_linear_is_exact():
    w = rand(7, seed=1)
    err = grad_check(lambda x: dc.tsum(x * Tensor(w)), Tensor(rand(7, seed=2)))
    assert err < 1e-8


def test_grad_check_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        grad_check(lambda x: dc.log(x).sum(), Tensor([1e-7]), epsilon=1e-6)


def _probe(t):
    # fixed random projection so the gradient is not all-ones
    w = np.random.default_rng(99).normal(size=t.shape)
    return dc.tsum(t * Tensor(w))


@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients(seed):
    rng = np.random.default_rng(seed)
    n, m, d = rng.integers(2, 5, size=3)
    x = Tensor(rng.normal(size=(n, d)))
    w = Tensor(rng.normal(size=(m, d)))
    b = Tensor(rng.normal(size=m))
    checks = {
        "linear": (lambda x, w, b: _probe(dc.linear(x, w, b)), [x, w, b]),
        "relu": (lambda x: _probe(dc.relu(x)), [x]),
        "tanh": (lambda x: _probe(dc.tanh(x)), [x]),
        "sigmoid": (lambda x: _probe(dc.sigmoid(x)), [x]),
        "softplus": (lambda x: _probe(dc.softplus(x)), [x]),
        "softmax": (lambda x: _probe(dc.softmax(x, axis=1)), [x]),
        "log_softmax": (lambda x: _probe(dc.log_softmax(x, axis=0)), [x]),
        "lse": (lambda x: _probe(dc.log_sum_exp(x, axis=1)), [x]),
        "cosine": (lambda x, w: _probe(dc.cosine_similarity(x, w)), [x, w]),
        "mean_pool": (lambda x: _probe(dc.mean(x, axis=0)), [x]),
        "concat": (lambda x, w: _probe(dc.concat([x, w], axis=0)), [x, w]),
        "stack": (lambda x: _probe(dc.stack([x, x * 2.0], axis=1)), [x]),
        "amax": (lambda x: _probe(dc.amax(x, axis=1)), [x]),
        "matmul": (lambda x, w: _probe(dc.matmul(x, dc.transpose(w))), [x, w]),
        "div_sqrt_exp": (lambda x: _probe(dc.div(dc.exp(x), dc.sqrt(dc.square(x) + 1.0))), [x]),
        "getitem": (lambda x: _probe(x[np.array([0, 0, 1])]), [x]),
        "cross_entropy": (lambda x: dc.cross_entropy(x, np.arange(n) % d), [x]),
    }
    for name, (fn, pts) in checks.items():
        err = grad_check(fn, pts)
        assert err < 1e-4, name


@pytest.mark.parametrize("backend", ["python", "cython"])
@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (2, 3)])
def test_conv_gradients(backend, stride, padding):
    if backend == "cython" and kernels.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    prev = kernels.use(backend)
    try:
        x1 = Tensor(rand(2, 3, 15, seed=3))
        w1 = Tensor(rand(4, 3, 5, seed=4))
        b1 = Tensor(rand(4, seed=5))
        assert grad_check(lambda x, w, b: _probe(dc.conv1d(x, w, b, stride, padding)), [x1, w1, b1]) < 1e-4
        x2 = Tensor(rand(2, 2, 7, 9, seed=6))
        w2 = Tensor(rand(3, 2, 3, 3, seed=7))
        b2 = Tensor(rand(3, seed=8))
        assert grad_check(lambda x, w, b: _probe(dc.conv2d(x, w, b, stride, padding)), [x2, w2, b2]) < 1e-4
    finally:
        kernels.use(prev)


def test_conv1d_matches_direct_sum():
    x = rand(2, 3, 11, seed=9)
    w = rand(4, 3, 3, seed=10)
    out = dc.conv1d(Tensor(x), Tensor(w), stride=2).data
    ref = np.zeros_like(out)
    for b in range(2):
        for o in range(4):
            for t in range(out.shape[2]):
                ref[b, o, t] = np.sum(x[b, :, 2 * t:2 * t + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_matches_direct_sum():
    x = rand(1, 2, 6, 7, seed=11)
    w = rand(3, 2, 3, 3, seed=12)
    out = dc.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for o in range(3):
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_backends_agree():
    from duple.diffcore import _kernels, _kernels_py

    x = np.ascontiguousarray(rand(3, 4, 40, seed=13))
    a = _kernels.im2col1d(x, 7, 2, 17)
    np.testing.assert_array_equal(a, _kernels_py.im2col1d(x, 7, 2, 17))
    np.testing.assert_allclose(_kernels.col2im1d(a, 4, 40, 7, 2), _kernels_py.col2im1d(a, 4, 40, 7, 2), atol=1e-12)
    x = np.ascontiguousarray(rand(2, 3, 9, 11, seed=14))
    c = _kernels.im2col2d(x, 3, 3, 2, 4, 5)
    np.testing.assert_array_equal(c, _kernels_py.im2col2d(x, 3, 3, 2, 4, 5))
    np.testing.assert_allclose(_kernels.col2im2d(c, 3, 9, 11, 3, 3, 2, 4, 5),
                               _kernels_py.col2im2d(c, 3, 9, 11, 3, 3, 2, 4, 5), atol=1e-12)


# parameters and updates

def test_zero_gradients_leave_params_unchanged():
    st_ = ParamStore(1)
    p = st_.glorot("w", (3, 4), 4, 3)
    before = p.data.copy()
    p.grad = np.zeros_like(p.data)
    st_.update(1e-3)
    np.testing.assert_array_equal(p.data, before)
    assert p.grad is None


def test_first_adam_step_moves_by_lr():
    st_ = ParamStore(1)
    p = st_.add("s", np.array(0.5))
    p.grad = np.array(1.0)
    st_.update(1e-3)
    # bias-corrected first step: lr * 1 / (1 + eps)
    assert p.data == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)


def test_non_finite_gradient_names_parameter():
    st_ = ParamStore(1)
    st_.add("ok", np.zeros(2)).grad = np.zeros(2)
    st_.add("bad", np.zeros(2)).grad = np.array([0.0, np.inf])
    with pytest.raises(FloatingPointError, match="'bad'"):
        st_.update()


def test_updates_are_deterministic():
    def run():
        s = ParamStore(5)
        w = s.glorot("w", (4, 4), 4, 4)
        for i in range(5):
            w.grad = np.sin(np.arange(16.0).reshape(4, 4) + i)
            s.update(1e-2)
        return w.data

    np.testing.assert_array_equal(run(), run())


def test_init_is_named_stream_and_bounded():
    a, b = ParamStore(7), ParamStore(7)
    a.glorot("x", (10, 20), 20, 10)
    a.glorot("y", (3,), 3, 3)
    b.glorot("y", (3,), 3, 3)
    b.glorot("x", (10, 20), 20, 10)
    np.testing.assert_array_equal(a["x"].data, b["x"].data)
    assert np.abs(a["x"].data).max() <= math.sqrt(6 / 30)
    assert not np.array_equal(ParamStore(8).glorot("x", (10, 20), 20, 10).data, a["x"].data)


def test_checkpoint_roundtrip(tmp_path):
    s = ParamStore(3)
    s.glorot("a.w", (2, 3), 3, 2)
    s.zeros("a.b", (2,))
    s.buffers["stat_mean"] = np.arange(4.0)
    dc.save_checkpoint(s, tmp_path / "ck.json", config_hash="abc")
    s2, doc = dc.load_checkpoint(tmp_path / "ck.json")
    assert doc["config_hash"] == "abc" and doc["format_version"] == 1
    assert s2.names() == s.names()
    for n in s.names():
        np.testing.assert_array_equal(s2[n].data, s[n].data)
    np.testing.assert_array_equal(s2.buffers["stat_mean"], np.arange(4.0))
