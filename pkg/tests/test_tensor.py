import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from raincast import tensor as T
from raincast.tensor import Tensor

from oracles import bilinear_loops, conv3d_loops, conv3d_transpose_loops, maxpool3d_loops


def rand(rng, *shape, dtype=np.float32):
    return Tensor(rng.standard_normal(shape).astype(dtype))


# ---------------------------------------------------------------- conv3d
def test_conv3d_pointwise_scaling(kernel_backend):
    x = Tensor(np.ones((1, 1, 3, 3, 3)))
    k = Tensor(np.full((1, 1, 1, 1, 1), 2.0))
    np.testing.assert_array_equal(T.conv3d(x, k).data, np.full((1, 1, 3, 3, 3), 2.0))


def test_conv3d_delta_kernel_is_identity(kernel_backend, rng):
    x = rand(rng, 1, 1, 3, 4, 5)
    k = np.zeros((1, 1, 3, 3, 3), np.float32)
    k[0, 0, 1, 1, 1] = 1
    np.testing.assert_array_equal(T.conv3d(x, Tensor(k), padding=1).data, x.data)


def test_conv3d_matches_loop_oracle(kernel_backend, rng):
    x = rand(rng, 1, 2, 4, 4, 4)
    k = rand(rng, 3, 2, 2, 2, 2)
    out = T.conv3d(x, k).data
    np.testing.assert_allclose(out, conv3d_loops(x.data, k.data), atol=1e-5)


def test_conv3d_rejects_bad_shapes():
    x = Tensor(np.zeros((1, 2, 4, 4, 4)))
    with pytest.raises(ValueError, match="channels"):
        T.conv3d(x, Tensor(np.zeros((1, 3, 1, 1, 1))))
    with pytest.raises(ValueError, match="non-integral"):
        T.conv3d(x, Tensor(np.zeros((1, 2, 1, 1, 1))), stride=(1, 1, 2), padding=0)
    with pytest.raises(ValueError, match="exceeds"):
        T.conv3d(x, Tensor(np.zeros((1, 2, 5, 1, 1))))


# ------------------------------------------------------- conv3d_transpose
def test_conv3d_transpose_stamps_blocks(kernel_backend):
    x = Tensor(np.ones((1, 1, 1, 2, 2)))
    k = Tensor(np.ones((1, 1, 1, 2, 2)))
    out = T.conv3d_transpose(x, k, stride=(1, 2, 2)).data
    assert out.shape == (1, 1, 1, 4, 4)
    np.testing.assert_array_equal(out, np.ones((1, 1, 1, 4, 4)))


def test_conv3d_transpose_unit_kernel_identity(kernel_backend, rng):
    x = rand(rng, 2, 1, 2, 3, 3)
    out = T.conv3d_transpose(x, Tensor(np.ones((1, 1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv3d_transpose_equals_conv_input_gradient(kernel_backend, rng):
    w = rand(rng, 3, 2, 2, 3, 3, dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 2, 4, 5, 5)), requires_grad=True)
    y = T.conv3d(x, w, stride=(2, 2, 2), padding=(0, 1, 1))
    g = rng.standard_normal(y.shape)
    T.backward((y * Tensor(g)).sum())
    up = T.conv3d_transpose(Tensor(g), w, stride=(2, 2, 2), padding=(0, 1, 1))
    np.testing.assert_allclose(up.data, x.grad, atol=1e-10)


def test_conv3d_transpose_rejects_nonpositive_extent():
    with pytest.raises(ValueError, match="non-positive"):
        T.conv3d_transpose(Tensor(np.ones((1, 1, 1, 1, 1))), Tensor(np.ones((1, 1, 1, 1, 1))), padding=1)


# --------------------------------------------------------------- maxpool
def test_maxpool_constant(kernel_backend):
    x = Tensor(np.full((1, 2, 4, 4, 4), 7.0))
    np.testing.assert_array_equal(T.maxpool3d(x, (2, 2, 2)).data, np.full((1, 2, 2, 2, 2), 7.0))


def test_maxpool_row(kernel_backend):
    x = Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 1, 1, 1, 4))
    np.testing.assert_array_equal(T.maxpool3d(x, (1, 1, 2)).data.ravel(), [2, 4])


def test_maxpool_matches_oracle(kernel_backend, rng):
    x = rand(rng, 1, 1, 4, 4, 4)
    np.testing.assert_array_equal(T.maxpool3d(x, (2, 2, 2)).data,
                                  maxpool3d_loops(x.data, (2, 2, 2), (2, 2, 2)).astype(np.float32))


def test_maxpool_gradient_goes_to_first_tie(kernel_backend):
    x = Tensor(np.array([5.0, 5.0, 1.0, 5.0]).reshape(1, 1, 1, 1, 4), requires_grad=True)
    T.backward(T.maxpool3d(x, (1, 1, 2)).sum())
    np.testing.assert_array_equal(x.grad.ravel(), [1, 0, 0, 1])


def test_maxpool_rejects_large_window():
    with pytest.raises(ValueError, match="larger"):
        T.maxpool3d(Tensor(np.zeros((1, 1, 1, 2, 2))), (2, 2, 2))


# -------------------------------------------------------------- upsample
def test_upsample_constant_and_single_pixel(kernel_backend):
    np.testing.assert_array_equal(T.upsample_bilinear2d(Tensor(np.full((2, 3, 3), 4.5))).data,
                                  np.full((2, 6, 6), 4.5))
    np.testing.assert_array_equal(T.upsample_bilinear2d(Tensor(np.full((1, 1), 3.25))).data,
                                  np.full((2, 2), 3.25))


def test_upsample_2x2_matches_scalar_map(kernel_backend):
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = T.upsample_bilinear2d(Tensor(img, dtype=np.float64)).data
    np.testing.assert_allclose(out, bilinear_loops(img, 2), atol=1e-6)
    # first row: clamp, 0.25 and 0.75 blends, clamp
    np.testing.assert_allclose(out[0], [0.0, 0.25, 0.75, 1.0], atol=1e-12)


# -------------------------------------------------- exhaustive small sweep
def _small_cases(seed, count=60):
    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < count:
        n, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        ext = tuple(int(v) for v in rng.integers(1, 6, size=3))
        k = tuple(int(rng.integers(1, e + 1)) for e in ext)
        s = tuple(int(v) for v in rng.integers(1, 3, size=3))
        p = tuple(int(rng.integers(0, kk // 2 + 1)) for kk in k)
        if any((e + 2 * pp - kk) % ss for e, pp, kk, ss in zip(ext, p, k, s)):
            continue
        cases.append((int(n), int(cin), int(cout), ext, k, s, p))
    return cases


@pytest.mark.parametrize("case", _small_cases(0))
def test_conv_family_small_shape_sweep(case, kernel_backend):
    n, cin, cout, ext, k, s, p = case
    rng = np.random.default_rng(hash(case) % 2**32)
    x = rng.standard_normal((n, cin) + ext).astype(np.float32)
    w = rng.standard_normal((cout, cin) + k).astype(np.float32)
    b = rng.standard_normal(cout).astype(np.float32)
    got = T.conv3d(Tensor(x), Tensor(w), Tensor(b), stride=s, padding=p).data
    np.testing.assert_allclose(got, conv3d_loops(x, w, b, s, p), atol=1e-5)

    wt = rng.standard_normal((cin, cout) + k).astype(np.float32)
    out_ext = [(e - 1) * ss - 2 * pp + kk for e, ss, pp, kk in zip(ext, s, p, k)]
    if min(out_ext) > 0:
        got = T.conv3d_transpose(Tensor(x), Tensor(wt), stride=s, padding=p).data
        np.testing.assert_allclose(got, conv3d_transpose_loops(x, wt, s, p), atol=1e-5)

    win = tuple(min(kk, e) for kk, e in zip(k, ext))
    got = T.maxpool3d(Tensor(x), win, s).data
    np.testing.assert_allclose(got, maxpool3d_loops(x, win, s), atol=0)

    got = T.upsample_bilinear2d(Tensor(x), 2).data
    ref = np.stack([bilinear_loops(img, 2) for img in x.reshape(-1, *ext[1:])]).reshape(got.shape)
    np.testing.assert_allclose(got, ref, atol=1e-5)


def test_backends_agree(rng):
    if len(T.backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    x = rand(rng, 2, 3, 4, 6, 6)
    w = rand(rng, 4, 3, 3, 3, 3)
    outs = []
    for name in ("python", "compiled"):
        with T.backend.use_backend(name):
            xx = Tensor(x.data, requires_grad=True)
            y = T.upsample_bilinear2d(T.maxpool3d(T.conv3d(xx, w, padding=1), (1, 2, 2)))
            T.backward((y * y).sum())
            outs.append((y.data, xx.grad))
    np.testing.assert_allclose(outs[0][0], outs[1][0], atol=1e-5)
    np.testing.assert_allclose(outs[0][1], outs[1][1], rtol=1e-5, atol=1e-4)


# ------------------------------------------------------------ batch norm
def test_batch_norm_fixed_point(rng):
    x = rng.standard_normal((4, 3, 2, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3, 4), keepdims=True)) / x.std(axis=(0, 2, 3, 4), keepdims=True)
    st_ = T.BatchNormState.fresh(3, np.float64)
    out = T.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), st_, "train", eps=1e-12)
    np.testing.assert_allclose(out.data, x, atol=1e-5)


def test_batch_norm_constant_channel():
    x = Tensor(np.full((2, 2, 1, 3, 3), 5.0))
    st_ = T.BatchNormState.fresh(2)
    out = T.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), st_, "train")
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_batch_norm_output_statistics(rng):
    x = Tensor(rng.normal(3.0, 2.5, (5, 4, 2, 6, 6)))
    st_ = T.BatchNormState.fresh(4, np.float64)
    out = T.batch_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), st_, "train").data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3, 4)), 0.0, atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3, 4)), 1.0, atol=1e-4)


def test_batch_norm_eval_uses_running_stats(rng):
    st_ = T.BatchNormState(np.array([1.0, -2.0]), np.array([4.0, 0.25]))
    x = rng.standard_normal((3, 2, 1, 2, 2))
    out = T.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), st_, "eval", eps=0.0)
    ref = (x - np.array([1.0, -2.0]).reshape(1, 2, 1, 1, 1)) / np.array([2.0, 0.5]).reshape(1, 2, 1, 1, 1)
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_batch_norm_updates_running_stats(rng):
    st_ = T.BatchNormState.fresh(1, np.float64, momentum=0.5)
    x = rng.normal(2.0, 1.0, (2, 1, 1, 2, 2))
    T.batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), st_, "train")
    np.testing.assert_allclose(st_.running_mean, 0.5 * x.mean())
    np.testing.assert_allclose(st_.running_var, 0.5 + 0.5 * x.var(ddof=1))


# ----------------------------------------------------------- activations
def test_activation_values():
    np.testing.assert_array_equal(T.activation(Tensor([-1.0, 2.0]), "relu").data, [0, 2])
    assert T.activation(Tensor([0.0]), "sigmoid").item() == 0.5
    np.testing.assert_allclose(T.activation(Tensor(np.full(7, 3.0)), "softmax").data, np.full(7, 1 / 7))
    with pytest.raises(ValueError):
        T.activation(Tensor([1.0]), "softmax", axis=3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-800, 800), min_size=1, max_size=12))
def test_sigmoid_and_softmax_ranges(values):
    x = Tensor(np.array(values), dtype=np.float64)
    s = T.sigmoid(x).data
    assert np.all((s > 0) & (s < 1))
    assert abs(T.softmax(x).data.sum() - 1.0) < 1e-6


def test_sigmoid_open_interval_float32():
    s = T.sigmoid(Tensor(np.linspace(-15, 15, 61))).data
    assert np.all((s > 0) & (s < 1))


# --------------------------------------------------------------- dropout
def test_dropout_eval_and_zero_p(rng):
    x = rand(rng, 3, 4, 2, 2, 2)
    assert T.dropout(x, 0.4, "eval").data is x.data
    np.testing.assert_array_equal(T.dropout(x, 0.0, "train", rng=1).data, x.data)
    with pytest.raises(ValueError):
        T.dropout(x, 1.0)


def test_dropout_frequency_and_mean():
    x = Tensor(np.ones(100_000))
    out = T.dropout(x, 0.4, "train", rng=7).data
    assert abs((out == 0).mean() - 0.4) < 0.01
    assert abs(out.mean() - 1.0) < 0.01


def test_dropout_channelwise_zeroes_whole_channels():
    out = T.dropout(Tensor(np.ones((8, 16, 2, 3, 3))), 0.5, "train", rng=3, channelwise=True).data
    per_channel = out.reshape(8, 16, -1)
    assert np.all((per_channel == 0).all(-1) | (per_channel == 2).all(-1))


# -------------------------------------------------------------- backward
def test_backward_identity_and_sigmoid():
    x = Tensor([1.5], requires_grad=True)
    T.backward(x.sum())
    assert x.grad[0] == 1
    z = Tensor([0.0], requires_grad=True)
    T.backward(T.sigmoid(z).sum())
    assert z.grad[0] == pytest.approx(0.25)


def test_backward_rejects_non_scalar_and_reuse():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        T.backward(x * 2)
    loss = (x * 2).sum()
    T.backward(loss)
    with pytest.raises(RuntimeError):
        T.backward(loss)


def test_backward_accumulates_shared_paths():
    with T.precision(np.float64):
        x = Tensor(np.array([0.3, -0.7]), requires_grad=True)

        def f(x):
            y = T.sigmoid(x)
            return (y * y + y * x + T.exp(y)).sum()

        assert T.grad_check(f, [x], step=1e-6) < 1e-6


def test_tape_is_topological():
    a = Tensor([1.0], requires_grad=True)
    b = a * 2
    c = b + a
    d = c * b
    tape = T.Tape.from_output(d)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    assert len(tape) == 5  # a, the constant 2, b, c, d
    for node in tape.nodes:
        for p in node._parents:
            assert pos[id(p)] < pos[id(node)]


def test_grad_check_linear_exact():
    with T.precision(np.float64):
        x = Tensor([0.37])
        assert T.grad_check(lambda x: (x * 3.0).sum(), x) < 1e-8


def test_grad_check_composite_conv_relu_mean(rng):
    with T.precision(np.float64):
        x = Tensor(rng.standard_normal((1, 2, 3, 4, 4)))
        w = Tensor(rng.standard_normal((2, 2, 3, 3, 3)) * 0.3)
        f = lambda x, w: T.relu(T.conv3d(x, w, padding=1)).mean()
        assert T.grad_check(f, [x, w], step=1e-6) < 1e-3


def _grad_ops(rng):
    """(name, function, inputs) for every differentiable op."""
    r = lambda *s: Tensor(rng.standard_normal(s))
    pos = lambda *s: Tensor(rng.uniform(0.5, 2.0, s))
    bn = T.BatchNormState.fresh(2, np.float64)
    return [
        ("conv3d", lambda x, w, b: T.conv3d(x, w, b, stride=(1, 2, 1), padding=1).sum() * 0.1,
         [r(1, 2, 3, 5, 3), r(2, 2, 2, 3, 3), r(2)]),
        ("conv3d_transpose", lambda x, w: (T.conv3d_transpose(x, w, stride=2, padding=(0, 1, 0)) ** 2).mean(),
         [r(1, 2, 2, 3, 2), r(2, 3, 2, 3, 2)]),
        ("maxpool3d", lambda x: (T.maxpool3d(x, (1, 2, 2)) ** 2).sum(), [r(1, 2, 2, 4, 4)]),
        ("upsample", lambda x: (T.upsample_bilinear2d(x, 3) ** 2).sum(), [r(2, 3, 3)]),
        ("batch_norm", lambda x, g, b: (T.batch_norm(x, g, b, bn, "train") ** 3).mean(),
         [r(3, 2, 2, 2, 2), pos(2), r(2)]),
        ("layer_norm", lambda x, g, b: (T.layer_norm(x, g, b) ** 3).mean(), [r(3, 5), pos(5), r(5)]),
        ("sigmoid", lambda x: (T.sigmoid(x) ** 2).sum(), [r(6)]),
        ("softmax", lambda x: (T.softmax(x, axis=0) ** 2 * Tensor(np.arange(12.0).reshape(4, 3))).sum(),
         [r(4, 3)]),
        ("gelu", lambda x: T.gelu(x).sum(), [r(7)]),
        ("relu", lambda x: (T.relu(x) ** 2).sum(), [Tensor(rng.uniform(0.2, 1.0, 5) * rng.choice([-1, 1], 5))]),
        ("dropout", lambda x: (T.dropout(x, 0.4, "train", rng=11) ** 2).sum(), [r(20)]),
        ("matmul", lambda a, b: (T.matmul(a, b) ** 2).sum(), [r(2, 3, 4), r(4, 2)]),
        ("div/log/exp", lambda a, b: (T.log(a) / b + T.exp(b * 0.3)).sum(), [pos(4), pos(4)]),
        ("concat/getitem/pad", lambda a, b: (T.pad(T.concat([a, b], axis=1)[:, 1:4], ((1, 0), (0, 2))) ** 2).sum(),
         [r(2, 3), r(2, 2)]),
        ("broadcast/transpose", lambda a: (T.broadcast_to(a, (3, 2, 4)).transpose(2, 0, 1) * Tensor(
            np.arange(24.0).reshape(4, 3, 2))).sum(), [r(2, 4)]),
    ]


@pytest.mark.parametrize("point", range(10))
def test_grad_check_every_op(point):
    rng = np.random.default_rng(100 + point)
    with T.precision(np.float64):
        for name, f, inputs in _grad_ops(rng):
            err = T.grad_check(f, inputs, step=1e-5)
            assert err < 1e-3, (name, err)


# --------------------------------------------------------------- file io
def test_tensor_io_roundtrip(tmp_path, rng):
    x = rand(rng, 2, 3, 4)
    path = tmp_path / "x.nwf"
    T.tensor_io(path, "write", x)
    raw = path.read_bytes()
    assert raw.startswith(b"NWF1dtype=f32;shape=2,3,4;\n")
    y = T.tensor_io(path, "read")
    assert y.data.tobytes() == x.data.tobytes()


def test_tensor_io_corruption(tmp_path, rng):
    buf = T.encode_tensor(rand(rng, 3, 3))
    with pytest.raises(T.TensorFormatError, match="truncated"):
        T.decode_tensor(buf[:-5])
    with pytest.raises(T.TensorFormatError, match="magic"):
        T.decode_tensor(b"XXXX" + buf[4:])
    bad = buf.replace(b"shape=3,3", b"shape=3,4")
    with pytest.raises(T.TensorFormatError, match=r"48 bytes, found 36"):
        T.decode_tensor(bad)
