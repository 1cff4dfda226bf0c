import itertools

import numpy as np
import pytest
import scipy.linalg
import torch

from radarim import ccnn
from radarim.ccnn import ModelSpec


def _cplx(shape, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# ----------------------------------------------------------------------------
# architecture


@pytest.mark.parametrize("name,count", [
    ("ccnn3d-l", 38494), ("ccnn3d-m", 10176), ("ccnn3d-s", 2760), ("ccnn3d-xs", 780), ("ccnn2d", 23168)])
def test_param_count(name, count):
    spec = ccnn.preset(name)
    assert ccnn.param_count(spec) == count
    assert ccnn.build(spec).n_params() == count


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("3d", (4, 1), (3, 2, 3))
    with pytest.raises(ValueError):
        ModelSpec("3d", (4, 2), (3, 3, 3))
    with pytest.raises(ValueError):
        ModelSpec("2d", (8, 4), (3, 3), in_channels=16)
    with pytest.raises(ValueError):
        ModelSpec("4d", (1,), (3,))
    with pytest.raises(KeyError):
        ccnn.preset("ccnn3d-xxl")


def test_spec_dict_roundtrip():
    spec = ccnn.preset("ccnn3d-s", angle_padding="circular")
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    assert spec.padding == ("zero", "zero", "circular")


def test_bad_input_shape():
    model = ccnn.build(ccnn.preset("ccnn3d-xs"))
    with pytest.raises(ValueError):
        model(torch.zeros(1, 2, 2, 4, 4, 4))


# ----------------------------------------------------------------------------
# forward oracles


def _np_correlate(x, w, b, padding):
    """Direct complex cross-correlation, ``x [C_in, *S]``, ``w [C_out, C_in, *K]``."""
    c_out = w.shape[0]
    k = w.shape[2:]
    pads = [(kk - 1) // 2 for kk in k]
    spatial = x.shape[1:]
    out = np.zeros((c_out,) + spatial, complex)
    for pos in itertools.product(*[range(s) for s in spatial]):
        acc = np.array(b, complex)
        for off in itertools.product(*[range(kk) for kk in k]):
            src = []
            inside = True
            for ax, (p, o, s, mode) in enumerate(zip(pos, off, spatial, padding)):
                j = p + o - pads[ax]
                if mode == "circular":
                    j %= s
                elif not 0 <= j < s:
                    inside = False
                src.append(j)
            if inside:
                acc = acc + w[(slice(None), slice(None)) + off] @ x[(slice(None),) + tuple(src)]
        out[(slice(None),) + pos] = acc
    return out


@pytest.mark.parametrize("padding", [("zero", "zero"), ("circular", "zero"), ("zero", "circular")])
def test_conv2d_matches_direct_sum(padding):
    conv = ccnn.ComplexConv(3, 2, (3, 5), padding).double()
    conv.reset_parameters(np.random.default_rng(1))
    with torch.no_grad():
        conv.bias.copy_(torch.randn(2, 2, dtype=torch.float64))
    x = _cplx((1, 3, 6, 7))
    w = conv.weight.detach().numpy()
    b = conv.bias.detach().numpy()
    expected = _np_correlate(x[0], w[0] + 1j * w[1], b[0] + 1j * b[1], padding)
    np.testing.assert_allclose(ccnn.cconv_forward(x, conv)[0], expected, atol=1e-10)


def test_conv3d_matches_direct_sum():
    padding = ("zero", "zero", "circular")
    conv = ccnn.ComplexConv(1, 2, (3, 3, 3), padding).double()
    conv.reset_parameters(np.random.default_rng(2))
    x = _cplx((1, 1, 4, 5, 6), seed=3)
    w = conv.weight.detach().numpy()
    expected = _np_correlate(x[0], w[0] + 1j * w[1], np.zeros(2), padding)
    np.testing.assert_allclose(ccnn.cconv_forward(x, conv)[0], expected, atol=1e-10)


def test_crelu():
    x = np.array([1 - 2j, -3 + 4j, -1 - 1j])
    np.testing.assert_array_equal(ccnn.crelu_forward(x), [1, 4j, 0])


def test_batchnorm_whitens():
    # training-mode output with identity scale has identity covariance per channel
    bn = ccnn.ComplexBatchNorm(2).double()
    with torch.no_grad():
        bn.gamma.copy_(torch.tensor([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]], dtype=torch.float64))
    rng = np.random.default_rng(4)
    re = rng.standard_normal((8, 2, 5, 5))
    x = 3 + re + 1j * (0.5 * re + 0.2 * rng.standard_normal(re.shape))
    y = ccnn.cbn_forward(x, bn, "train")
    for c in range(2):
        v = np.stack([y[:, c].real.ravel(), y[:, c].imag.ravel()])
        np.testing.assert_allclose(v.mean(axis=1), 0, atol=1e-10)
        np.testing.assert_allclose(np.cov(v, bias=True), np.eye(2), atol=1e-3)


def test_batchnorm_matches_sqrtm_oracle():
    bn = ccnn.ComplexBatchNorm(1).double()
    g = np.array([[0.9], [1.3], [0.2]])
    beta = np.array([[0.1], [-0.4]])
    with torch.no_grad():
        bn.gamma.copy_(torch.from_numpy(g))
        bn.beta.copy_(torch.from_numpy(beta))
    x = _cplx((6, 1, 3, 4), seed=5) * (1 + 0.7j) + 0.3
    y = ccnn.cbn_forward(x, bn, "train")
    v = np.stack([x.real.ravel(), x.imag.ravel()])
    mu = v.mean(axis=1, keepdims=True)
    cov = np.cov(v, bias=True) + 1e-5 * np.eye(2)
    white = np.linalg.inv(scipy.linalg.sqrtm(cov)).real @ (v - mu)
    gamma = np.array([[g[0, 0], g[2, 0]], [g[2, 0], g[1, 0]]])
    out = gamma @ white + beta
    np.testing.assert_allclose(y.real.ravel(), out[0], atol=1e-9)
    np.testing.assert_allclose(y.imag.ravel(), out[1], atol=1e-9)


def test_batchnorm_running_statistics():
    bn = ccnn.ComplexBatchNorm(1).double()
    x = _cplx((4, 1, 3, 3), seed=6) + (2 - 1j)
    ccnn.cbn_forward(x, bn, "train")
    np.testing.assert_allclose(bn.running_mean[:, 0].numpy(), [0.1 * x.real.mean(), 0.1 * x.imag.mean()])
    # eval mode uses the stored statistics, not the batch
    y1 = ccnn.cbn_forward(x, bn, "eval")
    y2 = ccnn.cbn_forward(x[:1], bn, "eval")
    np.testing.assert_allclose(y1[:1], y2)


# ----------------------------------------------------------------------------
# gradients: central differences in float64


def _loss(y, u):
    return float(np.sum(u.real * y.real + u.imag * y.imag))


def _fd_check(model, x, mode, n_probe=12, seed=0, h=1e-6, rtol=1e-4):
    model.double()
    y, cache = ccnn.forward_with_cache(model, x, mode)
    u = _cplx(y.shape, seed=seed + 100)
    grads, gx = ccnn.model_backward(cache, u)
    rng = np.random.default_rng(seed)

    def loss_now(inp):
        state = {k: v.clone() for k, v in model.state_dict().items()}
        out = ccnn.model_forward(model, inp, mode)
        model.load_state_dict(state)  # running statistics must not drift between probes
        return _loss(out, u)

    checked = 0
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        g = grads[name]
        g_flat = np.stack([g.real, g.imag]).ravel() if np.iscomplexobj(g) else g.ravel()
        for idx in rng.choice(flat.numel(), size=min(n_probe, flat.numel()), replace=False):
            old = flat[idx].item()
            flat[idx] = old + h
            up = loss_now(x)
            flat[idx] = old - h
            down = loss_now(x)
            flat[idx] = old
            fd = (up - down) / (2 * h)
            assert fd == pytest.approx(g_flat[idx], rel=rtol, abs=1e-7), name
            checked += 1
    for idx in rng.choice(x.size, size=n_probe, replace=False):
        for part in (1, 1j):
            xp = x.copy().ravel()
            xm = x.copy().ravel()
            xp[idx] += part * h
            xm[idx] -= part * h
            fd = (loss_now(xp.reshape(x.shape)) - loss_now(xm.reshape(x.shape))) / (2 * h)
            an = gx.ravel()[idx].real if part == 1 else gx.ravel()[idx].imag
            assert fd == pytest.approx(an, rel=rtol, abs=1e-7)
            checked += 1
    return checked


def test_gradient_conv2d():
    model = ccnn.build(ModelSpec("2d", (3,), (3, 3), in_channels=3, padding=("zero", "circular")), seed=1)
    assert _fd_check(model, _cplx((2, 3, 5, 6)), "train") > 20


def test_gradient_conv3d():
    model = ccnn.build(ModelSpec("3d", (1,), (3, 3, 3), padding=("zero", "zero", "circular")), seed=2)
    assert _fd_check(model, _cplx((2, 1, 4, 4, 5), seed=1), "train") > 20


def test_gradient_crelu_and_batchnorm_train_mode():
    # conv -> CReLU -> BN -> conv -> CReLU -> BN -> conv exercises every layer type
    model = ccnn.build(ModelSpec("3d", (3, 2, 1), (3, 3, 3), batch_norm=True), seed=3)
    model.norms[1].gamma.data = torch.tensor([[0.8, 1.1, 0.9], [1.2, 0.7, 1.0], [0.1, -0.2, 0.05]])[:, :2]
    assert _fd_check(model, _cplx((3, 1, 4, 4, 4), seed=2), "train") > 30


def test_gradient_eval_mode_2d_stack():
    model = ccnn.build(ModelSpec("2d", (4, 2), (3, 3), in_channels=2, batch_norm=True), seed=4)
    assert _fd_check(model, _cplx((2, 2, 5, 5), seed=3), "eval") > 20


def test_backward_requires_cache():
    with pytest.raises(RuntimeError):
        ccnn.model_backward(None, np.zeros(1))


# ----------------------------------------------------------------------------
# equivariance


def _randomised(spec, seed):
    model = ccnn.build(spec, seed=seed, output_gain=1.0)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for conv in model.convs:
            conv.bias.normal_(0, 0.1, generator=gen)
        for norm in model.norms:
            if isinstance(norm, ccnn.ComplexBatchNorm):
                norm.beta.normal_(0, 0.1, generator=gen)
                norm.gamma[2].uniform_(-0.2, 0.2, generator=gen)
                norm.running_mean.normal_(0, 0.1, generator=gen)
                norm.running_cov[:2].uniform_(0.5, 1.5, generator=gen)
    return model


@pytest.mark.parametrize("mode", ["eval", "train"])
def test_angle_equivariance_circular(mode):
    model = _randomised(ccnn.preset("ccnn3d-xs", angle_padding="circular"), seed=7)
    x = _cplx((1, 1, 32, 32, 16), seed=8)
    fx = ccnn.model_forward(model, x, mode)
    for k in (1, 4, 8):
        shifted = ccnn.model_forward(model, np.roll(x, k, axis=-1), mode)
        assert np.max(np.abs(shifted - np.roll(fx, k, axis=-1))) < 1e-5


def test_angle_equivariance_zero_padding_interior():
    spec = ccnn.preset("ccnn3d-xs", angle_padding="zero")
    model = _randomised(spec, seed=9)
    x = _cplx((1, 1, 32, 32, 16), seed=10)
    fx = ccnn.model_forward(model, x, "eval")
    border = len(spec.channels) * (spec.kernel[2] - 1) // 2
    n = x.shape[-1]
    for k in (1, 4, 8):
        shifted = ccnn.model_forward(model, np.roll(x, k, axis=-1), "eval")
        rolled = np.roll(fx, k, axis=-1)
        keep = [i for i in range(border, n - border) if border <= i - k < n - border]
        assert keep
        assert np.max(np.abs(shifted[..., keep] - rolled[..., keep])) < 1e-5
    # and the border really differs, so the exclusion is not vacuous
    shifted = ccnn.model_forward(model, np.roll(x, 4, axis=-1), "eval")
    assert np.max(np.abs(shifted - np.roll(fx, 4, axis=-1))) > 1e-3


def test_range_doppler_equivariance_interior():
    model = _randomised(ccnn.preset("ccnn3d-xs"), seed=11)
    x = _cplx((1, 1, 16, 16, 8), seed=12)
    fx = ccnn.model_forward(model, x, "eval")
    shifted = ccnn.model_forward(model, np.roll(x, 2, axis=2), "eval")
    np.testing.assert_allclose(shifted[:, :, 5:13], np.roll(fx, 2, axis=2)[:, :, 5:13], atol=1e-5)


# ----------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip(tmp_path):
    model = _randomised(ccnn.preset("ccnn3d-s"), seed=3)
    header = {"spec": model.spec.to_dict(), "param_count": 2760, "note": "x"}
    ccnn.write_checkpoint(tmp_path / "m.ckp", header, ccnn.state_tensors(model, "model."))
    loaded, h = ccnn.load_model(tmp_path / "m.ckp")
    assert h == header
    for (k, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert torch.equal(a, b), k
    raw = (tmp_path / "m.ckp").read_bytes()
    assert raw[:4] == b"CKP1"
    with pytest.raises(ValueError):
        (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
        ccnn.read_checkpoint(tmp_path / "bad")


def test_same_seed_same_init():
    a = ccnn.build(ccnn.preset("ccnn3d-xs"), seed=5)
    b = ccnn.build(ccnn.preset("ccnn3d-xs"), seed=5)
    c = ccnn.build(ccnn.preset("ccnn3d-xs"), seed=6)
    assert torch.equal(a.convs[0].weight, b.convs[0].weight)
    assert not torch.equal(a.convs[0].weight, c.convs[0].weight)


def test_output_layer_gain_only_touches_last_weight():
    spec = ccnn.preset("ccnn3d-s")
    full = ccnn.build(spec, seed=2, output_gain=1.0)
    damped = ccnn.build(spec, seed=2, output_gain=0.25)
    for (name, a), (_, b) in zip(full.named_parameters(), damped.named_parameters()):
        scale = 0.25 if name == f"convs.{len(spec.channels) - 1}.weight" else 1.0
        torch.testing.assert_close(b, a * scale)
