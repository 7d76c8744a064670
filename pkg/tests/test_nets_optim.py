import numpy as np
import pytest

from gzsl import autodiff as ad
from gzsl.autodiff import Tensor
from gzsl.nets import NetSpec, build_autoencoder, build_network, residual_block
from gzsl.optim import Adam, adam_step
from gzsl.selftest import gradcheck, tiny_autoencoder
from gzsl.train import LatentPartition, Model


def test_encoder_decoder_shapes():
    enc, dec = build_autoencoder(NetSpec("encoder", 32, 32, 3, latent=100), seed=0)
    x = Tensor(np.random.default_rng(0).uniform(size=(2, 3, 32, 32)))
    z = enc(x)
    assert z.shape == (2, 100)
    y = dec(z)
    assert y.shape == (2, 3, 32, 32) and np.isfinite(y.data).all()
    # the decoder is linear; Model.decode clips for display and metrics
    m = Model(enc, dec, LatentPartition((50, 50)))
    img = m.decode(m.encode(x.data))
    assert img.min() >= 0 and img.max() <= 1
    np.testing.assert_array_equal(img, np.clip(y.data, 0, 1))


def test_full_scale_encoder_shape():
    enc = build_network(NetSpec("encoder", 128, 128, 3, latent=100, base=16, channel_scale=1), seed=0)
    assert enc(Tensor(np.zeros((1, 3, 128, 128)))).shape == (1, 100)


def test_decoder_mirrors_encoder():
    spec = NetSpec("encoder", 32, 32, 3, latent=40, res_blocks=2)
    enc, dec = build_autoencoder(spec, 0)
    assert sum(k.startswith("encoder.res") for k in enc.params) == sum(k.startswith("decoder.res") for k in dec.params)
    assert len(enc.params) == len(dec.params)
    # transpose-conv weights are [C_in, F_out, k, k], so mirrored layers share a shape
    for e, d in (("conv1", "deconv3"), ("conv2", "deconv2"), ("conv3", "deconv1")):
        assert enc.params[f"encoder.{e}.weight"].shape == dec.params[f"decoder.{d}.weight"].shape


def test_same_seed_same_parameters():
    a = build_network(NetSpec("decoder", latent=20), 5)
    b = build_network(NetSpec("decoder", latent=20), 5)
    c = build_network(NetSpec("decoder", latent=20), 6)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    assert not all(np.array_equal(a.params[k].data, c.params[k].data) for k in a.params)


@pytest.mark.parametrize("extent", [30, 12, 0])
def test_extent_must_divide_cumulative_stride(extent):
    with pytest.raises(ValueError, match="divisible"):
        build_network(NetSpec("encoder", extent, 32), 0)


def test_residual_block_identity_and_shape():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 8, 16, 16)))
    zero = {f"r.conv{i}.{p}": Tensor(np.zeros((8, 8, 3, 3)) if p == "weight" else np.zeros(8))
            for i in (1, 2) for p in ("weight", "bias")}
    np.testing.assert_array_equal(residual_block(x, zero, "r").data, x.data)
    rand = {k: Tensor(rng.normal(size=v.shape)) for k, v in zero.items()}
    assert residual_block(x, rand, "r").shape == x.shape


def test_composite_encoder_decoder_l1_gradcheck():
    rng = np.random.default_rng(3)
    with ad.precision(np.float64):
        enc, dec = tiny_autoencoder(3)
        params = enc.parameters() + dec.parameters()
        for p in params:
            p.data = p.data.astype(np.float64)
        x = rng.uniform(size=(2, 3, 8, 8))
        err, checked, _ = gradcheck(lambda: ad.l1_loss(dec(enc(Tensor(x))), Tensor(x)), params, max_coords=5)
    assert checked > 50 and err <= 1e-3


# ------------------------------------------------------------------- adam

def test_adam_zero_gradient_leaves_parameters():
    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = Adam([p])
    p.grad = np.zeros(2, dtype=np.float32)
    adam_step(opt)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert opt.step_count == 1


def test_adam_descends_on_square():
    x = Tensor([1.0], requires_grad=True)
    opt = Adam([x], lr=0.1)
    with ad.Graph() as g:
        g.backward(ad.sum(ad.mul(x, x)))
    opt.step()
    assert x.data[0] < 1.0


def test_adam_converges_on_quadratic():
    target = np.array([0.7, -1.3])
    x = Tensor([3.0, 2.0], requires_grad=True)
    opt = Adam([x], lr=0.05)
    for _ in range(200):
        opt.zero_grad()
        with ad.Graph() as g:
            d = ad.sub(x, Tensor(target))
            g.backward(ad.sum(ad.mul(d, d)))
        opt.step()
    np.testing.assert_allclose(x.data, target, atol=1e-2)


def test_adam_missing_gradient():
    opt = Adam([Tensor([1.0], requires_grad=True, name="w")])
    with pytest.raises(ValueError, match="w"):
        opt.step()
