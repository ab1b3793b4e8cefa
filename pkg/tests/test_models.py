import numpy as np
import pytest
import torch

from lfa.errors import ConfigError, ShapeError
from lfa.models import (ArchitectureConfig, decode, discriminate_image,
                        discriminate_latent, encode, init_parameters)
from oracles import bn_eval_loop, conv2d_loop, conv_transpose2d_loop, leaky_loop

TOY = ArchitectureConfig.toy()


def zeroed(models):
    with torch.no_grad():
        for t in models.named_arrays().values():
            t.zero_()
    # batch-norm running variance must stay 1 to be a valid statistic
    for prefix, mod in models.modules_by_group().items():
        for name, b in mod.named_buffers():
            if name.endswith("running_var"):
                b.fill_(1.0)
    return models


def test_config_shape_arithmetic():
    cfg = ArchitectureConfig()
    cfg.validate()
    assert cfg.n_layers == 5
    assert cfg.bottleneck_size == 2            # 64 / 2^5
    assert cfg.bottleneck_size ** 2 * cfg.enc_channels[-1] == 1024


def test_config_patch16_with_five_layers_rejected():
    with pytest.raises(ConfigError):
        ArchitectureConfig(patch_size=16).validate()


def test_config_volume_mismatch_rejected():
    with pytest.raises(ConfigError, match="latent_dim"):
        ArchitectureConfig(patch_size=64, latent_dim=512).validate()


def test_init_same_seed_identical_bytes():
    def raw(models):
        return {n: t.detach().numpy().tobytes() for n, t in models.named_arrays().items()}
    a, b, c = (raw(init_parameters(TOY, seed=s)) for s in (11, 11, 12))
    assert a == b
    assert a != c


def test_init_default_statistics():
    m = init_parameters(ArchitectureConfig(), seed=0)
    w = m.encoder.net[0].weight.detach()
    assert abs(float(w.std()) - 0.02) < 0.005
    assert float(m.encoder.net[1].weight.detach().mean()) == 1.0      # BN scale
    p1 = m.proj.P1.detach()
    assert torch.allclose(torch.diagonal(p1).mean(), torch.tensor(0.5), atol=0.01)


def test_named_arrays_cover_projection():
    m = init_parameters(TOY, seed=0)
    names = m.named_arrays()
    assert "proj.P1" in names and "proj.P2" in names
    assert any(n.startswith("E.") for n in names)
    assert any(n.startswith("D2.") for n in names)


def test_encode_zero_params_gives_half(toy_pixels):
    m = zeroed(init_parameters(TOY, seed=0))
    z = encode(m, torch.from_numpy(toy_pixels[:4]))
    assert torch.allclose(z, torch.full_like(z, 0.5))


def test_encode_shape_and_range():
    m = init_parameters(ArchitectureConfig(), seed=0)
    x = torch.rand(3, 64, 64) * 2 - 1
    z = encode(m, x)
    assert z.shape == (3, 1024)
    assert float(z.min()) >= 0.0 and float(z.max()) <= 1.0


def test_encode_is_pure(toy_pixels):
    m = init_parameters(TOY, seed=4)
    x = torch.from_numpy(toy_pixels[:2])
    assert torch.equal(encode(m, x), encode(m, x))


def test_encode_matches_loop_convolution_oracle(rng):
    m = init_parameters(TOY, seed=3, dtype=torch.float64, weight_std=0.3)
    x = rng.uniform(-1, 1, size=(2, 1, 8, 8))
    h = x.copy()
    for i in range(TOY.n_layers):
        conv = m.encoder.net[3 * i]
        bn = m.encoder.net[3 * i + 1]
        h = conv2d_loop(h, conv.weight.detach().numpy(), conv.bias.detach().numpy(),
                        stride=2, pad=2)
        h = bn_eval_loop(h, bn.weight.detach().numpy(), bn.bias.detach().numpy(),
                         bn.running_mean.numpy(), bn.running_var.numpy(), bn.eps)
        h = leaky_loop(h, TOY.leaky_slope)
    want = 1.0 / (1.0 + np.exp(-h.reshape(2, -1)))
    got = encode(m, torch.from_numpy(x).squeeze(1)).numpy()
    assert np.abs(got - want).max() / max(np.abs(want).max(), 1e-12) < 1e-5


def test_decode_zero_everything_gives_zero_image():
    m = zeroed(init_parameters(TOY, seed=0))
    y = decode(m, torch.zeros(2, TOY.latent_dim))
    assert torch.equal(y, torch.zeros(2, 1, 8, 8))


def test_decode_shape():
    m = init_parameters(ArchitectureConfig(), seed=0)
    y = decode(m, torch.rand(1, 1024))
    assert y.shape == (1, 1, 64, 64)


def test_decode_matches_loop_transposed_convolution_oracle(rng):
    m = init_parameters(TOY, seed=5, dtype=torch.float64, weight_std=0.3)
    z = rng.uniform(0, 1, size=(2, TOY.latent_dim))
    h = z.reshape(2, TOY.enc_channels[-1], 2, 2)
    layers = list(m.decoder.net)
    i = 0
    while i < len(layers):
        conv = layers[i]
        h = conv_transpose2d_loop(h, conv.weight.detach().numpy(),
                                  conv.bias.detach().numpy(), stride=2, pad=2, out_pad=1)
        if i + 1 < len(layers):     # inner block: batch norm + relu
            bn = layers[i + 1]
            h = bn_eval_loop(h, bn.weight.detach().numpy(), bn.bias.detach().numpy(),
                             bn.running_mean.numpy(), bn.running_var.numpy(), bn.eps)
            h = np.maximum(h, 0.0)
            i += 3
        else:
            i += 1
    got = decode(m, torch.from_numpy(z)).numpy()
    assert np.abs(got - h).max() / max(np.abs(h).max(), 1e-12) < 1e-5


@pytest.mark.parametrize("cfg", [
    TOY,
    ArchitectureConfig(patch_size=16, latent_dim=64, enc_channels=(4, 8, 16),
                       disc_channels=(4, 8)),
])
def test_decode_encode_round_trip_shape(cfg, rng):
    m = init_parameters(cfg, seed=1)
    x = torch.from_numpy(rng.uniform(-1, 1, (3, cfg.patch_size, cfg.patch_size))
                         .astype(np.float32))
    z = encode(m, x)
    assert z.shape == (3, cfg.latent_dim)
    y = decode(m, z)
    assert y.shape == (3, 1, cfg.patch_size, cfg.patch_size)


def test_discriminators_zero_params_give_half(toy_pixels):
    m = zeroed(init_parameters(TOY, seed=0))
    p_img = discriminate_image(m, torch.from_numpy(toy_pixels[:3]))
    p_lat = discriminate_latent(m, torch.rand(3, TOY.latent_dim))
    assert torch.allclose(p_img, torch.full((3,), 0.5))
    assert torch.allclose(p_lat, torch.full((3,), 0.5))


def test_discriminator_output_support(rng):
    m = init_parameters(TOY, seed=8, weight_std=0.5)
    x = torch.from_numpy(rng.uniform(-1, 1, (16, 8, 8)).astype(np.float32))
    p = discriminate_image(m, x)
    assert p.shape == (16,)
    assert (p > 0).all() and (p < 1).all()
    assert (p >= TOY.prob_clamp).all() and (p <= 1 - TOY.prob_clamp).all()


def test_latent_discriminator_accepts_out_of_box_input():
    m = init_parameters(TOY, seed=2)
    p = discriminate_latent(m, torch.full((2, TOY.latent_dim), 3.5))
    assert torch.isfinite(p).all()


def test_latent_discriminator_matches_affine_oracle(rng):
    m = init_parameters(TOY, seed=6, dtype=torch.float64, weight_std=0.4)
    z = rng.uniform(0, 1, size=(3, TOY.latent_dim))
    h = z.copy()
    for lin in (m.d_latent.net[0], m.d_latent.net[2], m.d_latent.net[4]):
        h = h @ lin.weight.detach().numpy().T + lin.bias.detach().numpy()
        if lin is not m.d_latent.net[4]:
            h = leaky_loop(h, TOY.leaky_slope)
    want = np.clip(1 / (1 + np.exp(-h[:, 0])), TOY.prob_clamp, 1 - TOY.prob_clamp)
    got = discriminate_latent(m, torch.from_numpy(z)).numpy()
    assert np.abs(got - want).max() < 1e-6


def test_shape_errors():
    m = init_parameters(TOY, seed=0)
    with pytest.raises(ShapeError):
        encode(m, torch.zeros(2, 9, 9))
    with pytest.raises(ShapeError):
        decode(m, torch.zeros(2, TOY.latent_dim + 1))
    with pytest.raises(ShapeError):
        discriminate_latent(m, torch.zeros(2, 3, 4))


def test_assert_finite_flags_bad_parameter():
    m = init_parameters(TOY, seed=0)
    with torch.no_grad():
        m.proj.P1[0, 0] = float("nan")
    with pytest.raises(ConfigError, match="proj.P1"):
        m.assert_finite()


def test_inference_restores_training_flags():
    m = init_parameters(TOY, seed=0)
    m.train_mode(True)
    with m.inference():
        assert not m.encoder.training
    assert m.encoder.training
