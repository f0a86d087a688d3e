import numpy as np
import pytest
import torch

from eegdiff.unet import (
    DenoiserConfig,
    SelfAttention,
    SkipMerge,
    UNet,
    build_denoiser,
    gamma_embedding,
    load_checkpoint,
    save_checkpoint,
)


def test_default_network_on_deap_epochs():
    model = build_denoiser()
    assert model.epoch_shape == (32, 128)
    assert model.net.has_attention
    # grids (32,128) (16,64) (8,32) (4,16): only the last one is small enough
    assert model.config.attention_stages((32, 128)) == [3]
    x = torch.randn(2, 32, 128)
    out = model(x, torch.randn(2, 32, 128), torch.tensor([0.1, 0.9]))
    assert out.shape == (2, 32, 128)


def test_shape_mismatch_is_rejected(tiny_denoiser):
    with pytest.raises(ValueError):
        tiny_denoiser(torch.zeros(1, 2, 16), torch.zeros(1, 2, 8), torch.zeros(1))
    with pytest.raises(ValueError):
        tiny_denoiser(np.zeros((1, 3, 16)), np.zeros((1, 3, 16)), 0.5)


def test_indivisible_epoch_shape():
    with pytest.raises(ValueError, match="divisible"):
        UNet(DenoiserConfig(), (30, 128))


@pytest.mark.parametrize(
    "kwargs",
    [dict(channel_multipliers=()), dict(dropout=1.0), dict(gamma_embed_dim=7), dict(base_width=0)],
)
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        DenoiserConfig(**kwargs)


def test_gamma_embedding_numpy_matches_torch():
    g = np.array([0.0, 0.3, 1.0])
    a = gamma_embedding(g, 16)
    b = gamma_embedding(torch.tensor(g), 16).numpy()
    assert a.shape == (3, 16)
    assert np.allclose(a, b)
    # gamma = 0 gives sin(0)=0, cos(0)=1
    assert np.allclose(a[0, :8], 0) and np.allclose(a[0, 8:], 1)
    with pytest.raises(ValueError):
        gamma_embedding(g, 5)


def test_gamma_embedding_separates_nearby_levels():
    a, b = gamma_embedding(np.array([0.990, 0.991]), 128)
    assert np.abs(a - b).max() > 1e-2


def test_skip_merge_rescales():
    h, s = torch.ones(1, 2, 2, 2), torch.ones(1, 2, 2, 2)
    assert torch.allclose(SkipMerge()(h, s), torch.full_like(h, 2 ** 0.5))


def test_attention_preserves_shape():
    attn = SelfAttention(8)
    x = torch.randn(2, 8, 2, 4)
    assert attn(x).shape == x.shape


def test_numpy_call_matches_tensor_call_and_restores_mode(tiny_denoiser):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 2, 16)).astype(np.float32)
    y = rng.standard_normal((3, 2, 16)).astype(np.float32)
    tiny_denoiser.net.train()
    out_np = tiny_denoiser(x, y, 0.5)
    assert tiny_denoiser.net.training
    tiny_denoiser.net.eval()
    with torch.no_grad():
        out_t = tiny_denoiser(torch.from_numpy(x), torch.from_numpy(y), torch.full((3,), 0.5))
    assert np.allclose(out_np, out_t.numpy(), atol=1e-6)
    single = tiny_denoiser(x[0], y[0], 0.5)
    assert single.shape == (2, 16)
    assert np.allclose(single, out_np[0], atol=1e-6)


def test_nan_output_is_reported(tiny_denoiser):
    with torch.no_grad():
        for p in tiny_denoiser.net.tail.parameters():
            p.fill_(float("nan"))
    with pytest.raises(FloatingPointError):
        tiny_denoiser(np.zeros((1, 2, 16)), np.zeros((1, 2, 16)), 0.5)


def test_seeded_construction_is_reproducible(tiny_config):
    a = build_denoiser(tiny_config, (2, 16), seed=3)
    b = build_denoiser(tiny_config, (2, 16), seed=3)
    for pa, pb in zip(a.net.parameters(), b.net.parameters()):
        assert torch.equal(pa, pb)


def test_checkpoint_round_trip(tmp_path, tiny_denoiser):
    save_checkpoint(tmp_path / "ck", tiny_denoiser, meta={"seed": 4}, extra={"step": 9})
    model, sidecar, blob = load_checkpoint(tmp_path / "ck")
    assert sidecar["seed"] == 4 and blob["step"] == 9
    assert model.config == tiny_denoiser.config
    x = np.random.default_rng(0).standard_normal((2, 2, 16)).astype(np.float32)
    assert np.array_equal(model(x, x, 0.3), tiny_denoiser(x, x, 0.3))


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path)
