import numpy as np
import pytest

from fd import numeric_grad, rel_err
from lamae import tensor as T
from lamae.errors import ConfigError, DimensionError
from lamae.params import ModelParams
from lamae.tensor import Tensor, no_grad
from lamae.vit import (
    BlockConfig,
    PatchGrid,
    init_embed,
    init_stack,
    patch_embed,
    patchify,
    sincos_2d,
    sincos_3d,
    time_channels,
    transformer_stack,
    tube_embed,
    tubify,
    unpatchify,
)


@pytest.mark.parametrize("size,patch,tokens", [(224, 14, 256), (28, 7, 16), (32, 8, 16)])
def test_token_counts(size, patch, tokens):
    assert PatchGrid(size, patch).tokens_per_frame == tokens


def test_grid_rejects_indivisible():
    with pytest.raises((ConfigError, DimensionError, ValueError)):
        PatchGrid(30, 7)


def test_patchify_roundtrip(rng):
    g = PatchGrid(28, 7, channels=2)
    x = rng.normal(size=(3, 2, 28, 28))
    p = patchify(x, g)
    assert p.shape == (3, 16, 2 * 49)
    assert np.array_equal(unpatchify(p, g), x)
    # patch 5 is row 1, column 1
    assert np.array_equal(p[0, 5].reshape(2, 7, 7), x[0, :, 7:14, 7:14])


def test_zero_image_gives_pure_positions():
    g = PatchGrid(28, 7)
    p = ModelParams()
    init_embed(p, 0, g, 16)
    p["patch_embed.b"].data[:] = 0
    out = patch_embed(np.zeros((28, 28)), g, p)
    assert np.array_equal(out.data, sincos_2d(4, 16))


@pytest.mark.parametrize("frames,size,patch,tokens", [(8, 224, 14, 2048), (2, 28, 7, 32)])
def test_tube_token_counts(frames, size, patch, tokens):
    g = PatchGrid(size, patch)
    p = ModelParams()
    init_embed(p, 0, g, 8)
    assert tube_embed(np.zeros((frames, size, size)), g, p).shape == (tokens, 8)


def test_identical_frames_differ_only_in_time_channels(rng):
    g = PatchGrid(28, 7)
    p = ModelParams()
    init_embed(p, 0, g, 16)
    frame = rng.random((28, 28))
    out = tube_embed(np.stack([frame, frame]), g, p).data.reshape(2, 16, 16)
    diff = out[0] != out[1]
    tc = time_channels(16)
    assert not diff[:, tc.stop :].any()
    assert diff[:, tc].any()


def test_tubify_groups_time(rng):
    g = PatchGrid(28, 7, time_patch=2)
    clip = rng.random((4, 1, 28, 28))
    tubes = tubify(clip, g)
    assert tubes.shape == (2, 16, 2 * 49)
    per_frame = patchify(clip, g)
    assert np.array_equal(tubes[1, 3], np.concatenate([per_frame[2, 3], per_frame[3, 3]]))


def test_sincos_3d_layout():
    pos = sincos_3d(3, 4, 16)
    assert pos.shape == (48, 16)
    # same time step -> same time block; same site -> same spatial block
    assert np.array_equal(pos[0, :4], pos[15, :4])
    assert np.array_equal(pos[0, 4:], pos[16, 4:])


def _stack(layers, seed=0, d=8, heads=2):
    cfg = BlockConfig(d, layers, heads)
    p = ModelParams()
    init_stack(p, seed, "s", cfg)
    return cfg, p.astype(np.float64)


def test_zero_layer_stack_is_identity(rng):
    cfg, p = _stack(0)
    x = Tensor(rng.normal(size=(5, 8)))
    assert transformer_stack(x, cfg, p, "s") is x
    assert len(p) == 0


def test_stack_permutation_equivariance(rng):
    cfg, p = _stack(2)
    x = rng.normal(size=(9, 8))
    perm = rng.permutation(9)
    out = transformer_stack(Tensor(x), cfg, p, "s").data
    outp = transformer_stack(Tensor(x[perm]), cfg, p, "s").data
    assert np.array_equal(out[perm], outp)


def test_one_layer_stack_gradient(rng):
    cfg, p = _stack(1)
    x = Tensor(rng.normal(size=(2, 5, 8)), requires_grad=True)
    r = rng.normal(size=(2, 5, 8))
    T.tsum(transformer_stack(x, cfg, p, "s") * Tensor(r)).backward()

    def f():
        with no_grad():
            return float(np.sum(transformer_stack(Tensor(x.data), cfg, p, "s").data * r))

    assert rel_err(x.grad, numeric_grad(f, x.data, 1e-5)) < 1e-4
    for name in ("s.blocks.0.attn.qkv.w", "s.blocks.0.mlp.fc1.b", "s.norm.g"):
        assert rel_err(p[name].grad, numeric_grad(f, p[name].data, 1e-5)) < 1e-4, name


def test_block_config_validation():
    with pytest.raises((ConfigError, ValueError)):
        BlockConfig(10, 1, 3)
