from dataclasses import replace

import numpy as np
import pytest

from wavecast.errors import ConfigError, ShapeError
from wavecast.gridio import GridField, VarId, derive_mask, global_grid
from wavecast.tensor import (Parameter, Tensor, grad_check, linear, make_rng, mul, reshape,
                             take_slice, tensor_sum)
from wavecast.vit import (ModelInput, ViTConfig, ViTForecaster, attention_weights, conv_head,
                          decoder_forward, embed_series, encoder_forward, init_vit_params,
                          model_forward, multi_head_attention, patchify, spatial_attention,
                          temporal_attention, terrain_encode, terrain_features, unpatchify)

TINY = ViTConfig(lat_count=8, lon_count=16, patch=4, d_model=8, n_heads=2, n_enc_blocks=1,
                 n_dec_blocks=1, t_in=2, t_force=1, conv_layers=1, mlp_ratio=2)


def random_input(config, depth, mask, rng):
    wave = rng.normal(size=(config.t_in, 4) + depth.geometry.shape)
    wind = rng.normal(size=(config.t_force, 2) + depth.geometry.shape)
    wave[:, :, mask.land] = 0.0
    wind[:, :, mask.land] = 0.0
    return ModelInput(wave, wind, depth, mask)


def test_patchify_shape_and_order():
    x = np.arange(16.0).reshape(1, 4, 4)
    patches = patchify(x, 2).data
    assert patches.shape == (4, 4)
    assert np.array_equal(patches[0], [0.0, 1.0, 4.0, 5.0])
    assert np.array_equal(patches[1], [2.0, 3.0, 6.0, 7.0])


def test_unpatchify_inverts_patchify(rng):
    x = rng.normal(size=(4, 8, 8))
    back = unpatchify(patchify(x, 4), 4, 8, 8, 4).data
    assert back.tobytes() == x.tobytes()


def test_patch_must_divide_grid():
    with pytest.raises(ShapeError):
        patchify(np.zeros((1, 8, 8)), 3)
    with pytest.raises(ConfigError):
        ViTConfig(lat_count=8, lon_count=16, patch=3)


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        ViTConfig(lat_count=8, lon_count=16, d_model=10, n_heads=4)


def test_terrain_identical_patches_embed_identically(tiny_depth, rng):
    params = init_vit_params(TINY, rng)
    encoded = terrain_encode(tiny_depth, params, TINY).data
    # Patches (1, 0) and (1, 3) are both open ocean at the same depth.
    assert np.allclose(encoded[4], encoded[7], rtol=0.0, atol=1e-12)
    assert not np.array_equal(encoded[0], encoded[1])


def test_terrain_constant_depth_and_zero_weights(tiny_geometry, tiny_depth, rng):
    params = init_vit_params(TINY, rng)
    flat = GridField(VarId.DEPTH, tiny_geometry, np.full(tiny_geometry.shape, -3000.0))
    encoded = terrain_encode(flat, params, TINY).data
    assert np.all(encoded == encoded[0])
    params['terrain.proj'].data[...] = 0.0
    assert not terrain_encode(tiny_depth, params, TINY).data.any()


def test_terrain_features_are_standardized(tiny_depth):
    features = terrain_features(tiny_depth, 4)
    assert features.shape == (8, 3)
    assert np.allclose(features.mean(axis=0), 0.0, atol=1e-12)


def test_terrain_grid_mismatch(rng):
    params = init_vit_params(TINY, rng)
    other = GridField(VarId.DEPTH, global_grid(4, 16), -np.ones((4, 16)))
    with pytest.raises(ShapeError):
        terrain_encode(other, params, TINY)


def test_temporal_attention_single_step(rng):
    params = init_vit_params(TINY, rng)
    tokens = Tensor(rng.normal(size=(1, 8, 8)))
    per_patch = reshape(tokens, (8, 1, 8))
    weights = attention_weights(per_patch, per_patch, params, 'enc0.temporal', 2).data
    assert np.array_equal(weights, np.ones_like(weights))
    assert temporal_attention(tokens, params, 'enc0', 2).shape == (1, 8, 8)


def test_temporal_attention_is_per_patch(rng):
    params = init_vit_params(TINY, rng)
    tokens = rng.normal(size=(3, 8, 8))
    tokens[:, 5] = tokens[:, 2]
    out = temporal_attention(Tensor(tokens), params, 'enc0', 2).data
    assert out.shape == (3, 8, 8)
    assert np.allclose(out[:, 5], out[:, 2], rtol=0.0, atol=1e-12)


def test_spatial_attention_permutation_equivariant(rng):
    params = init_vit_params(TINY, rng)
    tokens = rng.normal(size=(2, 8, 8))
    perm = rng.permutation(8)
    plain = spatial_attention(Tensor(tokens), params, 'enc0', 2).data
    permuted = spatial_attention(Tensor(tokens[:, perm]), params, 'enc0', 2).data
    assert np.max(np.abs(permuted - plain[:, perm])) < 1e-9


def test_spatial_attention_is_per_time(rng):
    params = init_vit_params(TINY, rng)
    tokens = rng.normal(size=(2, 8, 8))
    tokens[1] = tokens[0]
    out = spatial_attention(Tensor(tokens), params, 'enc0', 2).data
    assert np.allclose(out[0], out[1], rtol=0.0, atol=1e-12)


def test_attention_rows_sum_to_one(rng):
    params = init_vit_params(TINY, rng)
    queries = Tensor(rng.normal(scale=5.0, size=(2, 6, 8)))
    keys = Tensor(rng.normal(scale=5.0, size=(2, 9, 8)))
    weights = attention_weights(queries, keys, params, 'dec0.cross', 2).data
    assert weights.shape == (2, 2, 6, 9)
    assert np.max(np.abs(weights.sum(axis=-1) - 1.0)) < 1e-12


def test_single_key_attention_returns_its_value(rng):
    params = init_vit_params(TINY, rng)
    queries = Tensor(rng.normal(size=(1, 5, 8)))
    key = rng.normal(size=(1, 1, 8))
    out = multi_head_attention(queries, Tensor(key), params, 'dec0.cross', 2).data
    expected = key[0, 0] @ params['dec0.cross.wv'].data @ params['dec0.cross.wo'].data
    assert np.allclose(out[0], np.broadcast_to(expected, (5, 8)), atol=1e-12)


def test_encoder_shape_determinism_and_zero_params(tiny_depth, tiny_mask, rng):
    params = init_vit_params(TINY, make_rng(1))
    inp = random_input(TINY, tiny_depth, tiny_mask, rng)
    a = encoder_forward(inp, params, TINY).data
    b = encoder_forward(inp, params, TINY).data
    assert a.shape == (2, 8, 8)
    assert a.tobytes() == b.tobytes()
    for p in params:
        p.data[...] = 0.0
    assert np.all(np.isfinite(encoder_forward(inp, params, TINY).data))


def test_decoder_ignores_memory_without_cross_values(rng):
    params = init_vit_params(TINY, rng)
    params['dec0.cross.wv'].data[...] = 0.0
    wind_tokens = Tensor(rng.normal(size=(1, 8, 8)))
    a = decoder_forward(wind_tokens, Tensor(rng.normal(size=(2, 8, 8))), params, TINY).data
    b = decoder_forward(wind_tokens, Tensor(rng.normal(size=(2, 8, 8))), params, TINY).data
    assert a.shape == (1, 8, 8)
    assert np.array_equal(a, b)


def test_decoder_width_mismatch(rng):
    params = init_vit_params(TINY, rng)
    with pytest.raises(ShapeError):
        decoder_forward(Tensor(np.zeros((1, 8, 8))), Tensor(np.zeros((2, 8, 6))), params, TINY)


def test_identity_head_returns_projection(rng):
    params = init_vit_params(TINY, rng)
    kernel = np.zeros((4, 4, 3, 3))
    for c in range(4):
        kernel[c, c, 1, 1] = 1.0
    params['head.conv0.k'].data[...] = kernel
    decoded = Tensor(rng.normal(size=(1, 8, 8)))
    out = conv_head(decoded, params, TINY).data
    last = reshape(take_slice(decoded, 0, 0, 1), (8, 8))
    projected = linear(last, params['head.unpatch.w'], params['head.unpatch.b'])
    assert np.array_equal(out, unpatchify(projected, 4, 8, 16, 4).data)


def test_head_receptive_field(rng):
    config = replace(TINY, conv_layers=2)
    params = init_vit_params(config, rng)
    decoded = rng.normal(size=(1, 8, 8))
    base = conv_head(Tensor(decoded), params, config).data
    decoded[0, 5] += 1.0  # patch row 1, column 1: cells [4:8, 4:8]
    changed = np.abs(conv_head(Tensor(decoded), params, config).data - base) > 1e-12
    rows, cols = np.nonzero(changed.any(axis=0))
    assert rows.size > 0
    assert rows.min() >= 2 and rows.max() <= 7
    assert cols.min() >= 2 and cols.max() <= 9


def test_output_shape_and_land_mask(tiny_depth, tiny_mask, rng):
    model = ViTForecaster.create(TINY, make_rng(4))
    out = model.forward(random_input(TINY, tiny_depth, tiny_mask, rng)).data
    assert out.shape == (4, 8, 16)
    assert np.all(out[:, tiny_mask.land] == 0.0)


def test_same_seed_same_prediction(tiny_depth, tiny_mask, rng):
    inp = random_input(TINY, tiny_depth, tiny_mask, rng)
    a = ViTForecaster.create(TINY, make_rng(4)).forward(inp).data
    b = ViTForecaster.create(TINY, make_rng(4)).forward(inp).data
    assert a.tobytes() == b.tobytes()


def test_residual_head_adds_last_state(tiny_depth, tiny_mask, rng):
    config = replace(TINY, residual=True)
    params = init_vit_params(config, rng)
    for name in params.names():
        if name.startswith('head.'):
            params[name].data[...] = 0.0
    inp = random_input(config, tiny_depth, tiny_mask, rng)
    assert np.array_equal(model_forward(inp, params, config).data, inp.wave[-1])


def test_wrong_history_length(tiny_depth, tiny_mask, rng):
    params = init_vit_params(TINY, rng)
    inp = random_input(replace(TINY, t_in=3), tiny_depth, tiny_mask, rng)
    with pytest.raises(ShapeError):
        model_forward(inp, params, TINY)


def test_model_input_shape_checks(tiny_depth, tiny_mask):
    with pytest.raises(ShapeError):
        ModelInput(np.zeros((2, 3, 8, 16)), np.zeros((1, 2, 8, 16)), tiny_depth, tiny_mask)
    with pytest.raises(ShapeError):
        ModelInput(np.zeros((2, 4, 8, 16)), np.zeros((1, 2, 8, 8)), tiny_depth, tiny_mask)


def test_embedding_uses_one_matrix_per_time(rng):
    weight = Parameter('w', rng.normal(size=(2, 32, 8)))
    x = rng.normal(size=(2, 2, 8, 16))
    tokens = embed_series(x, weight, 4).data
    assert tokens.shape == (2, 8, 8)
    assert np.allclose(tokens[1], patchify(x[1], 4).data @ weight.data[1], atol=1e-12)


def test_full_model_gradient(rng):
    config = ViTConfig(lat_count=16, lon_count=16, patch=4, d_model=8, n_heads=2,
                       n_enc_blocks=1, n_dec_blocks=1, t_in=2, t_force=2, conv_layers=2,
                       mlp_ratio=2)
    geometry = global_grid(16, 16)
    values = -1000.0 * np.ones(geometry.shape)
    values[6:9, 3:7] = 200.0
    depth = GridField(VarId.DEPTH, geometry, values)
    mask = derive_mask(depth)
    inp = random_input(config, depth, mask, rng)
    params = init_vit_params(config, make_rng(2))
    weights = rng.normal(size=(4, 16, 16))

    def loss():
        return tensor_sum(mul(model_forward(inp, params, config), weights))

    err = grad_check(loss, list(params), h=1e-4, max_coords=4, rng=make_rng(3))
    assert err < 1e-4
