"""Spatiotemporal vision transformer for one-step wave forecasting.

Waves of the last ``t_in`` steps are cut into p x p patches and embedded as
tokens; a per-patch terrain encoding stands in for positional encoding. The
encoder alternates attention over time (per patch) and over patches (per
time). The decoder embeds the forcing winds the same way, attends to itself
and then to the encoder memory (wind tokens query, wave memory answers).
A linear un-patch projection and a small 3x3 convolution stack turn the
last forcing step's tokens back into a 4-channel field.

Token tensors are laid out [time, patch, d_model]; patches are row-major
over the patch grid.
"""
import logging
import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from wavecast.errors import ConfigError, ShapeError
from wavecast.gridio import GridField, LandMask
from wavecast.tensor import (ParamSet, Tensor, add, conv2d, gelu, glorot_uniform,
                             layer_norm, linear, matmul, mul, reshape, softmax_lastdim,
                             take_slice, transpose, where_mask)

WAVE_CHANNELS = 4
WIND_CHANNELS = 2
TERRAIN_FEATURES = 3
KIND = 'vit'


@dataclass(frozen=True)
class ViTConfig:
    lat_count: int = 32
    lon_count: int = 64
    patch: int = 4
    d_model: int = 64
    n_heads: int = 4
    n_enc_blocks: int = 2
    n_dec_blocks: int = 2
    t_in: int = 2
    t_force: int = 1
    conv_layers: int = 2
    mlp_ratio: int = 4
    use_terrain: bool = True
    residual: bool = False

    def __post_init__(self):
        if self.patch < 1 or self.lat_count % self.patch or self.lon_count % self.patch:
            raise ConfigError(f'patch={self.patch} must divide the '
                              f'{self.lat_count}x{self.lon_count} grid')
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f'n_heads={self.n_heads} must divide d_model={self.d_model}')
        if min(self.t_in, self.t_force, self.conv_layers, self.mlp_ratio) < 1:
            raise ConfigError('t_in, t_force, conv_layers and mlp_ratio must be >= 1')
        if self.n_enc_blocks < 0 or self.n_dec_blocks < 0:
            raise ConfigError('Block counts must be >= 0')

    @classmethod
    def from_run_config(cls, config) -> 'ViTConfig':
        return cls(**{f.name: config.get(f.name) for f in fields(cls)})

    @property
    def n_patches(self) -> int:
        return (self.lat_count // self.patch) * (self.lon_count // self.patch)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class ModelInput:
    """Normalized, land-zeroed model input.

    wave: [t_in, 4, H, W] oldest first; wind: [t_force, 2, H, W] ending at
    the target time.
    """
    wave: np.ndarray
    wind: np.ndarray
    depth: GridField
    mask: LandMask

    def __post_init__(self):
        grid = self.depth.geometry.shape
        if self.wave.ndim != 4 or self.wave.shape[1:] != (WAVE_CHANNELS,) + grid:
            raise ShapeError(f'Wave history {self.wave.shape} does not match '
                             f'[t_in, {WAVE_CHANNELS}, {grid[0]}, {grid[1]}]')
        if self.wind.ndim != 4 or self.wind.shape[1:] != (WIND_CHANNELS,) + grid:
            raise ShapeError(f'Wind forcing {self.wind.shape} does not match '
                             f'[t_force, {WIND_CHANNELS}, {grid[0]}, {grid[1]}]')
        if self.mask.ocean.shape != grid:
            raise ShapeError(f'Mask {self.mask.ocean.shape} does not match grid {grid}')


def _check_divisible(height: int, width: int, p: int) -> None:
    if p < 1 or height % p or width % p:
        raise ShapeError(f'Patch size {p} does not divide the {height}x{width} grid')


def patchify(x: Tensor, p: int) -> Tensor:
    """[C, H, W] -> [N, C*p*p], patches row-major, values ordered (c, i, j)."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim != 3:
        raise ShapeError(f'patchify expects [C, H, W], got {x.shape}')
    series = patchify_series(reshape(x, (1,) + x.shape), p)
    return reshape(series, series.shape[1:])


def patchify_series(x: Tensor, p: int) -> Tensor:
    """[T, C, H, W] -> [T, N, C*p*p]."""
    t, c, height, width = x.shape
    _check_divisible(height, width, p)
    rows, cols = height // p, width // p
    blocks = reshape(x, (t, c, rows, p, cols, p))
    blocks = transpose(blocks, (0, 2, 4, 1, 3, 5))
    return reshape(blocks, (t, rows * cols, c * p * p))


def unpatchify(tokens: Tensor, channels: int, height: int, width: int, p: int) -> Tensor:
    """Inverse of patchify."""
    if not isinstance(tokens, Tensor):
        tokens = Tensor(tokens)
    _check_divisible(height, width, p)
    rows, cols = height // p, width // p
    if tokens.shape != (rows * cols, channels * p * p):
        raise ShapeError(f'Cannot unpatchify {tokens.shape} into [{channels}, {height}, {width}] '
                         f'with p={p}')
    blocks = reshape(tokens, (rows, cols, channels, p, p))
    blocks = transpose(blocks, (2, 0, 3, 1, 4))
    return reshape(blocks, (channels, height, width))


def terrain_features(depth: GridField, p: int) -> np.ndarray:
    """Per-patch (mean elevation, min elevation, ocean fraction), each
    standardized across patches; [N, 3]."""
    values = depth.values
    height, width = values.shape
    _check_divisible(height, width, p)
    blocks = values.reshape(height // p, p, width // p, p).transpose(0, 2, 1, 3)
    blocks = blocks.reshape(-1, p * p)
    raw = np.stack([blocks.mean(axis=1), blocks.min(axis=1), (blocks < 0.0).mean(axis=1)], axis=1)
    std = raw.std(axis=0)
    std[std == 0.0] = 1.0
    return (raw - raw.mean(axis=0)) / std


def terrain_encode(depth: GridField, params: ParamSet, config: ViTConfig) -> Tensor:
    """[N, d_model] embedding added to every wave and wind token."""
    if depth.geometry.shape != (config.lat_count, config.lon_count):
        raise ShapeError(f'Depth grid {depth.geometry.shape} does not match model grid '
                         f'{(config.lat_count, config.lon_count)}')
    weight = params['terrain.proj']
    features = Tensor(terrain_features(depth, config.patch), dtype=weight.data.dtype)
    return linear(features, weight)


def attention_weights(queries: Tensor, keys: Tensor, params: ParamSet, prefix: str,
                      n_heads: int) -> Tensor:
    """Softmax attention matrix [B, heads, Lq, Lk]."""
    q = _split_heads(matmul(queries, params[f'{prefix}.wq']), n_heads)
    k = _split_heads(matmul(keys, params[f'{prefix}.wk']), n_heads)
    head_dim = q.shape[-1]
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    return softmax_lastdim(scores)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    batch, length, d_model = x.shape
    x = reshape(x, (batch, length, n_heads, d_model // n_heads))
    return transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    batch, n_heads, length, head_dim = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (batch, length, n_heads * head_dim))


def multi_head_attention(queries: Tensor, keys: Tensor, params: ParamSet, prefix: str,
                         n_heads: int) -> Tensor:
    """[B, Lq, d] attending to [B, Lk, d]; no projection biases."""
    if queries.shape[-1] != keys.shape[-1]:
        raise ShapeError(f'Attention width mismatch: queries {queries.shape}, keys {keys.shape}')
    weights = attention_weights(queries, keys, params, prefix, n_heads)
    v = _split_heads(matmul(keys, params[f'{prefix}.wv']), n_heads)
    return matmul(_merge_heads(matmul(weights, v)), params[f'{prefix}.wo'])


def _add_norm(x: Tensor, sublayer: Tensor, params: ParamSet, prefix: str) -> Tensor:
    return layer_norm(add(x, sublayer), params[f'{prefix}.gain'], params[f'{prefix}.bias'])


def temporal_attention(tokens: Tensor, params: ParamSet, prefix: str, n_heads: int) -> Tensor:
    """Self-attention over time, separately for every patch."""
    per_patch = transpose(tokens, (1, 0, 2))
    attended = multi_head_attention(per_patch, per_patch, params, f'{prefix}.temporal', n_heads)
    out = _add_norm(per_patch, attended, params, f'{prefix}.ln1')
    return transpose(out, (1, 0, 2))


def spatial_attention(tokens: Tensor, params: ParamSet, prefix: str, n_heads: int) -> Tensor:
    """Self-attention over patches, separately for every time index."""
    attended = multi_head_attention(tokens, tokens, params, f'{prefix}.spatial', n_heads)
    return _add_norm(tokens, attended, params, f'{prefix}.ln2')


def mlp(tokens: Tensor, params: ParamSet, prefix: str) -> Tensor:
    hidden = gelu(linear(tokens, params[f'{prefix}.mlp.w1'], params[f'{prefix}.mlp.b1']))
    out = linear(hidden, params[f'{prefix}.mlp.w2'], params[f'{prefix}.mlp.b2'])
    return _add_norm(tokens, out, params, f'{prefix}.ln3')


def embed_series(x: np.ndarray, weight: Tensor, p: int) -> Tensor:
    """[T, C, H, W] -> [T, N, d], one embedding matrix per time index."""
    tokens = patchify_series(Tensor(x, dtype=weight.data.dtype), p)
    return matmul(tokens, weight)


def encoder_forward(inp: ModelInput, params: ParamSet, config: ViTConfig,
                    terrain: Optional[Tensor] = None) -> Tensor:
    """Wave memory [t_in, N, d_model]."""
    if inp.wave.shape[0] != config.t_in:
        raise ShapeError(f'Wave history has {inp.wave.shape[0]} steps, model expects '
                         f'{config.t_in}')
    tokens = embed_series(inp.wave, params['wave.embed'], config.patch)
    if terrain is not None:
        tokens = add(tokens, terrain)
    for block in range(config.n_enc_blocks):
        prefix = f'enc{block}'
        tokens = temporal_attention(tokens, params, prefix, config.n_heads)
        tokens = spatial_attention(tokens, params, prefix, config.n_heads)
        tokens = mlp(tokens, params, prefix)
    return tokens


def decoder_forward(wind_tokens: Tensor, memory: Tensor, params: ParamSet,
                    config: ViTConfig) -> Tensor:
    """Wind tokens [t_force, N, d] attend to themselves, then to the
    flattened [t_in * N] encoder memory."""
    if wind_tokens.shape[-1] != memory.shape[-1]:
        raise ShapeError(f'Decoder width {wind_tokens.shape[-1]} does not match encoder '
                         f'memory width {memory.shape[-1]}')
    t_force, n_patches, d_model = wind_tokens.shape
    tokens = reshape(wind_tokens, (1, t_force * n_patches, d_model))
    flat_memory = reshape(memory, (1, memory.shape[0] * memory.shape[1], memory.shape[2]))
    for block in range(config.n_dec_blocks):
        prefix = f'dec{block}'
        attended = multi_head_attention(tokens, tokens, params, f'{prefix}.self', config.n_heads)
        tokens = _add_norm(tokens, attended, params, f'{prefix}.ln1')
        crossed = multi_head_attention(tokens, flat_memory, params, f'{prefix}.cross',
                                       config.n_heads)
        tokens = _add_norm(tokens, crossed, params, f'{prefix}.ln2')
        tokens = mlp(tokens, params, prefix)
    return reshape(tokens, (t_force, n_patches, d_model))


def conv_head(decoded: Tensor, params: ParamSet, config: ViTConfig,
              mask: Optional[LandMask] = None) -> Tensor:
    """Last forcing step's tokens -> [4, H, W]; land re-masked when a mask
    is given."""
    last = take_slice(decoded, 0, decoded.shape[0] - 1, decoded.shape[0])
    last = reshape(last, last.shape[1:])
    projected = linear(last, params['head.unpatch.w'], params['head.unpatch.b'])
    field = unpatchify(projected, WAVE_CHANNELS, config.lat_count, config.lon_count, config.patch)
    for layer in range(config.conv_layers):
        if layer:
            field = gelu(field)
        field = add(conv2d(field, params[f'head.conv{layer}.k']), params[f'head.conv{layer}.b'])
    if mask is not None:
        field = where_mask(field, mask.ocean)
    return field


def model_forward(inp: ModelInput, params: ParamSet, config: ViTConfig) -> Tensor:
    """Normalized next wave state [4, H, W], valid one step after the last
    history step."""
    if inp.wind.shape[0] != config.t_force:
        raise ShapeError(f'Wind forcing has {inp.wind.shape[0]} steps, model expects '
                         f'{config.t_force}')
    terrain = terrain_encode(inp.depth, params, config) if config.use_terrain else None
    memory = encoder_forward(inp, params, config, terrain)
    wind_tokens = embed_series(inp.wind, params['wind.embed'], config.patch)
    if terrain is not None:
        wind_tokens = add(wind_tokens, terrain)
    decoded = decoder_forward(wind_tokens, memory, params, config)
    if not config.residual:
        return conv_head(decoded, params, config, inp.mask)
    field = conv_head(decoded, params, config)
    last = Tensor(inp.wave[-1], dtype=field.data.dtype)
    return where_mask(add(field, last), inp.mask.ocean)


def _add_attention(params: ParamSet, rng: np.random.Generator, prefix: str, d_model: int) -> None:
    for name in ('wq', 'wk', 'wv', 'wo'):
        params.add(f'{prefix}.{name}', glorot_uniform(rng, (d_model, d_model), d_model, d_model))


def _add_norm_params(params: ParamSet, prefix: str, d_model: int) -> None:
    params.add(f'{prefix}.gain', np.ones(d_model))
    params.add(f'{prefix}.bias', np.zeros(d_model))


def _add_mlp(params: ParamSet, rng: np.random.Generator, prefix: str, d_model: int,
             hidden: int) -> None:
    params.add(f'{prefix}.mlp.w1', glorot_uniform(rng, (d_model, hidden), d_model, hidden))
    params.add(f'{prefix}.mlp.b1', np.zeros(hidden))
    params.add(f'{prefix}.mlp.w2', glorot_uniform(rng, (hidden, d_model), hidden, d_model))
    params.add(f'{prefix}.mlp.b2', np.zeros(d_model))


def init_vit_params(config: ViTConfig, rng: np.random.Generator,
                    dtype=np.float64) -> ParamSet:
    d, p = config.d_model, config.patch
    hidden = config.mlp_ratio * d
    params = ParamSet(dtype)
    wave_in, wind_in = WAVE_CHANNELS * p * p, WIND_CHANNELS * p * p
    params.add('wave.embed', glorot_uniform(rng, (config.t_in, wave_in, d), wave_in, d))
    params.add('wind.embed', glorot_uniform(rng, (config.t_force, wind_in, d), wind_in, d))
    params.add('terrain.proj', glorot_uniform(rng, (TERRAIN_FEATURES, d), TERRAIN_FEATURES, d))
    for block in range(config.n_enc_blocks):
        prefix = f'enc{block}'
        _add_attention(params, rng, f'{prefix}.temporal', d)
        _add_attention(params, rng, f'{prefix}.spatial', d)
        _add_mlp(params, rng, prefix, d, hidden)
        for ln in ('ln1', 'ln2', 'ln3'):
            _add_norm_params(params, f'{prefix}.{ln}', d)
    for block in range(config.n_dec_blocks):
        prefix = f'dec{block}'
        _add_attention(params, rng, f'{prefix}.self', d)
        _add_attention(params, rng, f'{prefix}.cross', d)
        _add_mlp(params, rng, prefix, d, hidden)
        for ln in ('ln1', 'ln2', 'ln3'):
            _add_norm_params(params, f'{prefix}.{ln}', d)
    params.add('head.unpatch.w', glorot_uniform(rng, (d, wave_in), d, wave_in))
    params.add('head.unpatch.b', np.zeros(wave_in))
    fan = WAVE_CHANNELS * 9
    for layer in range(config.conv_layers):
        params.add(f'head.conv{layer}.k',
                   glorot_uniform(rng, (WAVE_CHANNELS, WAVE_CHANNELS, 3, 3), fan, fan))
        params.add(f'head.conv{layer}.b', np.zeros((WAVE_CHANNELS, 1, 1)))
    return params


class ViTForecaster:
    kind = KIND

    def __init__(self, config: ViTConfig, params: ParamSet):
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: ViTConfig, rng: np.random.Generator,
               dtype=np.float64) -> 'ViTForecaster':
        params = init_vit_params(config, rng, dtype)
        logging.info(f'ViT: {len(params)} tensors, {params.count()} parameters, '
                     f'{config.n_patches} patches of {config.patch}x{config.patch}')
        return cls(config, params)

    @property
    def t_in(self) -> int:
        return self.config.t_in

    @property
    def t_force(self) -> int:
        return self.config.t_force

    def forward(self, inp: ModelInput) -> Tensor:
        return model_forward(inp, self.params, self.config)
