"""One-layer convolutional LSTM baseline with the same input/output
contract as the transformer: normalized ModelInput in, normalized next wave
state out."""
import logging
from dataclasses import dataclass, fields

import numpy as np

from wavecast.errors import ConfigError, ShapeError
from wavecast.tensor import (ParamSet, Tensor, add, concat, conv2d, glorot_uniform, mul,
                             sigmoid, take_slice, tanh, where_mask)
from wavecast.vit import WAVE_CHANNELS, WIND_CHANNELS, ModelInput

KIND = 'convlstm'
INPUT_CHANNELS = WAVE_CHANNELS + WIND_CHANNELS


@dataclass(frozen=True)
class ConvLSTMConfig:
    lat_count: int = 32
    lon_count: int = 64
    hidden: int = 64
    t_in: int = 2
    t_force: int = 1

    def __post_init__(self):
        if self.hidden < 1 or self.t_in < 1 or self.t_force < 1:
            raise ConfigError('hidden, t_in and t_force must be >= 1')

    @classmethod
    def from_run_config(cls, config) -> 'ConvLSTMConfig':
        return cls(**{f.name: config.get(f.name) for f in fields(cls)})


@dataclass(frozen=True)
class RecurrentState:
    hidden: Tensor
    cell: Tensor

    @classmethod
    def zeros(cls, channels: int, height: int, width: int, dtype=np.float64) -> 'RecurrentState':
        return cls(Tensor(np.zeros((channels, height, width), dtype=dtype)),
                   Tensor(np.zeros((channels, height, width), dtype=dtype)))


def cell_step(x: Tensor, state: RecurrentState, params: ParamSet) -> RecurrentState:
    """Gates i, f, o, g from one 3x3 convolution over [x; hidden]."""
    if x.shape[1:] != state.hidden.shape[1:]:
        raise ShapeError(f'Input grid {x.shape} does not match recurrent state '
                         f'{state.hidden.shape}')
    hid = state.hidden.shape[0]
    z = add(conv2d(concat([x, state.hidden], axis=0), params['lstm.gates.k']),
            params['lstm.gates.b'])
    i = sigmoid(take_slice(z, 0, 0, hid))
    f = sigmoid(take_slice(z, 0, hid, 2 * hid))
    o = sigmoid(take_slice(z, 0, 2 * hid, 3 * hid))
    g = tanh(take_slice(z, 0, 3 * hid, 4 * hid))
    cell = add(mul(f, state.cell), mul(i, g))
    return RecurrentState(mul(o, tanh(cell)), cell)


def step_inputs(inp: ModelInput, dtype=np.float64):
    """History steps carry [wave, 0 wind]; forcing steps carry [0 wave, wind]."""
    height, width = inp.wave.shape[2:]
    for wave in inp.wave:
        yield Tensor(np.concatenate([wave, np.zeros((WIND_CHANNELS, height, width))]), dtype=dtype)
    for wind in inp.wind:
        yield Tensor(np.concatenate([np.zeros((WAVE_CHANNELS, height, width)), wind]), dtype=dtype)


def convlstm_forward(inp: ModelInput, params: ParamSet, config: ConvLSTMConfig) -> Tensor:
    if inp.wave.shape[0] != config.t_in or inp.wind.shape[0] != config.t_force:
        raise ShapeError(f'Input has {inp.wave.shape[0]} wave and {inp.wind.shape[0]} wind '
                         f'steps, model expects {config.t_in} and {config.t_force}')
    height, width = inp.wave.shape[2:]
    dtype = params.dtype
    state = RecurrentState.zeros(config.hidden, height, width, dtype)
    for x in step_inputs(inp, dtype):
        state = cell_step(x, state, params)
    out = add(conv2d(state.hidden, params['lstm.out.k']), params['lstm.out.b'])
    return where_mask(out, inp.mask.ocean)


def init_convlstm_params(config: ConvLSTMConfig, rng: np.random.Generator,
                         dtype=np.float64) -> ParamSet:
    hid = config.hidden
    params = ParamSet(dtype)
    fan_in, fan_out = (INPUT_CHANNELS + hid) * 9, 4 * hid * 9
    params.add('lstm.gates.k', glorot_uniform(rng, (4 * hid, INPUT_CHANNELS + hid, 3, 3),
                                              fan_in, fan_out))
    params.add('lstm.gates.b', np.zeros((4 * hid, 1, 1)))
    params.add('lstm.out.k', glorot_uniform(rng, (WAVE_CHANNELS, hid, 3, 3),
                                            hid * 9, WAVE_CHANNELS * 9))
    params.add('lstm.out.b', np.zeros((WAVE_CHANNELS, 1, 1)))
    return params


class ConvLSTMForecaster:
    kind = KIND

    def __init__(self, config: ConvLSTMConfig, params: ParamSet):
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: ConvLSTMConfig, rng: np.random.Generator,
               dtype=np.float64) -> 'ConvLSTMForecaster':
        params = init_convlstm_params(config, rng, dtype)
        logging.info(f'ConvLSTM: hidden={config.hidden}, {params.count()} parameters')
        return cls(config, params)

    @property
    def t_in(self) -> int:
        return self.config.t_in

    @property
    def t_force(self) -> int:
        return self.config.t_force

    def forward(self, inp: ModelInput) -> Tensor:
        return convlstm_forward(inp, self.params, self.config)
