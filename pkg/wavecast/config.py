"""Flat ``key = value`` run configuration.

Every key has a default below and a matching ``--key-name`` flag. Precedence
is defaults < config file < command-line flags. Unknown keys are errors.
"""
import argparse
import logging
from typing import Any, Dict, List, Tuple

from wavecast.errors import ConfigError

COMMENT = '#'
SEPARATOR = '='


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f'not a boolean: {text}')


def parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(',') if v.strip())


# (key, default, parser, help)
KEYS = (
    # grid
    ('lat_count', 32, int, 'grid rows (latitude)'),
    ('lon_count', 64, int, 'grid columns (longitude, periodic)'),
    # synthetic world
    ('seed', 7, int, 'run seed; every stochastic choice derives from it'),
    ('n_steps', 1900, int, 'synthetic time steps to generate'),
    ('dt_hours', 24.0, float, 'hours per time step'),
    ('alpha', 0.025, float, 'equilibrium coefficient, SWH = alpha * |wind|^2'),
    ('relax_rate', 0.3, float, 'SWH relaxation rate per step, in (0, 1]'),
    ('period_coeff', 0.55, float, 'MWP = period_coeff * |wind|'),
    ('n_storms', 3, int, 'number of translating vortices'),
    ('land_fraction', 0.25, float, 'fraction of land cells'),
    ('storm_peak', 20.0, float, 'vortex peak wind speed (m/s)'),
    ('storm_radius', 4.0, float, 'vortex e-folding radius (cells)'),
    ('background_wind', 8.0, float, 'zonal background wind amplitude (m/s)'),
    ('advect_fraction', 0.3, float, 'fraction of wind displacement used for SWH advection'),
    ('train_ratio', 0.8, float, 'chronological training share'),
    ('val_ratio', 0.1, float, 'chronological validation share'),
    ('test_ratio', 0.1, float, 'chronological test share'),
    ('start_time', '2011-01-01T00:00:00Z', str, 'valid time of step 0'),
    # model
    ('model', 'vit', str, 'vit or convlstm'),
    ('patch', 4, int, 'ViT patch edge (cells)'),
    ('d_model', 64, int, 'ViT token width'),
    ('n_heads', 4, int, 'attention heads'),
    ('n_enc_blocks', 2, int, 'encoder blocks'),
    ('n_dec_blocks', 2, int, 'decoder blocks'),
    ('t_in', 2, int, 'wave history steps fed to the model'),
    ('t_force', 1, int, 'wind steps consumed per model step'),
    ('conv_layers', 2, int, 'convolutions in the ViT head'),
    ('mlp_ratio', 4, int, 'MLP hidden width / d_model'),
    ('use_terrain', True, parse_bool, 'add the terrain encoding to tokens'),
    ('residual', False, parse_bool, 'predict an increment over the last wave state'),
    ('hidden', 64, int, 'ConvLSTM hidden channels'),
    # training
    ('lr', 1e-3, float, 'Adam learning rate'),
    ('beta1', 0.9, float, 'Adam first-moment decay'),
    ('beta2', 0.999, float, 'Adam second-moment decay'),
    ('adam_eps', 1e-8, float, 'Adam epsilon'),
    ('epochs', 4, int, 'training epochs'),
    ('batch_size', 8, int, 'samples per optimizer step'),
    ('grad_clip', 1.0, float, 'global gradient norm clip (0 disables)'),
    ('channel_weights', (1.0, 1.0, 1.0, 1.0), parse_floats,
     'loss weights for swh,mwp,mwd_sin,mwd_cos'),
    ('lr_schedule', 'constant', str, 'constant or cosine'),
    ('dtype', 'float64', str, 'parameter storage: float64 or float32'),
    # rollout / metrics
    ('leads', 7, int, 'forecast leads (steps)'),
    ('wind', 'truth', str, 'wind source: truth or file:<path>'),
    ('mre_threshold', 1.0, float, 'truth SWH filter for MRE (m)'),
    ('mwd_min_swh', 0.1, float, 'truth SWH below which MWD errors are excluded (m)'),
    ('lat_weighted', True, parse_bool, 'cos-latitude weights in global scores'),
)

CHOICES = {
    'model': ('vit', 'convlstm'),
    'lr_schedule': ('constant', 'cosine'),
    'dtype': ('float64', 'float32'),
}


def render_value(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ','.join(render_value(v) for v in value)
    return str(value)


class RunConfig:
    def __init__(self, values: Dict[str, Any] = None):
        self._values = {key: default for key, default, _, _ in KEYS}
        self._given = set()
        if values:
            self.update(values)

    def __getattr__(self, key: str) -> Any:
        try:
            return self.__dict__['_values'][key]
        except KeyError:
            raise AttributeError(key) from None

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self._values == other._values

    def get(self, key: str) -> Any:
        return self._values[key]

    def is_set(self, key: str) -> bool:
        """True when ``key`` came from a file or flag rather than its default."""
        return key in self._given

    def as_dict(self) -> Dict[str, Any]:
        return dict(self._values)

    def update(self, values: Dict[str, Any]) -> None:
        parsers = {key: parser for key, _, parser, _ in KEYS}
        for key, value in values.items():
            if key not in parsers:
                raise ConfigError(f'Unknown config key: {key}')
            if isinstance(value, str) and parsers[key] is not str:
                try:
                    value = parsers[key](value)
                except ValueError as e:
                    raise ConfigError(f'Invalid value for {key}: {value} ({e})') from None
            if isinstance(value, list):
                value = tuple(value)
            if key in CHOICES and value not in CHOICES[key]:
                raise ConfigError(f'Invalid value for {key}: {value} '
                                  f'(expected one of {", ".join(CHOICES[key])})')
            self._values[key] = value
            self._given.add(key)

    def render(self) -> str:
        return ''.join(f'{key} {SEPARATOR} {render_value(self._values[key])}\n'
                       for key, _, _, _ in KEYS)


def parse_config(text: str) -> RunConfig:
    values = dict()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split(COMMENT, 1)[0].strip()
        if not line:
            continue
        if SEPARATOR not in line:
            raise ConfigError(f'Malformed config line {line_no}: {line}')
        key, value = (part.strip() for part in line.split(SEPARATOR, 1))
        values[key] = value
    return RunConfig(values)


def load_config(path: str) -> RunConfig:
    logging.info(f'Reading file: {path}')
    try:
        with open(path, 'r') as f:
            return parse_config(f.read())
    except OSError as e:
        raise ConfigError(f'Failed to read config file {path}: {e}') from None


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group('config keys')
    group.add_argument('--config', help='flat key = value config file')
    for key, default, _, help_text in KEYS:
        group.add_argument('--' + key.replace('_', '-'), dest=key, default=None,
                           help=f'{help_text} (default: {render_value(default)})')


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {key: getattr(args, key) for key, _, _, _ in KEYS
                 if getattr(args, key, None) is not None}
    config.update(overrides)
    return config


def config_keys() -> List[str]:
    return [key for key, _, _, _ in KEYS]
