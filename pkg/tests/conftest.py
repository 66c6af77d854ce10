import numpy as np
import pytest

from wavecast.config import RunConfig
from wavecast.gridio import GridField, VarId, derive_mask, global_grid
from wavecast.synthwave import SynthConfig, gen_dataset

TINY_GRID = (8, 16)


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run desk-scale acceptance tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_geometry():
    return global_grid(*TINY_GRID)


@pytest.fixture
def tiny_depth(tiny_geometry):
    values = -1000.0 * np.ones(tiny_geometry.shape)
    values[2:4, 5:9] = 150.0
    return GridField(VarId.DEPTH, tiny_geometry, values)


@pytest.fixture
def tiny_mask(tiny_depth):
    return derive_mask(tiny_depth)


TINY_SYNTH = dict(lat_count=8, lon_count=16, n_steps=40, seed=3, n_storms=1,
                  storm_radius=2.0, land_fraction=0.2, t_in=2, leads=3)

TINY_MODEL = dict(lat_count=8, lon_count=16, n_steps=40, seed=3, n_storms=1,
                  storm_radius=2.0, land_fraction=0.2, leads=3, patch=4, d_model=8,
                  n_heads=2, n_enc_blocks=1, n_dec_blocks=1, conv_layers=1, mlp_ratio=2,
                  hidden=4, epochs=1, batch_size=4, lr=3e-3)


@pytest.fixture
def tiny_run_config():
    return RunConfig(dict(TINY_MODEL))


@pytest.fixture(scope='session')
def tiny_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp('tiny-dataset')
    gen_dataset(SynthConfig(**TINY_SYNTH), (0.6, 0.2, 0.2), str(out))
    return str(out)
