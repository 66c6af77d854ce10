"""Desk-scale runs on the default synthetic world. Slow; enable with
``pytest --runslow``."""
import pytest
from scipy.stats import spearmanr

from wavecast.config import RunConfig
from wavecast.dataset import WaveDataset
from wavecast.metrics import PERSISTENCE, skill_curves
from wavecast.rollout import open_wind_source, persistence_forecast, rollout
from wavecast.synthwave import SynthConfig, gen_dataset, perturb_winds
from wavecast.training import Trainer, load_checkpoint, restore_model

NOISY_SIGMA = 2.0
INIT_STRIDE = 4


@pytest.fixture(scope='module')
def desk_curves(tmp_path_factory):
    root = tmp_path_factory.mktemp('desk')
    config = RunConfig()
    data = str(root / 'data')
    gen_dataset(SynthConfig.from_run_config(config),
                (config.train_ratio, config.val_ratio, config.test_ratio), data)
    winds = perturb_winds(data, NOISY_SIGMA, config.seed + 1, str(root / 'winds'))
    dataset = WaveDataset(data)
    best = Trainer(dataset, config, str(root / 'run')).run()
    model = restore_model(load_checkpoint(best))
    truth = dataset.series('all')
    inits = dataset.series('test').init_times(model.t_in, config.leads)[::INIT_STRIDE]
    entries = list()
    for label, spec in (('vit', 'truth'), ('vit-noisy', f'file:{winds}')):
        source = open_wind_source(spec, dataset)
        entries.append((label, [rollout(model, dataset, t, source, config.leads)
                                for t in inits]))
    entries.append((PERSISTENCE, [persistence_forecast(truth.wave_state(t), config.leads,
                                                       dataset.dt_seconds) for t in inits]))
    rows = skill_curves(entries, truth.wave_state, dataset.mask)
    curves = dict()
    for label, variable, lead, rmse in rows:
        if variable == 'SWH':
            curves.setdefault(label, dict())[lead] = rmse
    return curves


@pytest.mark.slow
def test_model_beats_persistence_at_lead_one(desk_curves):
    assert desk_curves['vit'][1] <= 0.75 * desk_curves[PERSISTENCE][1]


@pytest.mark.slow
def test_truth_winds_beat_degraded_winds(desk_curves):
    for lead, rmse in desk_curves['vit'].items():
        assert rmse <= desk_curves['vit-noisy'][lead], lead


@pytest.mark.slow
def test_error_grows_with_lead(desk_curves):
    leads = sorted(desk_curves['vit'])
    rho = spearmanr(leads, [desk_curves['vit'][k] for k in leads]).correlation
    assert rho >= 0.9
    persistence = desk_curves[PERSISTENCE]
    assert persistence[leads[-1]] > persistence[leads[0]]

