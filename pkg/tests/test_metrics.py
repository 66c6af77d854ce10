import math
import os

import numpy as np
import pytest

from file_handlers.common import read_csv
from wavecast.errors import (ConfigError, ContractError, DomainError, EmptySelectionError,
                             UndefinedScoreError)
from wavecast.gridio import LandMask, WaveState, global_grid
from wavecast.metrics import (FIG5_FILE, FIG7_FILE, FIG7_HEADER, PERSISTENCE, SCORES_FILE,
                              HeightBins, acc, circ_diff, evaluate, fig3_name, fig4_name,
                              global_rmse, mre_threshold, rmse_by_height, rmse_map, skill_curves)
from wavecast.rollout import ForecastSeries, persistence_forecast

DT = 3600
GEOMETRY = global_grid(6, 8)


@pytest.fixture
def mask():
    ocean = np.ones(GEOMETRY.shape, dtype=bool)
    ocean[2, 3] = ocean[4, 0] = False
    return LandMask(ocean)


@pytest.fixture
def truths(mask, rng):
    states = dict()
    for step in range(10):
        swh = 1.0 + 2.0 * rng.random(GEOMETRY.shape)
        mwp = 4.0 + 4.0 * rng.random(GEOMETRY.shape)
        mwd = 360.0 * rng.random(GEOMETRY.shape)
        for values in (swh, mwp, mwd):
            values[mask.land] = np.nan
        states[step * DT] = WaveState.from_arrays(GEOMETRY, swh, mwp, mwd, valid_time=step * DT)
    return states


def noisy_series(truths, init, leads, rng, scale=0.2):
    states = list()
    for k in range(1, leads + 1):
        truth = truths[init + k * DT]
        states.append(WaveState.from_arrays(
            GEOMETRY,
            truth.swh.values + scale * rng.normal(size=GEOMETRY.shape),
            truth.mwp.values + scale * rng.normal(size=GEOMETRY.shape),
            truth.mwd().values + 20.0 * scale * rng.normal(size=GEOMETRY.shape),
            valid_time=truth.valid_time))
    return ForecastSeries(init, DT, states, model='vit')


def perfect_series(truths, init, leads):
    return ForecastSeries(init, DT, [truths[init + k * DT] for k in range(1, leads + 1)])


def test_circ_diff_examples():
    assert circ_diff(350.0, 10.0) == 20.0
    assert circ_diff(123.0, 123.0) == 0.0
    assert circ_diff(0.0, 180.0) == 180.0


def test_circ_diff_properties(rng):
    a = rng.uniform(-720.0, 720.0, size=200)
    b = rng.uniform(-720.0, 720.0, size=200)
    d = circ_diff(a, b)
    assert np.all((d >= 0.0) & (d <= 180.0))
    assert np.allclose(d, circ_diff(b, a), atol=1e-9)
    assert np.allclose(d, circ_diff(a + 720.0, b), atol=1e-9)


@pytest.mark.parametrize('variable', ['SWH', 'MWP', 'MWD'])
def test_rmse_map_matches_loops(variable, rng):
    geometry = global_grid(6, 6)
    ocean = rng.random((6, 6)) > 0.2
    ocean[0, 0] = True
    mask = LandMask(ocean)
    scale = 360.0 if variable == 'MWD' else 3.0
    preds = scale * rng.random((3, 6, 6))
    truths = scale * rng.random((3, 6, 6))
    truth_swh = 3.0 * rng.random((3, 6, 6))
    values = rmse_map(preds, truths, mask, variable, geometry, truth_swh).values
    for i in range(6):
        for j in range(6):
            picked = [n for n in range(3) if ocean[i, j]
                      and (variable != 'MWD' or truth_swh[n, i, j] >= 0.1)]
            if not picked:
                assert math.isnan(values[i, j])
                continue
            squares = list()
            for n in picked:
                diff = abs(preds[n, i, j] - truths[n, i, j])
                if variable == 'MWD':
                    diff = min(diff % 360.0, 360.0 - diff % 360.0)
                squares.append(diff ** 2)
            assert abs(values[i, j] - math.sqrt(sum(squares) / len(squares))) < 1e-10


def test_rmse_map_simple_cases(mask):
    truths = np.ones((1,) + GEOMETRY.shape)
    assert np.all(rmse_map(truths, truths, mask, 'SWH', GEOMETRY).values[mask.ocean] == 0.0)
    preds = truths.copy()
    preds[0, 1, 1] += 2.0
    values = rmse_map(preds, truths, mask, 'SWH', GEOMETRY).values
    assert values[1, 1] == 2.0
    assert np.all(np.isnan(values[mask.land]))
    with pytest.raises(DomainError):
        rmse_map(np.zeros((0,) + GEOMETRY.shape), np.zeros((0,) + GEOMETRY.shape), mask,
                 'SWH', GEOMETRY)


def test_global_rmse_is_weighted_and_order_free(mask, rng):
    preds = rng.normal(size=(4,) + GEOMETRY.shape)
    truths = rng.normal(size=(4,) + GEOMETRY.shape)
    weights = GEOMETRY.cos_lat_weights()
    num = den = 0.0
    for n in range(4):
        for i, j in zip(*np.nonzero(mask.ocean)):
            num += weights[i, j] * (preds[n, i, j] - truths[n, i, j]) ** 2
            den += weights[i, j]
    score = global_rmse(preds, truths, mask, 'SWH', weights)
    assert abs(score - math.sqrt(num / den)) < 1e-10
    order = [2, 0, 3, 1]
    assert abs(global_rmse(preds[order], truths[order], mask, 'SWH', weights) - score) < 1e-12


def test_mre_of_ten_percent_bias(mask, rng):
    truths = 1.0 + 3.0 * rng.random((2,) + GEOMETRY.shape)
    score, cell_map = mre_threshold(1.1 * truths, truths, truths, mask)
    assert score == pytest.approx(0.10, abs=1e-12)
    assert np.allclose(cell_map[mask.ocean], 0.10, atol=1e-12)
    assert np.all(np.isnan(cell_map[mask.land]))


def test_mre_matches_loops(mask, rng):
    truth_swh = 2.0 * rng.random((3,) + GEOMETRY.shape)
    truths = 4.0 + 4.0 * rng.random((3,) + GEOMETRY.shape)
    preds = truths + rng.normal(size=truths.shape)
    picked = [abs(preds[n, i, j] - truths[n, i, j]) / truths[n, i, j]
              for n in range(3) for i in range(6) for j in range(8)
              if mask.ocean[i, j] and truth_swh[n, i, j] >= 1.0]
    score, _ = mre_threshold(preds, truths, truth_swh, mask)
    assert abs(score - sum(picked) / len(picked)) < 1e-12


def test_mre_filter(mask):
    truths = np.full((2,) + GEOMETRY.shape, 0.5)
    with pytest.raises(EmptySelectionError):
        mre_threshold(truths, truths, truths, mask)
    truths[:, 0, 0] = 2.0
    _, cell_map = mre_threshold(truths, truths, truths, mask)
    assert cell_map[0, 0] == 0.0
    assert np.isnan(cell_map[1, 1])
    with pytest.raises(ConfigError):
        mre_threshold(truths, truths, truths, mask, threshold=0.0)


def test_height_bins():
    bins = HeightBins()
    assert bins.assign(np.array([0.49, 0.5, 1.49, 1.5, 8.49, 8.5])).tolist() == \
        [-1, 0, 0, 1, 7, -1]
    with pytest.raises(ConfigError):
        HeightBins(centers=(1.0, 1.5))


def test_rmse_by_height_constant_sea(mask, rng):
    truths = {'SWH': np.full((2,) + GEOMETRY.shape, 3.0),
              'MWP': 6.0 + rng.random((2,) + GEOMETRY.shape),
              'MWD': 360.0 * rng.random((2,) + GEOMETRY.shape)}
    rows = rmse_by_height(truths, truths, mask, lead=1)
    assert len(rows) == 3 * 8
    for variable, center, lead, value, count in rows:
        assert lead == 1
        if center == 3.0:
            assert count == 2 * mask.ocean_count and value == 0.0
        else:
            assert count == 0 and math.isnan(value)


def test_rmse_by_height_matches_loops(mask, rng):
    truths = {'SWH': 9.0 * rng.random((3,) + GEOMETRY.shape),
              'MWP': 5.0 + rng.random((3,) + GEOMETRY.shape),
              'MWD': 360.0 * rng.random((3,) + GEOMETRY.shape)}
    preds = {var: values + rng.normal(size=values.shape) for var, values in truths.items()}
    rows = {(var, center): (value, count)
            for var, center, _, value, count in rmse_by_height(preds, truths, mask, lead=2)}
    for center in range(1, 9):
        squares = [(preds['MWP'][n, i, j] - truths['MWP'][n, i, j]) ** 2
                   for n in range(3) for i in range(6) for j in range(8)
                   if mask.ocean[i, j] and center - 0.5 <= truths['SWH'][n, i, j] < center + 0.5]
        value, count = rows[('MWP', float(center))]
        assert count == len(squares)
        if squares:
            assert abs(value - math.sqrt(sum(squares) / len(squares))) < 1e-12


def test_acc_extremes(mask, rng):
    clim = rng.random(GEOMETRY.shape)
    truth = clim + rng.normal(size=GEOMETRY.shape)
    assert acc(truth, truth, clim, mask) == pytest.approx(1.0, abs=1e-12)
    assert acc(2.0 * clim - truth, truth, clim, mask) == pytest.approx(-1.0, abs=1e-12)


def test_acc_two_by_two():
    ocean = np.ones((2, 2), dtype=bool)
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    truth = np.array([[2.0, 1.0], [4.0, 3.0]])
    # Centered anomalies give 3 / sqrt(5 * 5).
    assert acc(pred, truth, np.zeros((2, 2)), LandMask(ocean)) == pytest.approx(0.6, abs=1e-12)


def test_acc_is_shift_invariant(mask, rng):
    clim = rng.random(GEOMETRY.shape)
    pred, truth = rng.normal(size=(2,) + GEOMETRY.shape)
    weights = GEOMETRY.cos_lat_weights()
    base = acc(pred, truth, clim, mask, weights)
    assert acc(pred + 5.0, truth + 5.0, clim + 5.0, mask, weights) == \
        pytest.approx(base, abs=1e-12)
    assert acc(pred + 2.0, truth, clim, mask, weights) == pytest.approx(base, abs=1e-12)


def test_acc_undefined_without_anomaly_variance(mask, rng):
    clim = rng.random(GEOMETRY.shape)
    with pytest.raises(UndefinedScoreError):
        acc(clim + 1.0, clim + rng.normal(size=GEOMETRY.shape), clim, mask)


def test_perfect_forecast_has_zero_skill_curve(truths, mask):
    series = [perfect_series(truths, init, 3) for init in (DT, 2 * DT)]
    rows = skill_curves([('perfect', series)], truths.__getitem__, mask)
    assert len(rows) == 3 * 3
    assert all(rmse == 0.0 for _, _, _, rmse in rows)


def test_skill_curve_row_count(truths, mask, rng):
    inits = (DT, 2 * DT, 3 * DT)
    model = [noisy_series(truths, init, 3, rng) for init in inits]
    persistence = [persistence_forecast(truths[init], 3, DT) for init in inits]
    rows = skill_curves([('vit', model), (PERSISTENCE, persistence)], truths.__getitem__, mask)
    assert len(rows) == 3 * 2 * 3
    assert {label for label, _, _, _ in rows} == {'vit', PERSISTENCE}
    assert all(np.isfinite(rmse) and rmse > 0.0 for _, _, _, rmse in rows)


def test_skill_curves_need_the_same_period(truths, mask, rng):
    a = [noisy_series(truths, DT, 3, rng)]
    b = [noisy_series(truths, 2 * DT, 3, rng)]
    with pytest.raises(ContractError):
        skill_curves([('a', a), ('b', b)], truths.__getitem__, mask)


def test_evaluate_writes_every_report_file(truths, mask, rng, tmp_path):
    inits = (DT, 2 * DT, 3 * DT, 4 * DT)
    model = [noisy_series(truths, init, 3, rng) for init in inits]
    climatology = {var: np.nanmean([getattr(s, var.lower()).values for s in truths.values()],
                                   axis=0) for var in ('SWH', 'MWP')}
    report = evaluate([('vit', model)], truths.__getitem__, mask, GEOMETRY, climatology)
    assert report.leads == 3
    swh_map = report.rmse_maps[('SWH', 1)].values
    assert np.all(np.isnan(swh_map[mask.land])) and np.all(np.isfinite(swh_map[mask.ocean]))
    labels = {row[0] for row in report.score_rows}
    assert labels == {'vit', PERSISTENCE}
    assert {row[3] for row in report.score_rows} == {'rmse', 'mre', 'acc'}
    assert {row[1] for row in report.score_rows if row[3] == 'acc'} == {'SWH', 'MWP'}
    assert all(np.isfinite(row[4]) for row in report.score_rows)

    written = report.write(str(tmp_path), GEOMETRY)
    for variable in ('SWH', 'MWP', 'MWD'):
        for lead in (1, 2, 3):
            assert os.path.join(str(tmp_path), fig3_name(variable, lead)) in written
    assert os.path.exists(tmp_path / fig4_name('MWP', 3))
    assert os.path.exists(tmp_path / FIG5_FILE) and os.path.exists(tmp_path / SCORES_FILE)
    skill = read_csv(str(tmp_path / FIG7_FILE))
    assert skill[0] == list(FIG7_HEADER)
    assert len(skill) == 1 + 2 * 3 * 3
    fig3 = read_csv(str(tmp_path / fig3_name('SWH', 1)))
    assert len(fig3) == 1 + 6 * 8


def test_evaluate_needs_forecasts(truths, mask):
    with pytest.raises(ConfigError):
        evaluate([], truths.__getitem__, mask, GEOMETRY, {})
    with pytest.raises(DomainError):
        evaluate([('vit', [])], truths.__getitem__, mask, GEOMETRY, {})
