import argparse
import logging
import os
import sys
from typing import List, Sequence, Tuple

import numpy as np

from file_handlers.common import ensure_dir, write_run_stamp
from file_handlers.manifest import format_time, parse_time
from wavecast import VERSION
from wavecast.casestudy import CASE_LEADS, case_study, parse_window
from wavecast.config import RunConfig, add_config_arguments, resolve_config
from wavecast.dataset import WaveDataset, time_window
from wavecast.errors import EXIT_OK, ConfigError, WavecastError
from wavecast.metrics import evaluate
from wavecast.rollout import open_wind_source, read_forecasts, rollout, write_forecasts
from wavecast.synthwave import ALL_MANIFEST, SynthConfig, gen_dataset, perturb_winds
from wavecast.training import Trainer, load_checkpoint, restore_model

LOG_FORMAT = '%(asctime)s %(levelname)s %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'
WIND_DIR = 'winds'
EVAL_SPLIT = 'test'


def setup_logging(log_file: str = None, verbose: bool = False) -> None:
    logging.basicConfig(
        format=LOG_FORMAT, filename=log_file,
        level=logging.DEBUG if verbose else logging.INFO, datefmt=LOG_DATEFMT)


def parse_forecast_arg(text: str) -> Tuple[str, str]:
    label, sep, path = text.partition('=')
    if not sep or not label or not path:
        raise ConfigError(f'Malformed --forecast {text!r} (expected label=dir)')
    return label, path


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> List[str]:
    synth = SynthConfig.from_run_config(config)
    ratios = (config.train_ratio, config.val_ratio, config.test_ratio)
    gen_dataset(synth, ratios, args.out)
    outputs = [os.path.join(args.out, ALL_MANIFEST)]
    if args.perturb_winds is not None:
        outputs.append(perturb_winds(args.out, args.perturb_winds, config.seed + 1,
                                     os.path.join(args.out, WIND_DIR)))
    return outputs


def cmd_train(args: argparse.Namespace, config: RunConfig) -> List[str]:
    trainer = Trainer(WaveDataset(args.data), config, args.out)
    if args.resume:
        trainer.resume(args.resume)
    return [trainer.run()]


def _load_model(args: argparse.Namespace, config: RunConfig):
    checkpoint = load_checkpoint(args.checkpoint)
    expected = config.model if config.is_set('model') else None
    return restore_model(checkpoint, expected_kind=expected)


def cmd_rollout(args: argparse.Namespace, config: RunConfig) -> List[str]:
    model = _load_model(args, config)
    dataset = WaveDataset(args.data)
    winds = open_wind_source(config.wind, dataset)
    inits = time_window(dataset.series(EVAL_SPLIT).init_times(model.t_in, config.leads),
                        args.init_time)
    forecasts = [rollout(model, dataset, init, winds, config.leads) for init in inits]
    return [write_forecasts(forecasts, args.out)]


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> List[str]:
    dataset = WaveDataset(args.data)
    entries = [(label, read_forecasts(path))
               for label, path in (parse_forecast_arg(f) for f in args.forecast)]
    truth = dataset.series('all')
    climatology = {var: dataset.climatology(var).values for var in ('SWH', 'MWP')}
    report = evaluate(entries, truth.wave_state, dataset.mask, dataset.geometry, climatology,
                      config.mre_threshold, config.mwd_min_swh, config.lat_weighted)
    return report.write(args.out, dataset.geometry, ppm=args.ppm)


def pick_storm_init(dataset: WaveDataset, t_in: int, leads: Sequence[int]) -> int:
    """Test init whose mid-lead observed SWH peak is the highest."""
    series = dataset.series(EVAL_SPLIT)
    inits = series.init_times(t_in, max(leads))
    if not inits:
        raise ConfigError(f'The {EVAL_SPLIT} split has no init time with {max(leads)} leads')
    mid = leads[len(leads) // 2] * dataset.dt_seconds
    peaks = [np.nanmax(series.field(init + mid, 'SWH')) for init in inits]
    return inits[int(np.argmax(peaks))]


def cmd_case_study(args: argparse.Namespace, config: RunConfig) -> List[str]:
    model = _load_model(args, config)
    dataset = WaveDataset(args.data)
    winds = open_wind_source(config.wind, dataset)
    leads = [k for k in CASE_LEADS if k <= config.leads]
    if not leads:
        raise ConfigError(f'Case study needs leads >= {CASE_LEADS[0]}, got {config.leads}')
    if args.init_time in (None, 'all'):
        init = pick_storm_init(dataset, model.t_in, leads)
    else:
        init = parse_time(args.init_time)
    window = parse_window(args.window) if args.window else None
    study = case_study(model, dataset, init, winds, window, leads)
    logging.info(f'Case study from {format_time(init)} in window {study.window}')
    return study.write(args.out)


COMMANDS = {
    'synth': cmd_synth,
    'train': cmd_train,
    'rollout': cmd_rollout,
    'evaluate': cmd_evaluate,
    'case-study': cmd_case_study,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', required=True, help='output directory')
    common.add_argument('--log-file', help='write the log here instead of stderr')
    common.add_argument('--verbose', action='store_true', help='debug logging')
    add_config_arguments(common)

    parser = argparse.ArgumentParser(prog='wavecaster',
                                     description='Wind-forced ocean wave forecasting')
    sub = parser.add_subparsers(dest='command', required=True)
    synth = sub.add_parser('synth', parents=[common], help='generate a synthetic dataset')
    synth.add_argument('--perturb-winds', type=float, metavar='SIGMA',
                       help=f'also write noise-degraded winds to <out>/{WIND_DIR}')
    train = sub.add_parser('train', parents=[common], help='train a forecaster')
    train.add_argument('--data', required=True, help='dataset directory')
    train.add_argument('--resume', help='continue from this checkpoint')
    for name, help_text in (('rollout', 'write multi-lead forecasts'),
                            ('case-study', 'storm window fields and max-SWH errors')):
        cmd = sub.add_parser(name, parents=[common], help=help_text)
        cmd.add_argument('--checkpoint', required=True, help='trained checkpoint')
        cmd.add_argument('--data', required=True, help='dataset directory')
        cmd.add_argument('--init-time', help=f'ISO init time or "all" ({EVAL_SPLIT} split)')
        if name == 'case-study':
            cmd.add_argument('--window', help='lat_a:lat_b,lon_a:lon_b in degrees')
    evaluate_cmd = sub.add_parser('evaluate', parents=[common], help='score forecasts')
    evaluate_cmd.add_argument('--data', required=True, help='dataset directory (truth)')
    evaluate_cmd.add_argument('--forecast', action='append', required=True,
                              help='label=forecast-dir, repeatable')
    evaluate_cmd.add_argument('--ppm', action='store_true', help='also write PPM heatmaps')
    return parser


def main() -> None:
    args = build_parser().parse_args()
    setup_logging(args.log_file, args.verbose)
    try:
        config = resolve_config(args)
        ensure_dir(args.out)
        write_run_stamp(args.out, config.render(), VERSION)
        for path in COMMANDS[args.command](args, config):
            print(path)
    except WavecastError as e:
        logging.error(f'{args.command}: {e}')
        sys.exit(e.exit_code)
    sys.exit(EXIT_OK)


if __name__ == '__main__':
    main()
