"""Masked loss, Adam, the epoch loop and checkpoints for both forecasters."""
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from file_handlers.checkpoint import CheckpointFileHandler
from file_handlers.common import ensure_dir, make_symlink, write_csv
from wavecast.config import RunConfig, parse_config
from wavecast.convlstm import ConvLSTMConfig, ConvLSTMForecaster
from wavecast.dataset import WaveDataset
from wavecast.errors import ConfigConflictError, ConfigError, DomainError, NonFiniteGradientError
from wavecast.gridio import LandMask, NormStats
from wavecast.tensor import (ParamSet, Tape, Tensor, backward, make_rng, mul, reshape,
                             rng_state, set_rng_state, tensor_sum, where_mask)
from wavecast.vit import ViTConfig, ViTForecaster

CHECKPOINT_FORMAT = 1
LOSS_LOG = 'loss-log.csv'
LOSS_LOG_HEADER = ('epoch', 'step', 'total', 'swh', 'mwp', 'sin', 'cos', 'val_swh_rmse')
LAST_CHECKPOINT = 'last.wckp'
BEST_CHECKPOINT = 'best.wckp'
REPORT_EVERY = 10
DTYPES = {'float64': np.float64, 'float32': np.float32}
MODELS = {'vit': ViTForecaster, 'convlstm': ConvLSTMForecaster}


def epoch_checkpoint_name(epoch: int) -> str:
    return f'epoch-{epoch:03d}.wckp'


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 4
    batch_size: int = 8
    grad_clip: float = 1.0
    seed: int = 7
    model: str = 'vit'
    channel_weights: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    lr_schedule: str = 'constant'
    dtype: str = 'float64'

    def __post_init__(self):
        if not self.lr > 0.0:
            raise ConfigError(f'lr must be > 0, got {self.lr}')
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError('batch_size must be >= 1 and epochs >= 0')
        if len(self.channel_weights) != 4:
            raise ConfigError(f'channel_weights needs 4 values, got {self.channel_weights}')
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError('Adam betas must be in [0, 1)')
        if self.model not in MODELS:
            raise ConfigError(f'Unknown model: {self.model}')

    @classmethod
    def from_run_config(cls, config: RunConfig) -> 'TrainConfig':
        return cls(**{name: config.get(name) for name in cls.__dataclass_fields__})


@dataclass
class LossReport:
    epoch: int
    step: int
    total: float
    channels: Tuple[float, float, float, float]
    wall_time: float = 0.0


def masked_loss(pred: Tensor, truth: np.ndarray, mask: LandMask,
                weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0)) -> Tuple[Tensor, Tensor]:
    """Sum over channels of w_c * mean over ocean cells of (pred - truth)^2.

    Returns (total, per-channel [4]). Land cells contribute nothing, neither
    to the value nor to the gradient.
    """
    count = int(mask.ocean.sum())
    if count == 0:
        raise DomainError('Loss mask has no ocean cells')
    truth = np.where(mask.ocean, truth, 0.0)
    diff = where_mask(pred - Tensor(truth, dtype=pred.data.dtype), mask.ocean)
    squared = diff * diff
    channels = tensor_sum(reshape(squared, (squared.shape[0], -1)), axis=1) / float(count)
    total = tensor_sum(mul(channels, np.asarray(weights, dtype=pred.data.dtype)))
    return total, channels


class Moments:
    """Adam first/second moment buffers keyed by parameter name."""

    def __init__(self, params: ParamSet):
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def table(self) -> Dict[str, np.ndarray]:
        table = dict()
        for name in self.m:
            table[f'{name}.m'] = self.m[name]
            table[f'{name}.v'] = self.v[name]
        return table

    def load_table(self, table: Dict[str, np.ndarray]) -> None:
        expected = set(self.table())
        if set(table) != expected:
            raise ConfigConflictError('Optimizer moments do not match the parameter table')
        for name in self.m:
            self.m[name][...] = table[f'{name}.m']
            self.v[name][...] = table[f'{name}.v']


def global_norm(params: ParamSet) -> float:
    return math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))


def adam_step(params: ParamSet, moments: Moments, config: TrainConfig, t: int,
              lr: Optional[float] = None) -> float:
    """Clip gradients to ``grad_clip`` global norm, then one bias-corrected
    Adam update. Returns the pre-clip gradient norm."""
    if t < 1:
        raise ConfigError(f'Adam step counter must be >= 1, got {t}')
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(p.name)
    lr = config.lr if lr is None else lr
    norm = global_norm(params)
    scale = 1.0
    if config.grad_clip > 0.0 and norm > config.grad_clip:
        scale = config.grad_clip / norm
    correction1 = 1.0 - config.beta1 ** t
    correction2 = 1.0 - config.beta2 ** t
    for p in params:
        g = p.grad * scale
        m = moments.m[p.name]
        v = moments.v[p.name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        p.data -= (lr * (m / correction1) / (np.sqrt(v / correction2) + config.adam_eps)).astype(
            p.data.dtype)
    return norm


def learning_rate(config: TrainConfig, step: int, total_steps: int) -> float:
    if config.lr_schedule == 'cosine' and total_steps > 0:
        return config.lr * 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))
    return config.lr


def build_model(config: RunConfig, rng: np.random.Generator):
    """Fresh forecaster of the configured kind, initialized from ``rng``."""
    dtype = DTYPES[config.dtype]
    if config.model == 'vit':
        return ViTForecaster.create(ViTConfig.from_run_config(config), rng, dtype)
    return ConvLSTMForecaster.create(ConvLSTMConfig.from_run_config(config), rng, dtype)


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    moments: Dict[str, np.ndarray]
    state: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.state['kind']

    @property
    def config(self) -> RunConfig:
        return parse_config(self.state['config'])

    @property
    def norm_stats(self) -> NormStats:
        return NormStats.from_dict(self.state['norm_stats'])


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    CheckpointFileHandler(output=path).write(checkpoint.params, checkpoint.moments,
                                             checkpoint.state)


def load_checkpoint(path: str) -> Checkpoint:
    params, moments, state = CheckpointFileHandler(input_=path).read()
    if state.get('format') != CHECKPOINT_FORMAT:
        raise ConfigConflictError(f'Checkpoint {path} has state format {state.get("format")}, '
                                  f'expected {CHECKPOINT_FORMAT}')
    return Checkpoint(params, moments, state)


def restore_model(checkpoint: Checkpoint, expected_kind: Optional[str] = None):
    """Rebuild the checkpointed forecaster with its own architecture keys."""
    if expected_kind is not None and checkpoint.kind != expected_kind:
        raise ConfigConflictError(f'Checkpoint holds a {checkpoint.kind} model, '
                                  f'but model={expected_kind} was requested')
    config = checkpoint.config
    model = build_model(config, make_rng(config.seed))
    model.params.load_state(checkpoint.params)
    return model


class Trainer:
    """Epoch loop over the train split. Every epoch ends with a validation
    pass, a loss-log row and a checkpoint; resuming restarts at the next
    epoch boundary."""

    def __init__(self, dataset: WaveDataset, config: RunConfig, out_dir: str):
        self.dataset = dataset
        self.run_config = config
        self.config = TrainConfig.from_run_config(config)
        self.out_dir = ensure_dir(out_dir)
        self.rng = make_rng(self.config.seed)
        self.model = build_model(config, self.rng)
        self.moments = Moments(self.model.params)
        self.epoch = 0
        self.step = 0
        self.best_score = math.inf
        self.best_epoch = 0
        self.history: List[list] = list()
        self.reports: List[LossReport] = list()
        self.started = time.monotonic()
        self.train_times = dataset.sample_times('train', self.model.t_in, self.model.t_force)
        self.val_times = dataset.sample_times('val', self.model.t_in, self.model.t_force)

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.train_times) / self.config.batch_size)

    def resume(self, path: str) -> None:
        checkpoint = load_checkpoint(path)
        if checkpoint.kind != self.config.model:
            raise ConfigConflictError(f'Checkpoint {path} holds a {checkpoint.kind} model, '
                                      f'but model={self.config.model} was requested')
        self.model.params.load_state(checkpoint.params)
        self.moments.load_table(checkpoint.moments)
        state = checkpoint.state
        set_rng_state(self.rng, state['rng'])
        self.epoch = state['epoch']
        self.step = state['step']
        self.best_score = state['best_score']
        self.best_epoch = state['best_epoch']
        self.history = [list(row) for row in state['history']]
        logging.info(f'Resumed {checkpoint.kind} from {path} at epoch {self.epoch}, '
                     f'step {self.step}')

    def sample_loss(self, split: str, init: int) -> Tuple[Tensor, Tensor]:
        inp, truth = self.dataset.sample(self.dataset.series(split), init,
                                         self.model.t_in, self.model.t_force)
        return masked_loss(self.model.forward(inp), truth, inp.mask, self.config.channel_weights)

    def train_batch(self, batch: Sequence[int]) -> LossReport:
        params = self.model.params
        params.zero_grad()
        total, channels = 0.0, np.zeros(4)
        for init in batch:
            with Tape() as tape:
                loss, per_channel = self.sample_loss('train', init)
                scaled = loss / float(len(batch))
            backward(tape, scaled)
            total += loss.item() / len(batch)
            channels += per_channel.data / len(batch)
        self.step += 1
        lr = learning_rate(self.config, self.step - 1, self.config.epochs * self.steps_per_epoch)
        norm = adam_step(params, self.moments, self.config, self.step, lr)
        report = LossReport(self.epoch + 1, self.step, total, tuple(float(c) for c in channels),
                            time.monotonic() - self.started)
        self.reports.append(report)
        message = (f'step {self.step}: loss {total:.6f} grad-norm {norm:.4f} lr {lr:.3g}, '
                   f'{report.wall_time:.1f}s')
        if self.step % REPORT_EVERY == 0:
            logging.info(message)
        else:
            logging.debug(message)
        return report

    def validate(self) -> float:
        """Lead-1 SWH RMSE in metres over validation ocean cells."""
        squared, count = 0.0, 0
        ocean = self.dataset.mask.ocean
        series = self.dataset.series('val')
        for init in self.val_times:
            inp, truth = self.dataset.sample(series, init, self.model.t_in, self.model.t_force)
            pred = self.model.forward(inp).data[0]
            diff = (pred - truth[0])[ocean]
            squared += float(np.sum(diff.astype(np.float64) ** 2))
            count += diff.size
        return math.sqrt(squared / count) * self.dataset.norm_stats.std['SWH']

    def mean_loss(self, split: str, times: Sequence[int]) -> float:
        return float(np.mean([self.sample_loss(split, init)[0].item() for init in times]))

    def train_epoch(self) -> Tuple[float, np.ndarray]:
        order = self.rng.permutation(len(self.train_times))
        size = self.config.batch_size
        reports = list()
        for start in range(0, len(order), size):
            batch = [self.train_times[i] for i in order[start:start + size]]
            reports.append(self.train_batch(batch))
        self.epoch += 1
        totals = np.array([r.total for r in reports])
        channels = np.array([r.channels for r in reports])
        return float(totals.mean()), channels.mean(axis=0)

    def checkpoint(self) -> Checkpoint:
        state = {
            'format': CHECKPOINT_FORMAT,
            'kind': self.config.model,
            'config': self.run_config.render(),
            'norm_stats': self.dataset.norm_stats.as_dict(),
            'rng': rng_state(self.rng),
            'epoch': self.epoch,
            'step': self.step,
            'best_score': self.best_score,
            'best_epoch': self.best_epoch,
            'history': self.history,
        }
        return Checkpoint(self.model.params.state(), self.moments.table(), state)

    def write_outputs(self) -> str:
        epoch_name = epoch_checkpoint_name(self.epoch)
        checkpoint = self.checkpoint()
        save_checkpoint(os.path.join(self.out_dir, epoch_name), checkpoint)
        save_checkpoint(os.path.join(self.out_dir, LAST_CHECKPOINT), checkpoint)
        if self.best_epoch == self.epoch:
            make_symlink(epoch_name, os.path.join(self.out_dir, BEST_CHECKPOINT))
        write_csv([LOSS_LOG_HEADER] + self.history, os.path.join(self.out_dir, LOSS_LOG))
        return epoch_name

    def run(self) -> str:
        """Train the remaining epochs; returns the best checkpoint path."""
        logging.info(f'Training {self.config.model} on {len(self.train_times)} samples, '
                     f'validating on {len(self.val_times)}, {self.config.epochs} epochs')
        while self.epoch < self.config.epochs:
            started = time.monotonic()
            total, channels = self.train_epoch()
            score = self.validate()
            best = score < self.best_score
            if best:
                self.best_score, self.best_epoch = score, self.epoch
            self.history.append([self.epoch, self.step, total] + [float(c) for c in channels]
                                + [score])
            self.write_outputs()
            logging.info(f'epoch {self.epoch}: train loss {total:.6f}, val SWH RMSE '
                         f'{score:.4f} m{" (best)" if best else ""}, '
                         f'{time.monotonic() - started:.1f}s')
        if self.epoch == 0:
            self.write_outputs()
        best_path = os.path.join(self.out_dir, BEST_CHECKPOINT)
        if not os.path.lexists(best_path):
            make_symlink(epoch_checkpoint_name(self.epoch), best_path)
        return best_path
