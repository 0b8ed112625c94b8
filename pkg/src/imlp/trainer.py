"""Segment-by-segment continual training.

In incremental mode each segment is trained on its own rows only; past
segments survive solely as prototypes in the feature buffer. The
cumulative-retrain mode is the replay baseline: a fresh model is fit on all
rows seen so far at every step.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .buffer import FeatureBuffer, segment_prototype
from .errors import ConfigError, DivergenceError, EmptySegmentError, ImlpError, SegmentError
from .metrics import EnergyProvider, ModeledClock, SegmentResult, WallClock, balanced_accuracy, log_loss
from .model import (
    ImlpConfig,
    ImlpParams,
    _check_labels,
    attention_active,
    flops_per_batch,
    forward,
    init_params,
    loss_and_backward,
)

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd-momentum")
MODES = ("incremental", "cumulative-retrain")
MODEL_KINDS = ("imlp", "plain-mlp")


@dataclass(frozen=True)
class TrainConfig:
    epochs_per_segment: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.9
    seed: int = 0
    mode: str = "incremental"
    shuffle: bool = True
    patience: int | None = None
    validation_fraction: float = 0.1
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.epochs_per_segment < 1:
            raise ConfigError("epochs_per_segment must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class OptimizerState:
    kind: str
    step: int
    first: ImlpParams | None = None
    second: ImlpParams | None = None

    @classmethod
    def fresh(cls, params: ImlpParams, config: TrainConfig) -> "OptimizerState":
        if config.optimizer == "adam":
            return cls("adam", 0, params.zeros_like(), params.zeros_like())
        return cls("sgd-momentum", 0, params.zeros_like(), None)

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.kind,
            self.step,
            None if self.first is None else self.first.copy(),
            None if self.second is None else self.second.copy(),
        )


def apply_update(params: ImlpParams, grads: ImlpParams, state: OptimizerState, config: TrainConfig) -> None:
    """One optimizer step, updating ``params`` and ``state`` in place."""
    state.step += 1
    lr = config.learning_rate
    if state.kind == "adam":
        b1, b2 = config.beta1, config.beta2
        c1 = 1.0 - b1**state.step
        c2 = 1.0 - b2**state.step
        for name, p in params.items():
            g = getattr(grads, name)
            m = getattr(state.first, name)
            v = getattr(state.second, name)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    else:
        for name, p in params.items():
            vel = getattr(state.first, name)
            vel *= config.momentum
            vel += getattr(grads, name)
            p -= lr * vel


@dataclass
class TrainData:
    """Training rows plus, per row, the stream segment it came from."""

    x: np.ndarray
    y: np.ndarray
    source: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.source is None:
            self.source = np.zeros(len(self.y), dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"x {self.x.shape} and y {self.y.shape} disagree")

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "TrainData":
        return TrainData(self.x[idx], self.y[idx], self.source[idx])

    @staticmethod
    def concat(parts: Sequence["TrainData"]) -> "TrainData":
        return TrainData(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.source for p in parts]),
        )


@dataclass
class StreamSegment:
    index: int
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    def train_data(self) -> TrainData:
        return TrainData(self.x_train, self.y_train, np.full(len(self.y_train), self.index, dtype=np.int64))


@dataclass
class TrainStats:
    epoch_losses: list = field(default_factory=list)
    steps: int = 0
    row_visits: int = 0
    flops: int = 0
    stopped_early: bool = False


def _make_rng(seed: int, stream: int, segment: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, segment])


def _batch_prototype(cfg: ImlpConfig, h: np.ndarray) -> np.ndarray:
    return segment_prototype(h, cfg.normalize_prototypes, cfg.prototype_eps)


def train_segment(
    params: ImlpParams,
    opt_state: OptimizerState,
    buffer: FeatureBuffer,
    data: TrainData,
    config: TrainConfig,
    segment: int = 0,
    access_log: Callable[[int, np.ndarray], None] | None = None,
) -> tuple[ImlpParams, OptimizerState, TrainStats]:
    """Run ``epochs x ceil(n / B)`` minibatch steps on one segment's rows.

    Returns new params and optimizer state; the inputs are left untouched.
    The buffer is only read, except under ``buffer_granularity='batch'``
    where each step's batch prototype is pushed.
    """
    cfg = params.config
    if len(data) == 0:
        raise EmptySegmentError(f"segment {segment} has no training rows")
    _check_labels(data.y, len(data), cfg.n_classes)
    params = params.copy()
    opt_state = opt_state.copy()
    stats = TrainStats()

    rng = _make_rng(config.seed, 1, segment)
    val = None
    if config.patience is not None:
        perm = _make_rng(config.seed, 2, segment).permutation(len(data))
        n_val = max(1, int(round(config.validation_fraction * len(data))))
        if n_val < len(data):
            val = data.take(np.sort(perm[:n_val]))
            data = data.take(np.sort(perm[n_val:]))
    best_val, stale, best_params = math.inf, 0, None

    n, B = len(data), config.batch_size
    for epoch in range(config.epochs_per_segment):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        losses, weights = [], []
        for start in range(0, n, B):
            idx = order[start : start + B]
            if access_log is not None:
                access_log(segment, np.unique(data.source[idx]))
            fill = len(buffer) if attention_active(cfg, buffer) else 0
            trace = forward(params, data.x[idx], buffer)
            loss, grads = loss_and_backward(trace, params, data.y[idx])
            if not math.isfinite(loss) or loss > config.divergence_threshold:
                raise DivergenceError(f"loss {loss!r} diverged", segment=segment, epoch=epoch, step=stats.steps)
            apply_update(params, grads, opt_state, config)
            if cfg.buffer_granularity == "batch":
                buffer.push(_batch_prototype(cfg, trace.h))
            stats.steps += 1
            stats.row_visits += len(idx)
            stats.flops += flops_per_batch(cfg, len(idx), fill, training=True)
            losses.append(loss)
            weights.append(len(idx))
        stats.epoch_losses.append(float(np.average(losses, weights=weights)))

        if val is not None:
            vtrace = forward(params, val.x, buffer)
            stats.flops += flops_per_batch(cfg, len(val), len(buffer) if vtrace.attention_active else 0)
            vloss = loss_and_backward(vtrace, params, val.y)[0]
            if vloss < best_val:
                best_val, stale, best_params = vloss, 0, params.copy()
            else:
                stale += 1
                if stale >= config.patience:
                    stats.stopped_early = True
                    params = best_params
                    break
    return params, opt_state, stats


def inference_flops(cfg: ImlpConfig, n_rows: int, buffer: FeatureBuffer) -> int:
    return flops_per_batch(cfg, n_rows, len(buffer) if attention_active(cfg, buffer) else 0)


def segment_features(params: ImlpParams, buffer: FeatureBuffer, x, batch_size: int = 1024) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    chunks = [forward(params, x[i : i + batch_size], buffer).h for i in range(0, len(x), batch_size)]
    return np.concatenate(chunks)


def finalize_segment(params: ImlpParams, buffer: FeatureBuffer, data: TrainData, config: TrainConfig | None = None) -> FeatureBuffer:
    """Push the mean penultimate feature of ``data`` (after training) into ``buffer``.

    A no-op under ``buffer_granularity='batch'``, where pushes happen per step.
    """
    cfg = params.config
    if cfg.buffer_granularity == "batch":
        return buffer
    feats = segment_features(params, buffer, data.x)
    buffer.push(segment_prototype(feats, cfg.normalize_prototypes, cfg.prototype_eps))
    return buffer


class StreamRunner:
    """Drives one run over a stream and keeps the final model state."""

    def __init__(
        self,
        model_config: ImlpConfig,
        train_config: TrainConfig,
        model_kind: str = "imlp",
        energy: EnergyProvider | None = None,
        clock: str = "modeled",
        flops_per_second: float | None = None,
    ):
        if model_kind not in MODEL_KINDS:
            raise ConfigError(f"model kind must be one of {MODEL_KINDS}")
        if model_kind == "plain-mlp":
            model_config = dataclasses.replace(model_config, attention_enabled=False)
        if clock not in ("modeled", "wall"):
            raise ConfigError("clock must be 'modeled' or 'wall'")
        self.model_config = model_config
        self.train_config = train_config
        self.model_kind = model_kind
        self.energy = energy or EnergyProvider("flops-proxy")
        self.clock_kind = clock
        self.flops_per_second = flops_per_second
        self.params: ImlpParams | None = None
        self.buffer: FeatureBuffer | None = None
        self.opt_state: OptimizerState | None = None
        self.access_log: list[tuple[int, tuple[int, ...]]] = []

    def _clock(self):
        if self.clock_kind == "wall":
            return WallClock()
        return ModeledClock(self.flops_per_second) if self.flops_per_second else ModeledClock()

    def _log_access(self, segment: int, sources: np.ndarray) -> None:
        self.access_log.append((segment, tuple(int(s) for s in sources)))

    def run(self, stream: Sequence[StreamSegment]) -> list[SegmentResult]:
        if not stream:
            raise EmptySegmentError("stream has no segments")
        cfg, tcfg = self.model_config, self.train_config
        d_in = {np.asarray(s.x_train).shape[1] for s in stream}
        if d_in != {cfg.d_in}:
            raise ConfigError(f"segments have feature widths {sorted(d_in)}, model expects {cfg.d_in}")
        clock = self._clock()
        self.access_log = []
        self.params = init_params(cfg, tcfg.seed)
        self.opt_state = OptimizerState.fresh(self.params, tcfg)
        self.buffer = cfg.new_buffer()
        seen: list[TrainData] = []
        results = []
        for seg in stream:
            try:
                results.append(self._run_segment(seg, seen, clock))
            except SegmentError:
                raise
            except ImlpError as exc:
                raise SegmentError(seg.index, exc) from exc
        return results

    def _run_segment(self, seg: StreamSegment, seen: list[TrainData], clock) -> SegmentResult:
        cfg, tcfg = self.model_config, self.train_config
        own = seg.train_data()
        if len(own) == 0:
            raise EmptySegmentError("no training rows")
        seen.append(own)
        if tcfg.mode == "cumulative-retrain":
            self.params = init_params(cfg, tcfg.seed)
            self.opt_state = OptimizerState.fresh(self.params, tcfg)
            self.buffer = cfg.new_buffer()
            data = TrainData.concat(seen)
        else:
            data = own

        t0 = clock.now()
        self.params, self.opt_state, stats = train_segment(
            self.params, self.opt_state, self.buffer, data, tcfg, segment=seg.index, access_log=self._log_access
        )
        clock.advance(stats.flops)

        infer = inference_flops(cfg, len(seg.y_test), self.buffer)
        trace = forward(self.params, seg.x_test, self.buffer)
        y_pred = np.argmax(trace.probs, axis=1)
        clock.advance(infer)

        if cfg.buffer_granularity == "segment":
            proto = inference_flops(cfg, len(data), self.buffer)
            finalize_segment(self.params, self.buffer, data, tcfg)
            clock.advance(proto)
            infer += proto
        t1 = clock.now()

        energy = self.energy.energy(stats.flops + infer, t0, t1)
        result = SegmentResult.build(
            seg.index,
            balanced_accuracy(seg.y_test, y_pred),
            log_loss(seg.y_test, trace.probs),
            energy,
            t1 - t0,
            train_flops=stats.flops,
            inference_flops=infer,
            n_train=len(data),
            n_test=len(seg.y_test),
            epoch_losses=stats.epoch_losses,
        )
        logger.info(
            json.dumps(
                {
                    "event": "segment_done",
                    "segment": seg.index,
                    "mode": tcfg.mode,
                    "epoch_losses": stats.epoch_losses,
                    "balanced_accuracy": result.balanced_accuracy,
                    "energy_j": result.energy_j,
                    "time_s": result.wall_time_s,
                }
            )
        )
        return result


def run_stream(
    stream: Sequence[StreamSegment],
    model_kind: str,
    model_config: ImlpConfig,
    train_config: TrainConfig,
    energy: EnergyProvider | None = None,
    clock: str = "modeled",
) -> list[SegmentResult]:
    return StreamRunner(model_config, train_config, model_kind, energy, clock).run(stream)
