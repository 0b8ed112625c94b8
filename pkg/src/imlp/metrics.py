"""Classification metrics, energy accounting and NetScore-T."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, MissingTraceError, ShapeError

# Floor used in place of E = 0 when scoring; NS is undefined there.
ENERGY_FLOOR_J = 1e-3
# Order-of-magnitude placeholder, not a physical constant.
DEFAULT_JOULES_PER_FLOP = 1e-9
# Nominal throughput of the modeled clock, equally non-physical.
DEFAULT_FLOPS_PER_SECOND = 1e9

TRACE_HEADER = ("timestamp_s", "power_w")


def balanced_accuracy(y_true, y_pred, n_classes: int | None = None) -> float:
    """Mean recall over the classes present in ``y_true``.

    Classes that never occur in ``y_true`` are left out of the mean rather
    than counted as zero recall.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"y_true {y_true.shape} and y_pred {y_pred.shape} differ")
    if y_true.size == 0:
        raise ValueError("balanced_accuracy of an empty sample")
    recalls = [np.mean(y_pred[y_true == c] == c) for c in np.unique(y_true)]
    return float(np.mean(recalls))


def log_loss(y_true, probs, clip_eps: float = 1e-15) -> float:
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != y_true.shape[0]:
        raise ShapeError(f"probs {probs.shape} do not match {y_true.shape[0]} labels")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= probs.shape[1]):
        raise ShapeError("label index outside the probability columns")
    picked = probs[np.arange(len(y_true)), y_true]
    return float(np.mean(-np.log(np.maximum(picked, clip_eps))))


@dataclass(frozen=True)
class PowerTrace:
    """Ordered ``(timestamp_s, power_w)`` samples."""

    timestamps: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=np.float64)
        p = np.asarray(self.power, dtype=np.float64)
        if t.shape != p.shape or t.ndim != 1:
            raise ShapeError("timestamps and power must be 1-D and equally long")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("trace timestamps must be strictly increasing")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("trace power must be finite and non-negative")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "power", p)

    @classmethod
    def from_pairs(cls, pairs) -> "PowerTrace":
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros(0), np.zeros(0))
        t, p = zip(*pairs)
        return cls(np.array(t), np.array(p))

    @classmethod
    def read_csv(cls, path) -> "PowerTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
                raise MissingTraceError(f"{path}: expected header {','.join(TRACE_HEADER)}")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        return cls.from_pairs(rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for t, p in zip(self.timestamps, self.power):
                w.writerow([repr(float(t)), repr(float(p))])


def _interp(trace: PowerTrace, t: float) -> float:
    return float(np.interp(t, trace.timestamps, trace.power))


def integrate_energy(trace: PowerTrace, t_start: float, t_end: float) -> float:
    """Trapezoidal integral of power over ``[t_start, t_end]`` in Joules.

    The window is clamped to the trace's span; boundary values are linearly
    interpolated, so the result is exact for piecewise-linear power.
    """
    if not t_start < t_end:
        raise ValueError(f"need t_start < t_end, got [{t_start}, {t_end}]")
    ts, ps = trace.timestamps, trace.power
    if ts.size == 0:
        raise MissingTraceError("power trace is empty")
    lo, hi = max(t_start, ts[0]), min(t_end, ts[-1])
    if ts.size == 1 or lo >= hi:
        raise MissingTraceError(f"power trace does not cover [{t_start}, {t_end}]")
    inside = (ts > lo) & (ts < hi)
    t = np.concatenate(([lo], ts[inside], [hi]))
    p = np.concatenate(([_interp(trace, lo)], ps[inside], [_interp(trace, hi)]))
    return float(np.sum(0.5 * (p[1:] + p[:-1]) * np.diff(t)))


def estimate_energy_flops(flops: float, joules_per_flop: float = DEFAULT_JOULES_PER_FLOP) -> float:
    if flops < 0 or joules_per_flop < 0:
        raise ValueError("flops and joules_per_flop must be non-negative")
    return float(flops) * float(joules_per_flop)


def netscore(P: float, E: float) -> float:
    """Per-segment score ``P / log10(E + 1)``.

    At ``E == 0`` the ratio is undefined; the score is capped using
    ``ENERGY_FLOOR_J`` instead (see :func:`netscore_capped`).
    """
    return netscore_capped(P, E)[0]


def netscore_capped(P: float, E: float) -> tuple[float, bool]:
    """``(score, capped)`` where ``capped`` flags the ``E == 0`` substitution."""
    if P < 0 or E < 0:
        raise ValueError(f"netscore needs P >= 0 and E >= 0, got P={P}, E={E}")
    if E == 0:
        return P / math.log10(1.0 + ENERGY_FLOOR_J), True
    return P / math.log10(E + 1.0), False


@dataclass
class SegmentResult:
    segment: int
    balanced_accuracy: float
    log_loss: float
    energy_j: float
    wall_time_s: float
    netscore: float
    netscore_capped: bool = False
    train_flops: int = 0
    inference_flops: int = 0
    n_train: int = 0
    n_test: int = 0
    epoch_losses: list = field(default_factory=list)

    @classmethod
    def build(cls, segment, P, log_loss_value, E, wall_time, **extra) -> "SegmentResult":
        ns, capped = netscore_capped(P, E)
        return cls(segment, float(P), float(log_loss_value), float(E), float(wall_time), ns, capped, **extra)

    def to_dict(self) -> dict:
        return {
            "segment": self.segment,
            "balanced_accuracy": self.balanced_accuracy,
            "log_loss": self.log_loss,
            "energy_j": self.energy_j,
            "wall_time_s": self.wall_time_s,
            "netscore": self.netscore,
            "netscore_capped": self.netscore_capped,
            "train_flops": self.train_flops,
            "inference_flops": self.inference_flops,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "epoch_losses": list(self.epoch_losses),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentResult":
        return cls(**d)


def netscore_t(results: Sequence[SegmentResult | float]) -> float:
    """Stream aggregate: arithmetic mean of the per-segment scores."""
    if not results:
        raise ValueError("netscore_t of an empty stream")
    vals = [r.netscore if isinstance(r, SegmentResult) else float(r) for r in results]
    return math.fsum(vals) / len(vals)


# -- metering -----------------------------------------------------------------


class ModeledClock:
    """Deterministic clock: advances by ``flops / flops_per_second``."""

    kind = "modeled"

    def __init__(self, flops_per_second: float = DEFAULT_FLOPS_PER_SECOND):
        self.flops_per_second = float(flops_per_second)
        self._now = 0.0

    def now(self) -> float:
        return self._now

    def advance(self, flops: int) -> None:
        self._now += flops / self.flops_per_second


class WallClock:
    """Seconds since construction, from ``time.perf_counter``."""

    kind = "wall"

    def __init__(self):
        self._t0 = time.perf_counter()

    def now(self) -> float:
        return time.perf_counter() - self._t0

    def advance(self, flops: int) -> None:
        pass


@dataclass
class EnergyProvider:
    """Source of per-interval energy: a power trace, a FLOPs proxy, or constant power.

    Trace timestamps are read on the run clock (0 = start of the run).
    """

    kind: str
    trace: PowerTrace | None = None
    joules_per_flop: float = DEFAULT_JOULES_PER_FLOP
    watts: float | None = None
    trace_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("trace", "flops-proxy", "constant-power"):
            raise ConfigError(f"unknown energy provider kind {self.kind!r}")
        if self.kind == "trace" and self.trace is None:
            raise ConfigError("trace provider needs a power trace")
        if self.kind == "constant-power" and (self.watts is None or self.watts <= 0):
            raise ConfigError("constant-power provider needs positive watts")
        if self.kind == "flops-proxy" and self.joules_per_flop <= 0:
            raise ConfigError("joules_per_flop must be positive")

    @classmethod
    def parse(cls, spec: str, joules_per_flop: float = DEFAULT_JOULES_PER_FLOP) -> "EnergyProvider":
        """Parse ``flops``, ``constant:<watts>`` or ``trace:<path>``."""
        if spec in ("flops", "flops-proxy"):
            return cls("flops-proxy", joules_per_flop=joules_per_flop)
        if spec.startswith("constant:"):
            try:
                watts = float(spec.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad constant-power spec {spec!r}") from None
            return cls("constant-power", watts=watts)
        if spec.startswith("trace:"):
            path = spec.split(":", 1)[1]
            if not Path(path).exists():
                raise MissingTraceError(f"power trace file not found: {path}")
            return cls("trace", trace=PowerTrace.read_csv(path), trace_path=path)
        raise ConfigError(f"unknown energy spec {spec!r}; use flops, constant:<watts> or trace:<path>")

    def energy(self, flops: int, t_start: float, t_end: float) -> float:
        if self.kind == "flops-proxy":
            return estimate_energy_flops(flops, self.joules_per_flop)
        if self.kind == "constant-power":
            return self.watts * max(t_end - t_start, 0.0)
        return integrate_energy(self.trace, t_start, t_end)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "flops-proxy":
            d["joules_per_flop"] = self.joules_per_flop
        elif self.kind == "constant-power":
            d["watts"] = self.watts
        else:
            d["trace_path"] = self.trace_path
            d["trace_samples"] = int(self.trace.timestamps.size)
        return d
