"""Run configuration and orchestration of seeded stream runs."""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import checkpoint
from .data import load_manifest, stream_from_manifest
from .errors import ConfigError
from .metrics import DEFAULT_FLOPS_PER_SECOND, DEFAULT_JOULES_PER_FLOP, ENERGY_FLOOR_J, EnergyProvider
from .model import ImlpConfig
from .report import build_aggregate_report, build_run_report, write_json
from .trainer import MODEL_KINDS, StreamRunner, TrainConfig

DEFAULT_SEEDS = (7, 42, 101)

_MODEL_KEYS = {f.name for f in dataclasses.fields(ImlpConfig)} - {"d_in", "n_classes"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}

PROTOCOL = {
    "evaluation": "test split scored after the segment's training, before its prototype is enqueued",
    "prototype_pass": "one inference pass over the segment's training rows after the last update",
    "initialization": "he-uniform weights (bound sqrt(6/fan_in)), zero biases",
    "preprocessor_fit": "first segment's training split, frozen for the stream",
    "flops_training_multiplier": 3,
    "energy_floor_j": ENERGY_FLOOR_J,
    "log_loss_clip": 1e-15,
    "std": "population (ddof=0)",
}


@dataclass
class RunConfig:
    manifest: str
    model: str = "imlp"
    imlp: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    energy: str = "flops"
    joules_per_flop: float = DEFAULT_JOULES_PER_FLOP
    clock: str = "modeled"
    flops_per_second: float = DEFAULT_FLOPS_PER_SECOND
    output_dir: str = "runs"
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    workers: int = 1

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        unknown = set(self.imlp) - _MODEL_KEYS
        if unknown:
            raise ConfigError(f"unknown imlp config keys: {sorted(unknown)}")
        unknown = set(self.train) - _TRAIN_KEYS
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if not self.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        if self.clock not in ("modeled", "wall"):
            raise ConfigError("clock must be 'modeled' or 'wall'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        # fail fast on bad values before any work starts
        try:
            ImlpConfig(d_in=1, n_classes=1, **self.imlp)
            TrainConfig(**self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "manifest" not in d:
            raise ConfigError("config needs a 'manifest' path")
        d = dict(d)
        if base_dir is not None:
            for key in ("manifest", "output_dir"):
                if key in d and not Path(d[key]).is_absolute():
                    d[key] = str(base_dir / d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read config ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d, Path(path).resolve().parent)


def _energy(cfg: RunConfig) -> EnergyProvider:
    return EnergyProvider.parse(cfg.energy, cfg.joules_per_flop)


def config_echo(cfg: RunConfig, manifest: dict, seed: int) -> dict:
    model_cfg = ImlpConfig(d_in=manifest["d_in"], n_classes=manifest["n_classes"], **cfg.imlp)
    if cfg.model == "plain-mlp":
        model_cfg = dataclasses.replace(model_cfg, attention_enabled=False)
    return {
        "model": {"kind": cfg.model, **model_cfg.to_dict()},
        "train": TrainConfig(seed=seed, **cfg.train).to_dict(),
        "energy": _energy(cfg).describe(),
        "clock": {"kind": cfg.clock, "flops_per_second": cfg.flops_per_second if cfg.clock == "modeled" else None},
        "data": {
            "manifest_hash": manifest["hash"],
            "n_segments": len(manifest["segments"]),
            "d_in": manifest["d_in"],
            "n_classes": manifest["n_classes"],
            "split": manifest["split"],
        },
        "protocol": PROTOCOL,
    }


def run_one_seed(cfg: RunConfig, seed: int) -> tuple[str, dict]:
    manifest = load_manifest(cfg.manifest)
    stream = stream_from_manifest(manifest)
    model_cfg = ImlpConfig(d_in=manifest["d_in"], n_classes=manifest["n_classes"], **cfg.imlp)
    train_cfg = TrainConfig(seed=seed, **cfg.train)
    runner = StreamRunner(
        model_cfg, train_cfg, cfg.model, _energy(cfg), clock=cfg.clock, flops_per_second=cfg.flops_per_second
    )
    results = runner.run(stream)
    report = build_run_report(config_echo(cfg, manifest, seed), results, seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = f"report_seed{seed}.json"
    write_json(out / name, report)
    checkpoint.save(out / f"checkpoint_seed{seed}.bin", runner.params, runner.buffer, runner.opt_state.step)
    return name, report


def execute_run(cfg: RunConfig) -> dict:
    """Run every seed, write one report per seed plus ``aggregate.json``."""
    manifest = load_manifest(cfg.manifest)
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = list(pool.map(run_one_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        outputs = [run_one_seed(cfg, s) for s in cfg.seeds]
    names = [n for n, _ in outputs]
    reports = [r for _, r in outputs]
    echo = config_echo(cfg, manifest, cfg.seeds[0])
    echo["train"].pop("seed")
    aggregate = build_aggregate_report(echo, reports, names)
    write_json(Path(cfg.output_dir) / "aggregate.json", aggregate)
    return {"reports": names, "aggregate": aggregate}
