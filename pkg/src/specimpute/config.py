"""Run configuration: strict JSON parsing, validation, and echo.

Unknown keys are rejected at every level so typos fail fast, and the parsed
tree serializes back to a dict (the config echo embedded in artifacts).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .data import DataError, MaskSpec, SynthSpec
from .denoiser import DenoiserConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]


class ConfigError(Exception):
    pass


def _take(section: dict, allowed: dict, where: str) -> dict:
    """Merge user keys over defaults, rejecting unknown keys."""
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object, got {type(section).__name__}")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    merged = dict(allowed)
    merged.update(section)
    return merged


@dataclass
class SynthConfig:
    features: int = 4
    length: int = 9600
    seed: int = 0
    period: int = 96
    components: list | None = None      # explicit per-feature (cycles, amp, phase)
    trend: list | None = None
    waves: int = 2                      # auto-generation knobs (components=None)
    max_cycles: float = 8.0
    amp_lo: float = 0.5
    amp_hi: float = 1.5
    trend_slope: float = 0.5
    noise_std: float = 0.05

    def to_synth_spec(self) -> SynthSpec:
        import numpy as np
        if self.components is not None:
            trend = self.trend if self.trend is not None else [[0.0]] * self.features
            return SynthSpec(num_features=self.features, length=self.length,
                             components=[[tuple(c) for c in comps]
                                         for comps in self.components],
                             trend=trend, noise_std=self.noise_std,
                             period=self.period, seed=self.seed)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x5EED]))
        components, trend = [], []
        for _ in range(self.features):
            waves = []
            for _ in range(self.waves):
                cycles = float(rng.integers(1, max(2, int(self.max_cycles)) + 1))
                amp = float(rng.uniform(self.amp_lo, self.amp_hi))
                phase = float(rng.uniform(0.0, 2.0 * 3.141592653589793))
                waves.append((cycles, amp, phase))
            components.append(waves)
            trend.append([float(rng.uniform(-1.0, 1.0)),
                          float(rng.uniform(-self.trend_slope, self.trend_slope))])
        return SynthSpec(num_features=self.features, length=self.length,
                         components=components, trend=trend,
                         noise_std=self.noise_std, period=self.period,
                         seed=self.seed)


@dataclass
class DatasetConfig:
    kind: str = "synth"
    csv_path: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    window_length: int = 96
    window_stride: int = 96
    train_fraction: float = 0.8
    val_fraction: float = 0.1

    def validate(self) -> None:
        if self.kind not in ("synth", "csv"):
            raise ConfigError(f"dataset.kind must be 'synth' or 'csv', got {self.kind!r}")
        if self.kind == "csv" and not self.csv_path:
            raise ConfigError("dataset.csv_path is required for kind 'csv'")
        if not 0 < self.train_fraction < 1 or not 0 <= self.val_fraction < 1:
            raise ConfigError("invalid dataset split fractions")
        if self.train_fraction + self.val_fraction >= 1.0:
            raise ConfigError("train+val fractions must leave room for a test split")


@dataclass
class ScheduleConfig:
    steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.5
    kind: str = "quad"

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError("schedule.steps must be >= 1")
        if not 0 < self.beta_start < self.beta_end < 1:
            raise ConfigError("need 0 < beta_start < beta_end < 1")
        if self.kind not in ("quad", "linear"):
            raise ConfigError(f"schedule.kind must be 'quad' or 'linear', got {self.kind!r}")


@dataclass
class TrainingConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    val_every: int = 1

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("training.epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("training.lr must be > 0")
        if self.val_every < 1:
            raise ConfigError("training.val_every must be >= 1")


@dataclass
class SamplingConfig:
    num_samples: int = 8
    quantiles: tuple = (0.05, 0.25, 0.5, 0.75, 0.95)

    def validate(self) -> None:
        if self.num_samples < 1:
            raise ConfigError("sampling.num_samples must be >= 1")
        if any(not 0 < q < 1 for q in self.quantiles):
            raise ConfigError("quantile levels must lie in (0,1)")
        if list(self.quantiles) != sorted(self.quantiles):
            raise ConfigError("quantile levels must be sorted ascending")


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    mask: MaskSpec = field(default_factory=lambda: MaskSpec(seed=0))
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def validate(self) -> "RunConfig":
        self.dataset.validate()
        self.schedule.validate()
        self.training.validate()
        self.sampling.validate()
        try:
            self.mask.validate()
            self.model.validate()
        except (DataError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def override_seed(self, seed: int) -> None:
        """Apply a command-line master seed to every seeded component."""
        self.training.seed = seed
        self.mask.seed = seed
        self.dataset.synth.seed = seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampling"]["quantiles"] = list(self.sampling.quantiles)
        return d


def parse_config(raw: dict) -> RunConfig:
    """Build a validated RunConfig from a plain dict, rejecting unknown keys."""
    top = _take(raw, {"dataset": {}, "mask": {}, "model": {}, "schedule": {},
                      "training": {}, "sampling": {}}, "config")

    ds_raw = dict(top["dataset"])
    synth_raw = ds_raw.pop("synth", {})
    ds = _take(ds_raw, {"kind": "synth", "csv_path": None, "window_length": 96,
                        "window_stride": 96, "train_fraction": 0.8,
                        "val_fraction": 0.1}, "dataset")
    sdef = SynthConfig()
    synth = _take(synth_raw, {f: getattr(sdef, f) for f in
                              SynthConfig.__dataclass_fields__}, "dataset.synth")

    mask = _take(top["mask"], {"pattern": "pointwise", "rate": 0.1, "block_min": None,
                               "block_max": None, "aligned": False, "seed": 0}, "mask")
    model_defaults = {f: getattr(DenoiserConfig(), f) for f in
                      DenoiserConfig.__dataclass_fields__}
    model = _take(top["model"], model_defaults, "model")
    sched = _take(top["schedule"], {"steps": 50, "beta_start": 1e-4,
                                    "beta_end": 0.5, "kind": "quad"}, "schedule")
    train = _take(top["training"], {"epochs": 200, "batch_size": 16,
                                    "lr": 1e-3, "seed": 0, "val_every": 1}, "training")
    sampling = _take(top["sampling"], {"num_samples": 8,
                                       "quantiles": [0.05, 0.25, 0.5, 0.75, 0.95]},
                     "sampling")
    sampling["quantiles"] = tuple(sampling["quantiles"])

    cfg = RunConfig(
        dataset=DatasetConfig(synth=SynthConfig(**synth), **ds),
        mask=MaskSpec(**mask),
        model=DenoiserConfig(**model),
        schedule=ScheduleConfig(**sched),
        training=TrainingConfig(**train),
        sampling=SamplingConfig(**sampling),
    )
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)
