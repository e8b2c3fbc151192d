"""Experiment configuration: one JSON document drives the whole pipeline.

Defaults reproduce the desk-scale experiment (a 4,000-blade sweep, three
architectures at depth 16).  Every command copies the exact config it
ran with into its output directory, so artifacts are self-describing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .geometry import BumpAxes, DatumSpec, SweepGrid
from .panel import FlowConditions


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BumpAxesConfig:
    centers: tuple[float, ...]
    amplitudes: tuple[float, ...]
    widths: tuple[float, ...]

    def to_axes(self) -> BumpAxes:
        return BumpAxes(
            centers=tuple(self.centers),
            amplitudes=tuple(self.amplitudes),
            widths=tuple(self.widths),
        )


# 5 centers x 5 amplitudes x 2 widths = 50 pressure-side variants and
# 5 x 8 x 2 = 80 suction-side variants: 4,000 blades total.  Suction
# amplitudes skip zero so its axis carries more resolution where the
# flow is most sensitive.
_PRESSURE_BUMP = BumpAxesConfig(
    centers=(0.20, 0.35, 0.50, 0.65, 0.80),
    amplitudes=(-0.03, -0.015, 0.0, 0.015, 0.03),
    widths=(0.15, 0.30),
)
_SUCTION_BUMP = BumpAxesConfig(
    centers=(0.20, 0.35, 0.50, 0.65, 0.80),
    amplitudes=(-0.04, -0.03, -0.02, -0.01, 0.01, 0.02, 0.03, 0.04),
    widths=(0.15, 0.30),
)


@dataclass(frozen=True)
class SweepConfig:
    pressure: tuple[BumpAxesConfig, ...] = (_PRESSURE_BUMP,)
    suction: tuple[BumpAxesConfig, ...] = (_SUCTION_BUMP,)
    amp_jitter: float = 0.2
    center_jitter: float = 0.03
    width_jitter: float = 0.2
    seed: int = 7
    count: int | None = None  # None = exact grid size

    def to_grid(self) -> SweepGrid:
        return SweepGrid(
            pressure=tuple(b.to_axes() for b in self.pressure),
            suction=tuple(b.to_axes() for b in self.suction),
            amp_jitter=self.amp_jitter,
            center_jitter=self.center_jitter,
            width_jitter=self.width_jitter,
        )


@dataclass(frozen=True)
class ArchChoice:
    arch: str
    depth: int = 16


@dataclass(frozen=True)
class TrainConfig:
    architectures: tuple[ArchChoice, ...] = (
        ArchChoice("nn2"),
        ArchChoice("cnn2_nn2"),
        ArchChoice("cnn4_nn2"),
    )
    fc_hidden: int = 256
    keep_prob: float = 0.5
    optimizer: str = "momentum"
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 6
    master_seed: int = 99


@dataclass(frozen=True)
class ExperimentConfig:
    datum: DatumSpec = field(default_factory=DatumSpec)
    flow: FlowConditions = field(default_factory=FlowConditions)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    label_interval: float = 0.1
    split_seed: int = 17
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def _tuple_of(cls, items):
    # JSON arrays arrive as lists; the config dataclasses hold tuples.
    return tuple(
        cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in dict(item).items()})
        for item in items
    )


def config_from_dict(doc: dict) -> ExperimentConfig:
    try:
        sweep_doc = dict(doc.get("sweep", {}))
        if "pressure" in sweep_doc:
            sweep_doc["pressure"] = _tuple_of(BumpAxesConfig, sweep_doc["pressure"])
        if "suction" in sweep_doc:
            sweep_doc["suction"] = _tuple_of(BumpAxesConfig, sweep_doc["suction"])
        train_doc = dict(doc.get("train", {}))
        if "architectures" in train_doc:
            train_doc["architectures"] = _tuple_of(
                ArchChoice, train_doc["architectures"]
            )
        return ExperimentConfig(
            datum=DatumSpec(**doc.get("datum", {})),
            flow=FlowConditions(**doc.get("flow", {})),
            sweep=SweepConfig(**sweep_doc),
            label_interval=doc.get("label_interval", 0.1),
            split_seed=doc.get("split_seed", 17),
            train=TrainConfig(**train_doc),
        )
    except TypeError as err:
        raise ConfigError(f"bad config field: {err}") from None


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(doc)


def save_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(config.to_json())
