"""Experiment configuration: TOML with [fleet], [adl], [run] sections.

Every field has a default, so a config file only states what it changes.
Unknown keys are rejected to catch typos early.
"""

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib  # py>=3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from ..adl import AdlConfig
from ..errors import ConfigError


@dataclass
class FleetConfig:
    kind: str = "default5"
    seed: int = 7
    patch: int = 32              # packed patch side (mosaic is twice this)
    tadp_pool: int = 32          # adaptation pool per sensor; runs draw subsets
    test_count: int = 32
    source_count: int = 64
    target_iso: list = field(default_factory=lambda: [400])
    source_iso: list = field(default_factory=lambda: [100, 400, 1600, 3200])
    # one value for the whole fleet, or one per sensor: the share of each
    # sensor's legacy source pool whose ground truth is misaligned
    source_misaligned_fraction: float | list = 0.0
    light_factors: list = field(default_factory=lambda: [1.0])

    def __post_init__(self):
        if self.patch < 8 or self.patch % 8:
            raise ConfigError(f"fleet.patch must be a multiple of 8, got {self.patch}")
        if self.tadp_pool < 2 or self.test_count < 1 or self.source_count < 1:
            raise ConfigError("fleet counts must be positive (tadp_pool >= 2)")

    def misaligned_fraction_for(self, sensor_index):
        mf = self.source_misaligned_fraction
        if isinstance(mf, (int, float)):
            return float(mf)
        return float(mf[sensor_index % len(mf)])


@dataclass
class RunConfig:
    out: str = "runs/exp"
    target: int = 0
    targets: list = field(default_factory=list)   # cross-validation targets; [] = all
    tadp_size: int = 16
    sizes: list = field(default_factory=lambda: [4, 8, 16, 32])
    methods: list = field(default_factory=lambda: ["adl", "finetune"])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    widths: list = field(default_factory=lambda: [16, 32, 64])
    ablation_flags: list = field(default_factory=list)
    harmful_variants: list = field(default_factory=lambda: ["base", "harmful1", "harmful2"])
    harmful_sigma: float = 30.0
    record_walltime: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("run.seeds must be nonempty")
        if self.tadp_size < 2:
            raise ConfigError(f"run.tadp_size must be >= 2, got {self.tadp_size}")
        if any(s < 2 for s in self.sizes):
            raise ConfigError(f"run.sizes must all be >= 2, got {self.sizes}")


@dataclass
class ExperimentConfig:
    fleet: FleetConfig = field(default_factory=FleetConfig)
    adl: AdlConfig = field(default_factory=AdlConfig)
    run: RunConfig = field(default_factory=RunConfig)


def _build_section(cls, data, section):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [{section}] config: {exc}") from exc


def config_from_dict(raw):
    unknown = set(raw) - {"fleet", "adl", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return ExperimentConfig(
        fleet=_build_section(FleetConfig, raw.get("fleet", {}), "fleet"),
        adl=_build_section(AdlConfig, raw.get("adl", {}), "adl"),
        run=_build_section(RunConfig, raw.get("run", {}), "run"),
    )


def load_config(path):
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(raw)
