"""Run configuration: one JSON document, one block per module.

Unknown keys are rejected at every level so typos fail fast instead of
silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .bdp import GridConfig
from .costs import CostParams
from .exogenous import OUParams, SeasonalityParams
from .model import P2HModel
from .physical import PowerCurve, SystemParams
from .qlearn import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class QuantizerConfig:
    L: int = 400
    path: str | None = None   # overrides the bundled file when set

    def load(self):
        from .quantization import bundled_quantizer, load_quantizer

        if self.path is not None:
            return load_quantizer(self.path)
        return bundled_quantizer(self.L)


@dataclass(frozen=True)
class SimConfig:
    n_trajectories: int = 1000
    seed: int = 0
    r0: float | None = None    # defaults to the critical storage temperature
    w0: float = 4.0            # [m/s]
    s0: float = 37.0           # [EUR/MWh]

    def initial_state(self, model: P2HModel):
        from .physical import State

        r0 = self.r0 if self.r0 is not None else \
            model.cost.resolve_r_crit(model.params)
        return State(r=float(r0), w=self.w0, s=self.s0)


_BLOCKS = {
    "system": SystemParams,
    "power_curve": PowerCurve,
    "ou": OUParams,
    "seasonality": SeasonalityParams,
    "cost": CostParams,
    "grid": GridConfig,
    "quantizer": QuantizerConfig,
    "training": TrainConfig,
    "simulation": SimConfig,
}


@dataclass(frozen=True)
class RunConfig:
    system: SystemParams = field(default_factory=SystemParams)
    power_curve: PowerCurve = field(default_factory=PowerCurve)
    ou: OUParams = field(default_factory=OUParams)
    seasonality: SeasonalityParams = field(default_factory=SeasonalityParams)
    cost: CostParams = field(default_factory=CostParams)
    grid: GridConfig = field(default_factory=GridConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    simulation: SimConfig = field(default_factory=SimConfig)

    def model(self) -> P2HModel:
        return P2HModel(params=self.system, curve=self.power_curve, ou=self.ou,
                        seas=self.seasonality, cost=self.cost)

    def validate(self):
        # cross-field checks beyond per-block constructors
        self.cost.resolve_r_crit(self.system)
        if self.simulation.r0 is not None and not \
                self.system.r_min <= self.simulation.r0 <= self.system.r_max:
            raise ConfigError("simulation.r0 outside the storage range")
        return self


def _build_block(cls, data: dict, block: str):
    init_fields = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - init_fields
    if unknown:
        raise ConfigError(f"unknown keys in '{block}': {sorted(unknown)}")
    if cls is PowerCurve and "coeffs" in data:
        data = dict(data, coeffs=tuple(data["coeffs"]))
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{block}' block: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    unknown = set(doc) - set(_BLOCKS)
    if unknown:
        raise ConfigError(f"unknown top-level blocks: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _BLOCKS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ConfigError(f"'{name}' must be an object")
            kwargs[name] = _build_block(cls, doc[name], name)
    return RunConfig(**kwargs).validate()


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for name, cls in _BLOCKS.items():
        block = getattr(cfg, name)
        fields = {}
        for f in dataclasses.fields(cls):
            if not f.init:
                continue
            value = getattr(block, f.name)
            if isinstance(value, tuple):
                value = list(value)
            fields[f.name] = value
        out[name] = fields
    return out


def save_config(path, cfg: RunConfig):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
