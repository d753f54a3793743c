"""Bundle of all model pieces a solver needs."""

from __future__ import annotations

from dataclasses import dataclass, field

from .costs import CostParams
from .exogenous import OUParams, SeasonalityParams
from .physical import PowerCurve, SystemParams


@dataclass(frozen=True)
class P2HModel:
    params: SystemParams = field(default_factory=SystemParams)
    curve: PowerCurve = field(default_factory=PowerCurve)
    ou: OUParams = field(default_factory=OUParams)
    seas: SeasonalityParams = field(default_factory=SeasonalityParams)
    cost: CostParams = field(default_factory=CostParams)
