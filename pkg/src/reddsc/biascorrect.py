"""Detection-error model for satellite deforestation data.

A sensor detects a fraction ``r_d`` of truly deforested area and falsely
flags a fraction ``r_f`` of standing forest. Two sites of equal area ``A``
with true losses ``D1`` and ``D2`` then show an observed difference of
``(D1 - D2) * (r_d - r_f)``: comparisons understate true differences by the
factor ``r_d - r_f``, independent of ``A``.

The rates are scalars for a whole analysis run. A sensor whose sensitivity
changes over time (for instance a step change mid-record) cannot be expressed
here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .errors import DeforestationExceedsArea, ZeroBaseline

__all__ = [
    "BiasModel",
    "PRESETS",
    "predicted_deforestation",
    "correction_factor",
    "correct_difference",
    "corrected_effectiveness",
    "Effectiveness",
]


@dataclass(frozen=True)
class BiasModel:
    r_d: float
    r_f: float

    def __post_init__(self):
        r_d, r_f = float(self.r_d), float(self.r_f)
        if not (0.0 <= r_f < r_d <= 1.0):
            raise ValueError(f"require 0 <= r_f < r_d <= 1, got r_d={r_d}, r_f={r_f}")
        object.__setattr__(self, "r_d", r_d)
        object.__setattr__(self, "r_f", r_f)

    @classmethod
    def preset(cls, name: str) -> "BiasModel":
        try:
            return PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown bias preset {name!r}; choose from {sorted(PRESETS)}") from None


PRESETS = {
    # dry African woodlands, field-plot and radar comparison
    "mcnicol2018": BiasModel(r_d=0.19, r_f=0.08),
    # product providers' own accuracy figures for the wet tropics
    "hansen-wet-tropics": BiasModel(r_d=0.83, r_f=0.002),
    "perfect": BiasModel(r_d=1.0, r_f=0.0),
}


def predicted_deforestation(model: BiasModel, area_ha: float, true_defor_ha: float) -> float:
    """Area the sensor reports as deforested: ``r_f*(A - D) + r_d*D``."""
    if not 0 <= true_defor_ha <= area_ha:
        raise DeforestationExceedsArea(
            f"true deforestation {true_defor_ha} ha outside [0, {area_ha}] ha"
        )
    return model.r_f * (area_ha - true_defor_ha) + model.r_d * true_defor_ha


def correction_factor(model: BiasModel) -> float:
    return model.r_d - model.r_f


def correct_difference(model: BiasModel, observed_diff_ha: float) -> float:
    """True difference implied by an observed difference between two equal-area sites."""
    return observed_diff_ha / correction_factor(model)


class Effectiveness(NamedTuple):
    value: float
    over_unity: bool


def corrected_effectiveness(observed_effect_ha_per_yr: float, baseline_ha_per_yr: float,
                            model: BiasModel) -> Effectiveness:
    """Observed effect as a fraction of baseline, divided by the correction factor.

    Values above 1 are returned as computed and flagged: they mean the
    correction overshoots, i.e. the error model does not fit the data.
    """
    if baseline_ha_per_yr == 0:
        raise ZeroBaseline("baseline deforestation rate is zero")
    v = (observed_effect_ha_per_yr / baseline_ha_per_yr) / correction_factor(model)
    return Effectiveness(v, v > 1)
