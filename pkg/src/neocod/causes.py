"""Cause categories and the fixed cause sets used by each estimation route."""
from __future__ import annotations

from dataclasses import dataclass

PRETERM = "preterm"
INTRAPARTUM = "intrapartum"
CONGENITAL = "congenital"
SEPSIS = "sepsis"
PNEUMONIA = "pneumonia"
DIARRHOEA = "diarrhoea"
TETANUS = "tetanus"
INJURIES = "injuries"
OTHER = "other"

#: Cause lists are fixed per model family; order is the reporting order.
_SEVEN_CAUSES = (PRETERM, INTRAPARTUM, CONGENITAL, SEPSIS, PNEUMONIA, INJURIES, OTHER)
_EIGHT_CAUSES = (PRETERM, INTRAPARTUM, CONGENITAL, SEPSIS, PNEUMONIA, DIARRHOEA, TETANUS, OTHER)

_CANONICAL = {
    "low_mortality": (_SEVEN_CAUSES, PRETERM),
    "high_mortality": (_EIGHT_CAUSES, INTRAPARTUM),
    "vr": (_SEVEN_CAUSES, PRETERM),
}


@dataclass(frozen=True)
class CauseSet:
    """Ordered cause categories for one model family, with its baseline cause.

    The baseline cause is the reference category whose linear predictor is
    fixed to zero in the multinomial model.
    """

    model_family: str
    causes: tuple[str, ...]
    baseline: str

    def __post_init__(self) -> None:
        if self.model_family not in _CANONICAL:
            raise ValueError(f"unknown model family: {self.model_family!r}")
        expected_causes, expected_baseline = _CANONICAL[self.model_family]
        if tuple(self.causes) != expected_causes:
            raise ValueError(
                f"cause list for {self.model_family!r} must be {expected_causes}"
            )
        if self.baseline != expected_baseline:
            raise ValueError(
                f"baseline for {self.model_family!r} must be {expected_baseline!r}"
            )

    @property
    def non_baseline(self) -> tuple[str, ...]:
        return tuple(c for c in self.causes if c != self.baseline)

    def index(self, cause: str) -> int:
        return self.causes.index(cause)


LOW_MORTALITY = CauseSet("low_mortality", _SEVEN_CAUSES, PRETERM)
HIGH_MORTALITY = CauseSet("high_mortality", _EIGHT_CAUSES, INTRAPARTUM)
VR = CauseSet("vr", _SEVEN_CAUSES, PRETERM)

CAUSE_SETS = {"low_mortality": LOW_MORTALITY, "high_mortality": HIGH_MORTALITY, "vr": VR}


def cause_set_for(family: str) -> CauseSet:
    try:
        return CAUSE_SETS[family]
    except KeyError:
        raise ValueError(f"unknown model family: {family!r}") from None
