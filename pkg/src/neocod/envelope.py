"""Turning cause fractions into deaths and risks against death envelopes.

The neonatal death envelope for a country-year is split into early
(days 0-6) and late (days 7-27) parts, cause fractions are applied to each
part, and cause-specific risks are expressed per 1000 live births. Grouped
tables (regions, mortality bands, income groups) aggregate deaths first and
recompute fractions and risks from the grouped totals.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from .causes import INJURIES, OTHER
from .errors import ValidationError

#: default share of neonatal deaths occurring in the first week
EARLY_SHARE = 0.74

#: alternative splits used for sensitivity runs
SENSITIVITY_SHARES = (0.65, 0.85)

NMR_BAND_EDGES = (0.0, 5.0, 15.0, 30.0)
NMR_BAND_LABELS = ("[0,5)", "[5,15)", "[15,30)", "[30,inf)")

_SUM_TOL = 1e-6


def split_envelope(total_deaths: float, early_share: float = EARLY_SHARE) -> tuple[float, float]:
    """Split an envelope into (early, late) deaths."""
    if total_deaths < 0:
        raise ValidationError(f"negative envelope: {total_deaths}")
    if not 0.0 <= early_share <= 1.0:
        raise ValidationError(f"early share must be in [0, 1], got {early_share}")
    early = total_deaths * early_share
    return early, total_deaths - early


def allocate_deaths(fractions: dict[str, float], envelope: float) -> dict[str, float]:
    """Cause deaths = fraction * envelope, residual-adjusted to the envelope.

    Drift between the fraction sum and one is absorbed by the cause with the
    most deaths; after adjustment the cause deaths sum back to the envelope
    to within one floating-point spacing. Published-precision exactness is
    enforced later when tables are rounded.
    """
    if envelope < 0:
        raise ValidationError(f"negative envelope: {envelope}")
    if not fractions:
        raise ValidationError("no fractions to allocate")
    vals = np.array(list(fractions.values()), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValidationError("fractions must be finite and non-negative")
    if abs(vals.sum() - 1.0) > _SUM_TOL:
        raise ValidationError(f"fractions sum to {vals.sum()}, not 1")
    deaths = {c: f * envelope for c, f in fractions.items()}
    largest = max(deaths, key=deaths.get)
    deaths[largest] += envelope - sum(deaths.values())
    return deaths


def risk_per_1000(deaths: float, live_births: float) -> float:
    """Cause-specific death risk per 1000 live births."""
    if live_births <= 0:
        raise ValidationError(f"live births must be positive, got {live_births}")
    return 1000.0 * deaths / live_births


def combine_periods(early: dict[str, float], late: dict[str, float]) -> dict[str, float]:
    """Overall (0-27 day) deaths by cause: plain sums of the period deaths."""
    if set(early) != set(late):
        raise ValidationError("early and late allocations cover different causes")
    return {c: early[c] + late[c] for c in early}


def fractions_from_deaths(deaths: dict[str, float]) -> dict[str, float]:
    total = sum(deaths.values())
    if total <= 0:
        raise ValidationError("no deaths to take fractions of")
    return {c: d / total for c, d in deaths.items()}


def nmr_band(nmr: float) -> str:
    """Mortality-level band label for grouped tables."""
    if nmr < 0 or not np.isfinite(nmr):
        raise ValidationError(f"invalid NMR: {nmr}")
    idx = int(np.searchsorted(NMR_BAND_EDGES, nmr, side="right")) - 1
    return NMR_BAND_LABELS[idx]


def fold_injuries(deaths: dict[str, float]) -> dict[str, float]:
    """Add injuries into other, for tables where injuries are not shown."""
    if INJURIES not in deaths:
        return dict(deaths)
    out = {c: d for c, d in deaths.items() if c != INJURIES}
    out[OTHER] = out.get(OTHER, 0.0) + deaths[INJURIES]
    return out


def aggregate(
    frame: pd.DataFrame,
    group_cols: list[str],
    fold_injuries_into_other: bool = False,
) -> pd.DataFrame:
    """Aggregate per-unit cause deaths into grouped fractions and risks.

    ``frame`` is long: one row per (unit_id, year, cause) carrying ``deaths``
    and the unit-year ``live_births`` (repeated across that unit's cause
    rows; it is counted once per unit-year in the denominator). Returns one
    row per group and cause with summed deaths, the grouped fraction, and
    the risk per 1000 live births.
    """
    required = {"unit_id", "year", "cause", "deaths", "live_births", *group_cols}
    missing = required - set(frame.columns)
    if missing:
        raise ValidationError(f"aggregate input missing columns: {sorted(missing)}")
    work = frame.copy()
    if fold_injuries_into_other:
        work.loc[work["cause"] == INJURIES, "cause"] = OTHER
    deaths = (
        work.groupby([*group_cols, "cause"], as_index=False, sort=False)["deaths"].sum()
    )
    births = (
        work.drop_duplicates(["unit_id", "year"])
        .groupby(group_cols, as_index=False, sort=False)["live_births"].sum()
    )
    totals = deaths.groupby(group_cols, as_index=False, sort=False)["deaths"].sum()
    totals = totals.rename(columns={"deaths": "total_deaths"})
    out = deaths.merge(totals, on=group_cols).merge(births, on=group_cols)
    out["fraction"] = out["deaths"] / out["total_deaths"]
    out["risk"] = 1000.0 * out["deaths"] / out["live_births"]
    return out.drop(columns=["total_deaths"])
