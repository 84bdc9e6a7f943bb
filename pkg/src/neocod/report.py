"""Report tables in the published layouts.

All rounding happens here, at serialization: percentages and risks to one
decimal, proportions to two, death counts to one decimal of the stated unit
(thousands in the global table, hundreds in the country table). Upstream
artifacts stay full precision.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from . import envelope as env
from .errors import ValidationError
from .util import round_half_up

#: global-table rows: the eight-cause breakdown with injuries folded away
TABLE1_CAUSES = (
    "preterm", "intrapartum", "congenital", "sepsis", "pneumonia",
    "diarrhoea", "tetanus", "other",
)

#: country-table columns: every cause either family can report
COUNTRY_CAUSES = (
    "preterm", "intrapartum", "congenital", "sepsis", "pneumonia",
    "diarrhoea", "tetanus", "injuries", "other",
)

METHOD_LABEL = {
    "vr": "high-quality VR",
    "low_mortality_model": "low mort model",
    "high_mortality_model": "high mort model",
}

PERIOD_LABEL = {"early": "Early", "late": "Late", "overall": "Overall"}


def _r(x, nd):
    return round_half_up(float(x), nd) if pd.notna(x) else np.nan


def _global_slice(aggregates: pd.DataFrame, year: int) -> pd.DataFrame:
    sel = aggregates[
        (aggregates["grouping"] == "global") & (aggregates["year"] == year)
    ]
    if sel.empty:
        raise ValidationError(f"no global aggregates for year {year}")
    return sel


def table1(aggregates: pd.DataFrame, year: int) -> pd.DataFrame:
    """Global proportions, deaths (thousands), and overall risk per cause."""
    sel = _global_slice(aggregates, year).set_index(["period", "cause"])
    rows = []
    for cause in TABLE1_CAUSES:
        row: dict = {"cause": cause}
        for period in ("early", "late", "overall"):
            if (period, cause) in sel.index:
                a = sel.loc[(period, cause)]
                pct = 100.0 * a["fraction"]
                deaths = (a["deaths"] / 1000.0,
                          a["deaths_lo"] / 1000.0, a["deaths_hi"] / 1000.0)
                risk = a["risk"]
            else:
                pct, deaths, risk = 0.0, (0.0, np.nan, np.nan), 0.0
            row[f"{period}_pct"] = _r(pct, 1)
            row[f"{period}_deaths"] = _r(deaths[0], 1)
            row[f"{period}_deaths_lo"] = _r(deaths[1], 1)
            row[f"{period}_deaths_hi"] = _r(deaths[2], 1)
            if period == "overall":
                row["risk"] = _r(risk, 1)
        rows.append(row)
    return pd.DataFrame(rows)


def _unit_bands(results: pd.DataFrame, year: int) -> pd.Series:
    """NMR band per unit, from its overall envelope and live births."""
    overall = results[
        (results["year"] == year) & (results["period"] == "overall")
    ].drop_duplicates("unit_id")
    nmr = 1000.0 * overall["envelope"] / overall["live_births"]
    return pd.Series(
        [env.nmr_band(v) for v in nmr], index=overall["unit_id"].to_numpy()
    )


def nmr_band_table(
    results: pd.DataFrame, aggregates: pd.DataFrame, year: int
) -> pd.DataFrame:
    """Per NMR band: cross-country median proportions and aggregate risks.

    Proportions are the unweighted median (with quartiles) of unit-level
    fractions within the band; units whose cause set lacks a cause simply
    do not contribute to that cause's median. Risks come from the band
    aggregate, so their bounds carry the modelled-unit uncertainty.
    """
    bands = _unit_bands(results, year)
    unit_rows = results[results["year"] == year].copy()
    unit_rows["band"] = unit_rows["unit_id"].map(bands)
    unit_rows["cause"] = unit_rows["cause"].where(
        unit_rows["cause"] != "injuries", "other"
    )
    # folding injuries into other must also fold the fractions
    unit_rows = unit_rows.groupby(
        ["band", "period", "cause", "unit_id"], as_index=False
    ).agg(fraction=("fraction", "sum"))

    agg = aggregates[
        (aggregates["grouping"] == "nmr_band") & (aggregates["year"] == year)
    ].set_index(["group", "period", "cause"])

    out = []
    for band in env.NMR_BAND_LABELS:
        present = unit_rows[unit_rows["band"] == band]
        if present.empty:
            continue
        for period in ("early", "late", "overall"):
            block = present[present["period"] == period]
            for cause in TABLE1_CAUSES:
                fr = block.loc[block["cause"] == cause, "fraction"]
                if fr.empty:
                    med = q1 = q3 = np.nan
                else:
                    med = fr.median()
                    q1, q3 = fr.quantile([0.25, 0.75])
                key = (band, period, cause)
                if key in agg.index:
                    a = agg.loc[key]
                    risk, rlo, rhi = a["risk"], a["risk_lo"], a["risk_hi"]
                else:
                    risk = rlo = rhi = np.nan
                out.append({
                    "band": band, "period": period, "cause": cause,
                    "prop_median": _r(med, 2),
                    "prop_q1": _r(q1, 2), "prop_q3": _r(q3, 2),
                    "risk": _r(risk, 1),
                    "risk_lo": _r(rlo, 1), "risk_hi": _r(rhi, 1),
                })
            band_keys = [k for k in agg.index if k[0] == band and k[1] == period]
            total_risk = sum(float(agg.loc[k, "risk"]) for k in band_keys)
            out.append({
                "band": band, "period": period, "cause": "total",
                "prop_median": np.nan, "prop_q1": np.nan, "prop_q3": np.nan,
                "risk": _r(total_risk, 1),
                "risk_lo": _r(total_risk, 1), "risk_hi": _r(total_risk, 1),
            })
    return pd.DataFrame(out)


def _num_cell(deaths, lo, hi) -> str:
    """Death count in hundreds, with its uncertainty range when present."""
    point = f"{round_half_up(deaths / 100.0, 1):.1f}"
    if pd.isna(lo) or pd.isna(hi):
        return point
    return (f"{point} ({round_half_up(lo / 100.0, 1):.1f}-"
            f"{round_half_up(hi / 100.0, 1):.1f})")


def country_table(results: pd.DataFrame, year: int) -> pd.DataFrame:
    """Per unit and period: prop / risk / num rows across all causes."""
    sel = results[results["year"] == year]
    if sel.empty:
        raise ValidationError(f"no unit results for year {year}")
    out = []
    for unit in sorted(sel["unit_id"].unique()):
        urows = sel[sel["unit_id"] == unit]
        method = METHOD_LABEL[urows["method"].iloc[0]]
        for period in ("early", "late", "overall"):
            block = urows[urows["period"] == period].set_index("cause")
            if block.empty:
                continue
            births = block["live_births"].iloc[0]
            envelope = block["envelope"].iloc[0]
            prop = {"unit_id": unit, "method": method,
                    "period": PERIOD_LABEL[period], "stat": "prop"}
            risk = {"unit_id": unit, "method": method,
                    "period": PERIOD_LABEL[period], "stat": "risk"}
            num = {"unit_id": unit, "method": method,
                   "period": PERIOD_LABEL[period], "stat": "num"}
            for cause in COUNTRY_CAUSES:
                if cause in block.index:
                    r = block.loc[cause]
                    prop[cause] = f"{round_half_up(r['fraction'], 2):.2f}"
                    risk[cause] = f"{round_half_up(r['risk'], 1):.1f}"
                    num[cause] = _num_cell(
                        r["deaths"], r["deaths_lo"], r["deaths_hi"]
                    )
                else:
                    prop[cause] = risk[cause] = num[cause] = "---"
            prop["total"] = "1"
            risk["total"] = f"{round_half_up(1000.0 * envelope / births, 1):.1f}"
            num["total"] = f"{round_half_up(envelope / 100.0, 1):.1f}"
            out.extend([prop, risk, num])
    columns = ["unit_id", "method", "period", "stat",
               *COUNTRY_CAUSES, "total"]
    return pd.DataFrame(out, columns=columns)


def comparison_table(results: pd.DataFrame, fixture_path) -> pd.DataFrame:
    """Side-by-side of run fractions against an external estimate file.

    The fixture is a CSV with columns unit_id, year, period, cause,
    fraction; every fixture row appears in the output with the run's
    fraction (NaN when the run has no matching row) and the difference.
    """
    fixture = pd.read_csv(fixture_path)
    needed = {"unit_id", "year", "period", "cause", "fraction"}
    missing = needed - set(fixture.columns)
    if missing:
        raise ValidationError(
            f"comparison fixture lacks columns: {sorted(missing)}"
        )
    fixture = fixture.rename(columns={"fraction": "comparison_fraction"})
    ours = results[["unit_id", "year", "period", "cause", "fraction"]]
    merged = fixture.merge(
        ours, on=["unit_id", "year", "period", "cause"], how="left"
    )
    merged["difference"] = merged["fraction"] - merged["comparison_fraction"]
    return merged[["unit_id", "year", "period", "cause",
                   "fraction", "comparison_fraction", "difference"]]
