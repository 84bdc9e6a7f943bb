"""Input loading, validation, and normalisation.

Five CSV inputs feed the pipeline: study observations, ICD-coded
vital-registration counts, a long-format covariate panel, country-to-method
group assignments, and death/birth envelopes (plus an aggregation membership
table). Loaders return typed tables and record every dropped or suspicious
row in an :class:`~neocod.util.IssueLog`; schema violations are hard errors.

This module also owns the three data-shaping rules applied before modelling:
building proportional cause distributions from coded VR counts, merging
unreported causes into their receiving categories, and filling gap years in
VR distribution series.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import icd
from .basis import REGIONS
from .causes import (
    CauseSet,
    CONGENITAL,
    DIARRHOEA,
    INTRAPARTUM,
    OTHER,
    PNEUMONIA,
    PRETERM,
    SEPSIS,
    TETANUS,
    VR,
)
from .errors import MissingDataError, ValidationError
from .util import IssueLog

PERIODS = ("early", "late", "overall")
VR_PERIODS = ("early", "late")
METHODS = ("vr", "low_mortality_model", "high_mortality_model")

#: union of cause columns accepted in observations.csv
OBSERVATION_CAUSE_COLUMNS = (
    "preterm", "intrapartum", "congenital", "sepsis", "pneumonia",
    "diarrhoea", "tetanus", "injuries", "other",
)

NUMERIC_COVARIATES = (
    "NMR", "IMR", "U5MR", "LBW", "GNI", "GFR", "GINI", "ANC", "DPT",
    "femlit", "BCG", "PAB", "SBA",
)

#: studies below this death count are flagged (not dropped)
MIN_STUDY_DEATHS = 20

_COUNT_TOL = 1e-6

#: receiving category for each cause that a study may fail to report
MISSING_CAUSE_RECEIVERS = {
    PRETERM: OTHER,
    CONGENITAL: OTHER,
    PNEUMONIA: SEPSIS,
    DIARRHOEA: SEPSIS,
    TETANUS: SEPSIS,
    SEPSIS: OTHER,
}

_INFECTIONS = (PNEUMONIA, DIARRHOEA, TETANUS)


@dataclass(frozen=True)
class CauseDistribution:
    """Fractions over a fixed cause set for one (unit, year, period)."""

    unit_id: str
    year: int
    period: str
    fractions: dict[str, float]
    counts: dict[str, float] | None = None   # raw VR counts when available
    total_deaths: float | None = None
    imputed: bool = False

    def __post_init__(self) -> None:
        vals = np.array(list(self.fractions.values()), dtype=float)
        if np.any(vals < 0) or np.any(vals > 1):
            raise ValidationError(
                f"fractions outside [0,1] for {self.unit_id}/{self.year}"
            )
        if abs(vals.sum() - 1.0) > 1e-12:
            raise ValidationError(
                f"fractions sum to {vals.sum():.15f} for {self.unit_id}/{self.year}"
            )


@dataclass
class ObservationRecord:
    """One study or country-year-period observation with grouped counts."""

    unit_id: str
    year: int
    period: str
    cells: tuple[tuple[tuple[str, ...], float], ...]
    total_deaths: float
    covariates: dict[str, float] = field(default_factory=dict)
    source: str = ""

    def reported_causes(self) -> tuple[str, ...]:
        out: list[str] = []
        for members, _ in self.cells:
            out.extend(members)
        return tuple(out)

    def validate(self, cause_set: CauseSet, issues: IssueLog | None = None) -> None:
        seen = self.reported_causes()
        if len(seen) != len(set(seen)):
            raise ValidationError(f"{self.unit_id}/{self.year}: cause in two cells")
        if set(seen) != set(cause_set.causes):
            raise ValidationError(
                f"{self.unit_id}/{self.year}: cells do not partition the cause set"
            )
        total = sum(count for _, count in self.cells)
        if abs(total - self.total_deaths) > _COUNT_TOL:
            raise ValidationError(
                f"{self.unit_id}/{self.year}: cell counts sum to {total}, "
                f"declared total is {self.total_deaths}"
            )
        if issues is not None and self.total_deaths < MIN_STUDY_DEATHS:
            issues.add(
                "warning", "small_study",
                f"observation has fewer than {MIN_STUDY_DEATHS} deaths",
                unit_id=self.unit_id, year=self.year, period=self.period,
                total_deaths=self.total_deaths,
            )


@dataclass(frozen=True)
class VrRecord:
    country: str
    year: int
    period: str
    icd_revision: int
    code: str
    deaths: float

    def __post_init__(self) -> None:
        if self.period not in VR_PERIODS:
            raise ValidationError(
                f"VR period must be early or late, got {self.period!r}"
            )
        if self.icd_revision not in (9, 10):
            raise ValidationError(f"bad ICD revision {self.icd_revision}")
        if self.deaths < 0:
            raise ValidationError(f"negative deaths for code {self.code!r}")


@dataclass(frozen=True)
class GroupAssignment:
    country: str
    method: str

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"unknown estimation method {self.method!r}")


# ---------------------------------------------------------------------------
# VR distributions


def build_vr_distribution(
    records: list[VrRecord],
    issues: IssueLog | None = None,
) -> CauseDistribution:
    """Proportional cause distribution from one country-year-period's codes.

    Codes are mapped through the ICD range table; excluded codes are dropped
    before the division. Ambiguous codes use the mapping's row-order
    resolution and are reported, never silently accepted. Unmapped codes are
    hard errors; zero mapped deaths raises :class:`MissingDataError` so the
    year can be treated as an imputation target.
    """
    if not records:
        raise ValidationError("no VR records given")
    keys = {(r.country, r.year, r.period) for r in records}
    if len(keys) != 1:
        raise ValidationError(f"records span multiple country-year-periods: {keys}")
    country, year, period = next(iter(keys))

    counts = {c: 0.0 for c in VR.causes}
    total = 0.0
    for rec in records:
        mapping = icd.classify_code(rec.code, rec.icd_revision)
        if mapping.conflict and issues is not None:
            issues.add(
                "warning", "icd_conflict",
                f"code {rec.code} matches ranges for multiple causes; "
                f"resolved to {mapping.label} by row order",
                country=country, year=year, code=rec.code,
                candidates=sorted({m.target for m in mapping.matches}),
            )
        if mapping.label == icd.EXCLUDED:
            continue
        if mapping.label == icd.UNMAPPED:
            raise ValidationError(
                f"unmapped ICD-{rec.icd_revision} code {rec.code!r} "
                f"({country}/{year}/{period})"
            )
        counts[mapping.label] += rec.deaths
        total += rec.deaths
    if total <= 0:
        raise MissingDataError(
            f"no mapped deaths for {country}/{year}/{period}"
        )
    return CauseDistribution(
        unit_id=country,
        year=year,
        period=period,
        fractions={c: counts[c] / total for c in VR.causes},
        counts=counts,
        total_deaths=total,
    )


# ---------------------------------------------------------------------------
# missing-cause policy


def apply_missing_cause_policy(
    obs: ObservationRecord, cause_set: CauseSet
) -> ObservationRecord:
    """Merge unreported causes into their receiving categories.

    Each missing cause joins the cell of its receiver (pneumonia, diarrhoea,
    and tetanus fall into sepsis; preterm and congenital into other; sepsis
    itself, which can only be missing when all infectious causes are, into
    other). Receivers that are themselves missing resolve transitively.
    Counts are untouched; only cell membership changes.
    """
    if cause_set.model_family != "high_mortality":
        raise ValidationError(
            "missing-cause policy is defined for the high-mortality cause set"
        )
    reported = set(obs.reported_causes())
    unknown = reported - set(cause_set.causes)
    if unknown:
        raise ValidationError(
            f"{obs.unit_id}/{obs.year}: unknown causes {sorted(unknown)}"
        )
    missing = [c for c in cause_set.causes if c not in reported]
    if not missing:
        return obs
    for must in (INTRAPARTUM, OTHER):
        if must in missing:
            raise ValidationError(
                f"{obs.unit_id}/{obs.year}: required cause {must!r} not reported"
            )
    if SEPSIS in missing and any(c not in missing for c in _INFECTIONS):
        raise ValidationError(
            f"{obs.unit_id}/{obs.year}: sepsis missing while some infectious "
            "causes are reported"
        )

    def receiver_of(cause: str) -> str:
        r = MISSING_CAUSE_RECEIVERS[cause]
        while r in missing:
            r = MISSING_CAUSE_RECEIVERS[r]
        return r

    extra: dict[str, list[str]] = {}
    for cause in missing:
        extra.setdefault(receiver_of(cause), []).append(cause)

    new_cells = []
    for members, count in obs.cells:
        added: list[str] = []
        for m in members:
            added.extend(extra.get(m, ()))
        new_cells.append((tuple(members) + tuple(added), count))
    return replace(obs, cells=tuple(new_cells))


# ---------------------------------------------------------------------------
# imputation


def impute_series(
    series: dict[int, CauseDistribution],
    year_range: tuple[int, int],
) -> dict[int, CauseDistribution]:
    """Fill gap years in a VR distribution series.

    Interior gaps use per-cause linear interpolation between the bracketing
    observed years, renormalised back onto the simplex; years outside the
    observed span copy the nearest observed year. Observed entries pass
    through unchanged; filled entries carry ``imputed=True`` (and no raw
    counts) so model-input extraction can skip them.
    """
    if not series:
        raise ValidationError("cannot impute an empty series")
    start, end = year_range
    if start > end:
        raise ValidationError(f"bad year range {year_range}")
    obs_years = sorted(series)
    causes = tuple(series[obs_years[0]].fractions)
    template = series[obs_years[0]]
    for y in obs_years:
        if tuple(series[y].fractions) != causes:
            raise ValidationError("inconsistent cause sets across years")

    values = np.array(
        [[series[y].fractions[c] for c in causes] for y in obs_years]
    )
    out: dict[int, CauseDistribution] = {}
    for year in range(start, end + 1):
        if year in series:
            out[year] = series[year]
            continue
        if year < obs_years[0]:
            fr = dict(series[obs_years[0]].fractions)
        elif year > obs_years[-1]:
            fr = dict(series[obs_years[-1]].fractions)
        else:
            interp = np.array([
                np.interp(year, obs_years, values[:, j])
                for j in range(len(causes))
            ])
            total = interp.sum()
            if total <= 0:
                raise ValidationError(f"interpolation collapsed to zero in {year}")
            interp = interp / total
            # tiny renormalisation drift keeps the simplex invariant exact
            interp[np.argmax(interp)] += 1.0 - interp.sum()
            fr = dict(zip(causes, (float(v) for v in interp)))
        out[year] = CauseDistribution(
            unit_id=template.unit_id,
            year=year,
            period=template.period,
            fractions=fr,
            imputed=True,
        )
    return out


# ---------------------------------------------------------------------------
# CSV loaders


def _read_csv(path: str | Path, required: tuple[str, ...]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file not found: {path}")
    frame = pd.read_csv(path, comment="#", dtype=str, keep_default_na=False)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path.name}: missing columns {missing}")
    return frame


def _numeric(frame: pd.DataFrame, column: str, path_name: str) -> pd.Series:
    raw = frame[column].replace("", np.nan)
    out = pd.to_numeric(raw, errors="coerce")
    bad = raw.notna() & out.isna()
    if bad.any():
        line = int(frame.index[bad][0]) + 2  # header + 1-based
        raise ValidationError(
            f"{path_name}: non-numeric {column!r} at line {line}"
        )
    return out


def load_observations(path: str | Path, issues: IssueLog) -> list[ObservationRecord]:
    """Parse observations.csv into records with singleton cells.

    Blank cause columns mean "not reported"; the missing-cause policy later
    decides where those deaths live. Reported counts must reconcile with the
    declared total.
    """
    name = Path(path).name
    frame = _read_csv(path, ("unit_id", "year", "period", "total_deaths"))
    cause_cols = [c for c in OBSERVATION_CAUSE_COLUMNS if c in frame.columns]
    if not cause_cols:
        raise ValidationError(f"{name}: no cause count columns present")
    year = _numeric(frame, "year", name)
    total = _numeric(frame, "total_deaths", name)
    counts = {c: _numeric(frame, c, name) for c in cause_cols}

    records: list[ObservationRecord] = []
    seen_keys: set[tuple] = set()
    for i in range(len(frame)):
        line = i + 2
        unit = frame.at[i, "unit_id"].strip()
        period = frame.at[i, "period"].strip()
        source = frame.at[i, "source"].strip() if "source" in frame.columns else ""
        if not unit:
            raise ValidationError(f"{name}: empty unit_id at line {line}")
        if period not in PERIODS:
            raise ValidationError(f"{name}: bad period {period!r} at line {line}")
        if pd.isna(year.iat[i]) or pd.isna(total.iat[i]):
            raise ValidationError(f"{name}: missing year/total at line {line}")
        key = (unit, int(year.iat[i]), period, source)
        if key in seen_keys:
            raise ValidationError(f"{name}: duplicate observation key {key}")
        seen_keys.add(key)

        cells = []
        reported_sum = 0.0
        for cause in cause_cols:
            v = counts[cause].iat[i]
            if pd.isna(v):
                continue
            if v < 0:
                raise ValidationError(
                    f"{name}: negative count for {cause} at line {line}"
                )
            cells.append(((cause,), float(v)))
            reported_sum += float(v)
        if abs(reported_sum - float(total.iat[i])) > _COUNT_TOL:
            raise ValidationError(
                f"{name}: cause counts sum to {reported_sum}, total_deaths is "
                f"{float(total.iat[i])} at line {line}"
            )
        rec = ObservationRecord(
            unit_id=unit,
            year=int(year.iat[i]),
            period=period,
            cells=tuple(cells),
            total_deaths=float(total.iat[i]),
            source=source,
        )
        if rec.total_deaths < MIN_STUDY_DEATHS:
            issues.add(
                "warning", "small_study",
                f"observation has fewer than {MIN_STUDY_DEATHS} deaths",
                file=name, line=line, unit_id=unit,
            )
        records.append(rec)
    return records


def load_vr(path: str | Path, issues: IssueLog) -> list[VrRecord]:
    name = Path(path).name
    frame = _read_csv(
        path, ("country", "year", "period", "icd_revision", "code", "deaths")
    )
    year = _numeric(frame, "year", name)
    revision = _numeric(frame, "icd_revision", name)
    deaths = _numeric(frame, "deaths", name)
    records: list[VrRecord] = []
    seen: set[tuple] = set()
    for i in range(len(frame)):
        line = i + 2
        try:
            records.append(VrRecord(
                country=frame.at[i, "country"].strip(),
                year=int(year.iat[i]),
                period=frame.at[i, "period"].strip(),
                icd_revision=int(revision.iat[i]),
                code=frame.at[i, "code"].strip(),
                deaths=float(deaths.iat[i]),
            ))
        except (ValidationError, ValueError) as exc:
            raise ValidationError(f"{name}: line {line}: {exc}") from None
        rec = records[-1]
        key = (rec.country, rec.year, rec.period, rec.code)
        if key in seen:
            raise ValidationError(f"{name}: duplicate VR row {key} at line {line}")
        seen.add(key)
    return records


def load_covariates(path: str | Path, issues: IssueLog) -> pd.DataFrame:
    """Long covariate panel to a wide frame keyed by (unit_id, year).

    Numeric covariates keep their short indicator names (NMR, femlit, ...);
    the ``region`` covariate is expanded into 0/1 ``reg_*`` columns. Rows
    with unusable values are dropped and reported.
    """
    name = Path(path).name
    frame = _read_csv(path, ("unit_id", "year", "covariate", "value"))
    year = _numeric(frame, "year", name)

    rows: list[dict] = []
    seen: set[tuple] = set()
    for i in range(len(frame)):
        line = i + 2
        unit = frame.at[i, "unit_id"].strip()
        cov = frame.at[i, "covariate"].strip()
        raw = frame.at[i, "value"].strip()
        if pd.isna(year.iat[i]) or not unit:
            raise ValidationError(f"{name}: bad key at line {line}")
        y = int(year.iat[i])
        if cov not in NUMERIC_COVARIATES and cov != "region":
            raise ValidationError(
                f"{name}: unknown covariate {cov!r} at line {line}"
            )
        key = (unit, y, cov)
        if key in seen:
            raise ValidationError(f"{name}: duplicate covariate row {key}")
        seen.add(key)
        if cov == "region":
            if raw not in REGIONS:
                issues.add("warning", "bad_region",
                           f"unknown region {raw!r}; row dropped",
                           file=name, line=line, unit_id=unit, year=y)
                continue
            rows.append({"unit_id": unit, "year": y, "covariate": cov,
                         "value": raw})
            continue
        try:
            value = float(raw)
        except ValueError:
            issues.add("warning", "non_numeric_covariate",
                       f"value {raw!r} for {cov} is not numeric; row dropped",
                       file=name, line=line, unit_id=unit, year=y)
            continue
        rows.append({"unit_id": unit, "year": y, "covariate": cov,
                     "value": value})

    if not rows:
        raise ValidationError(f"{name}: no usable covariate rows")
    long = pd.DataFrame(rows)
    wide = (
        long[long["covariate"] != "region"]
        .pivot(index=["unit_id", "year"], columns="covariate", values="value")
        .reset_index()
    )
    wide.columns.name = None
    region = long[long["covariate"] == "region"]
    if not region.empty:
        region = region.rename(columns={"value": "region"})[
            ["unit_id", "year", "region"]
        ]
        wide = wide.merge(region, on=["unit_id", "year"], how="left")
    else:
        wide["region"] = np.nan
    for r in REGIONS:
        wide[f"reg_{r}"] = (wide["region"] == r).astype(float)
    for c in NUMERIC_COVARIATES:
        if c not in wide.columns:
            wide[c] = np.nan
        wide[c] = wide[c].astype(float)
    return wide


def load_groups(path: str | Path) -> dict[str, str]:
    name = Path(path).name
    frame = _read_csv(path, ("country", "method"))
    groups: dict[str, str] = {}
    for i in range(len(frame)):
        line = i + 2
        country = frame.at[i, "country"].strip()
        if country in groups:
            raise ValidationError(
                f"{name}: country {country!r} assigned twice (line {line})"
            )
        groups[country] = GroupAssignment(
            country, frame.at[i, "method"].strip()
        ).method
    return groups


def _declared_units(path: Path) -> float:
    """Envelope scale from an optional '# units: thousands' header line."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    if first.startswith("#"):
        decl = first.lstrip("#").strip().lower()
        if decl.startswith("units:"):
            unit = decl.split(":", 1)[1].strip()
            if unit == "thousands":
                return 1000.0
            if unit == "counts":
                return 1.0
            raise ValidationError(f"{path.name}: unknown units {unit!r}")
    return 1.0


def load_envelopes(path: str | Path) -> pd.DataFrame:
    name = Path(path).name
    scale = _declared_units(Path(path))
    frame = _read_csv(path, ("unit_id", "year", "neonatal_deaths", "live_births"))
    out = pd.DataFrame({
        "unit_id": frame["unit_id"].str.strip(),
        "year": _numeric(frame, "year", name).astype(int),
        "neonatal_deaths": _numeric(frame, "neonatal_deaths", name) * scale,
        "live_births": _numeric(frame, "live_births", name) * scale,
    })
    if "observed_early_share" in frame.columns:
        out["observed_early_share"] = _numeric(frame, "observed_early_share", name)
    else:
        out["observed_early_share"] = np.nan
    if (out["neonatal_deaths"] < 0).any():
        raise ValidationError(f"{name}: negative neonatal deaths")
    if (out["live_births"] <= 0).any():
        raise ValidationError(f"{name}: live births must be positive")
    share = out["observed_early_share"]
    if ((share < 0) | (share > 1)).any():
        raise ValidationError(f"{name}: observed_early_share outside [0,1]")
    if out.duplicated(["unit_id", "year"]).any():
        raise ValidationError(f"{name}: duplicate (unit_id, year)")
    return out


def load_membership(path: str | Path) -> pd.DataFrame:
    name = Path(path).name
    frame = _read_csv(path, ("unit_id", "mdg_region", "income_group"))
    out = frame.copy()
    for col in ("unit_id", "mdg_region", "income_group"):
        out[col] = out[col].str.strip()
    if "india_state_of" not in out.columns:
        out["india_state_of"] = ""
    out["india_state_of"] = out["india_state_of"].str.strip()
    if out.duplicated(["unit_id"]).any():
        raise ValidationError(f"{name}: duplicate unit_id")
    return out


@dataclass
class InputBundle:
    observations: list[ObservationRecord]
    vr_records: list[VrRecord]
    covariates: pd.DataFrame
    groups: dict[str, str]
    envelopes: pd.DataFrame
    membership: pd.DataFrame
    issues: IssueLog


def load_and_validate(paths: dict[str, str | Path]) -> InputBundle:
    """Load every input file; hard-fail on schema problems, log the rest."""
    issues = IssueLog()
    required = ("observations", "vr", "covariates", "groups", "envelopes",
                "membership")
    missing = [k for k in required if k not in paths]
    if missing:
        raise ValidationError(f"missing input paths: {missing}")
    bundle = InputBundle(
        observations=load_observations(paths["observations"], issues),
        vr_records=load_vr(paths["vr"], issues),
        covariates=load_covariates(paths["covariates"], issues),
        groups=load_groups(paths["groups"]),
        envelopes=load_envelopes(paths["envelopes"]),
        membership=load_membership(paths["membership"]),
        issues=issues,
    )
    known_units = set(bundle.groups)
    for rec in bundle.vr_records:
        if rec.country not in known_units:
            raise ValidationError(
                f"VR country {rec.country!r} has no group assignment"
            )
    return bundle
