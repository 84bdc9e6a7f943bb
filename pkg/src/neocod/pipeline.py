"""End-to-end estimation runs.

A run loads the six input tables, builds vital-registration cause
distributions (imputing gap years), trains the low- and high-mortality
multinomial models (covariate selection, then fitting), predicts cause
fractions for modelled countries, allocates death envelopes into
cause-specific deaths and risks, attaches uncertainty (bootstrap for
modelled units, Poisson for VR units), and aggregates to grouped tables.

Routing follows the per-country method assignment: ``vr`` countries take
their distributions straight from coded death counts, ``low_mortality_model``
countries take predictions from a model trained on the VR countries'
count data, and ``high_mortality_model`` countries (including Indian states,
which are treated as ordinary prediction units and additionally rolled up to
a national total) take predictions from a model trained on the study
observations.

Every stage is a deterministic function of the inputs, the configuration,
and the seed; the run manifest records all three.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import envelope as env
from . import ingest, modelio, uncertainty
from . import select as covsel
from .basis import REGION_COLUMNS, CovariateRange, observed_range
from .causes import INJURIES, cause_set_for
from .errors import (
    MissingDataError,
    NeocodError,
    NumericalError,
    ValidationError,
)
from .mnlogit import ModelSpec
from .mnlogit import fit as fit_model
from .mnlogit import predict as predict_model
from .util import IssueLog, sha256_file

FAMILIES = ("low_mortality", "high_mortality")

#: estimation method -> model family that serves it
METHOD_FAMILY = {
    "low_mortality_model": "low_mortality",
    "high_mortality_model": "high_mortality",
}

#: spline knot count convention per model family
KNOTS_BY_FAMILY = {"low_mortality": 4, "high_mortality": 3}

PERIOD_ORDER = ("early", "late", "overall")

#: reporting order across both cause sets
CAUSE_ORDER = ingest.OBSERVATION_CAUSE_COLUMNS

RESULT_COLUMNS = (
    "unit_id", "year", "period", "cause",
    "fraction", "fraction_lo", "fraction_hi",
    "deaths", "deaths_lo", "deaths_hi",
    "risk", "risk_lo", "risk_hi",
)

AGGREGATE_GROUPINGS = (
    "global", "mdg_region", "nmr_band", "income_group",
    "estimation_method", "india_national",
)

STAGES = (
    "ingest", "impute", "select", "fit", "predict",
    "allocate", "bootstrap", "aggregate", "report",
)


@dataclass
class RunConfig:
    """Settings for one estimation run."""

    inputs: dict[str, Path]
    out_dir: Path
    early_share: float = env.EARLY_SHARE
    cap_covariates: bool = True
    bootstrap_n: int = uncertainty.DEFAULT_REPLICATES
    seed: int = 0
    jobs: int = 1
    report_year: int | None = None
    comparison: Path | None = None

    def __post_init__(self) -> None:
        required = ("observations", "vr", "covariates", "groups",
                    "envelopes", "membership")
        missing = [k for k in required if k not in self.inputs]
        if missing:
            raise ValidationError(f"config missing input paths: {missing}")
        self.inputs = {k: Path(v) for k, v in self.inputs.items()}
        self.out_dir = Path(self.out_dir)
        if not 0.0 <= self.early_share <= 1.0:
            raise ValidationError(
                f"early_share must be in [0, 1], got {self.early_share}"
            )
        if self.bootstrap_n < 0:
            raise ValidationError("bootstrap_n cannot be negative")
        if self.jobs < 1:
            raise ValidationError("jobs must be at least 1")
        if self.comparison is not None:
            self.comparison = Path(self.comparison)

    @classmethod
    def from_yaml(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ValidationError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(data, dict) or "inputs" not in data:
            raise ValidationError(f"config {path} needs an 'inputs' mapping")
        base = path.parent

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        kwargs = {
            "inputs": {k: resolve(v) for k, v in data["inputs"].items()},
            "out_dir": resolve(data.get("output", "out")),
        }
        for key in ("early_share", "cap_covariates", "bootstrap_n", "seed",
                    "jobs", "report_year"):
            if key in data:
                kwargs[key] = data[key]
        if data.get("comparison") is not None:
            kwargs["comparison"] = resolve(data["comparison"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(f"bad config value: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "inputs": {k: str(v) for k, v in self.inputs.items()},
            "output": str(self.out_dir),
            "early_share": self.early_share,
            "cap_covariates": self.cap_covariates,
            "bootstrap_n": self.bootstrap_n,
            "seed": self.seed,
            "jobs": self.jobs,
            "report_year": self.report_year,
            "comparison": None if self.comparison is None else str(self.comparison),
        }


@dataclass
class ModelData:
    """Training rows for one (family, period) model."""

    family: str
    period: str
    frame: pd.DataFrame              # covariate columns, reset index
    cells: list
    weights: np.ndarray
    fold_labels: np.ndarray          # jackknife/bootstrap resample unit
    numeric_candidates: tuple[str, ...]
    dummy_candidates: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.frame)


def _merge_covariates(
    keys: list[tuple[str, int]],
    covariates: pd.DataFrame,
    issues: IssueLog,
    context: str,
) -> tuple[list[int], pd.DataFrame]:
    """Look up covariate rows for (unit, year) keys; drop keyless rows.

    Returns the kept positions into ``keys`` and the matched covariate rows.
    """
    indexed = covariates.set_index(["unit_id", "year"])
    kept: list[int] = []
    rows: list[pd.Series] = []
    for i, key in enumerate(keys):
        if key in indexed.index:
            kept.append(i)
            rows.append(indexed.loc[key])
        else:
            issues.add(
                "warning", "no_covariates",
                f"{context}: no covariate row for {key[0]}/{key[1]}; "
                "observation dropped from model input",
                unit_id=key[0], year=key[1],
            )
    if not rows:
        return kept, pd.DataFrame()
    return kept, pd.DataFrame(rows).reset_index(drop=True)


def _candidate_columns(
    frame: pd.DataFrame, issues: IssueLog, context: str
) -> tuple[str, ...]:
    """Numeric covariates usable as candidates: present and fully observed."""
    out: list[str] = []
    for cov in ingest.NUMERIC_COVARIATES:
        if cov not in frame.columns:
            continue
        if frame[cov].isna().any():
            issues.add(
                "warning", "incomplete_covariate",
                f"{context}: {cov} has missing values; "
                "excluded from candidate covariates",
            )
            continue
        out.append(cov)
    return tuple(out)


def build_low_model_data(
    period: str,
    vr_raw: dict[tuple[str, str], dict[int, ingest.CauseDistribution]],
    covariates: pd.DataFrame,
    issues: IssueLog,
) -> ModelData | None:
    """Low-mortality training observations: VR country-year count vectors."""
    cause_set = cause_set_for("low_mortality")
    keys: list[tuple[str, int]] = []
    dists: list[ingest.CauseDistribution] = []
    for (country, p), series in sorted(vr_raw.items()):
        if p != period:
            continue
        for year in sorted(series):
            d = series[year]
            if d.counts is None:
                continue
            keys.append((country, year))
            dists.append(d)
    if not dists:
        return None
    kept, frame = _merge_covariates(
        keys, covariates, issues, f"low-mortality {period} input"
    )
    if not kept:
        return None
    dists = [dists[i] for i in kept]
    cells = [
        [((c,), d.counts[c]) for c in cause_set.causes] for d in dists
    ]
    weights = np.array([1.0 / np.sqrt(d.total_deaths) for d in dists])
    fold_labels = np.array([d.unit_id for d in dists], dtype=object)
    frame[period] = 1.0  # period dummy; constant here, so never selected
    return ModelData(
        family="low_mortality",
        period=period,
        frame=frame,
        cells=cells,
        weights=weights,
        fold_labels=fold_labels,
        numeric_candidates=_candidate_columns(
            frame, issues, f"low-mortality {period} input"
        ),
        dummy_candidates=(*REGION_COLUMNS, period),
    )


def build_high_model_data(
    period: str,
    observations: list[ingest.ObservationRecord],
    covariates: pd.DataFrame,
    issues: IssueLog,
) -> ModelData | None:
    """High-mortality training observations: study counts for one period.

    Rows are the studies reporting this period or the full neonatal period;
    the period dummy is 1 for period-specific rows, 0 for full-period rows.
    Unreported causes are merged into their receiving categories first.
    """
    cause_set = cause_set_for("high_mortality")
    usable = [o for o in observations if o.period in (period, "overall")]
    if not usable:
        return None
    merged = [ingest.apply_missing_cause_policy(o, cause_set) for o in usable]
    keys = [(o.unit_id, o.year) for o in merged]
    kept, frame = _merge_covariates(
        keys, covariates, issues, f"high-mortality {period} input"
    )
    if not kept:
        return None
    merged = [merged[i] for i in kept]
    cells = [list(o.cells) for o in merged]
    weights = np.array([1.0 / np.sqrt(o.total_deaths) for o in merged])
    frame[period] = np.array(
        [1.0 if o.period == period else 0.0 for o in merged]
    )
    # each study observation is its own hold-out/resample unit
    fold_labels = np.arange(len(merged))
    return ModelData(
        family="high_mortality",
        period=period,
        frame=frame,
        cells=cells,
        weights=weights,
        fold_labels=fold_labels,
        numeric_candidates=_candidate_columns(
            frame, issues, f"high-mortality {period} input"
        ),
        dummy_candidates=(*REGION_COLUMNS, period),
    )


def run_selection(
    data: ModelData, issues: IssueLog
) -> dict[str, covsel.SelectionResult]:
    """Forward selection per non-baseline cause of the family."""
    cause_set = cause_set_for(data.family)
    n_knots = KNOTS_BY_FAMILY[data.family]
    out: dict[str, covsel.SelectionResult] = {}
    for target in cause_set.non_baseline:
        idx, t_counts, b_counts = covsel.extract_pairs(
            data.cells, target, cause_set.baseline
        )
        if idx.size:
            pair = covsel.PairData(
                frame=data.frame.iloc[idx].reset_index(drop=True),
                target_counts=t_counts,
                baseline_counts=b_counts,
                weights=data.weights[idx],
                fold_ids=data.fold_labels[idx],
            )
            try:
                out[target] = covsel.forward_select(
                    pair,
                    covariates=data.numeric_candidates,
                    dummies=data.dummy_candidates,
                    n_knots=n_knots,
                    target=target,
                )
                continue
            except ValidationError as exc:
                reason = str(exc)
        else:
            reason = "no usable target/baseline pairs"
        issues.add(
            "warning", "selection_skipped",
            f"{data.family}/{data.period}/{target}: {reason}; "
            "equation kept intercept-only",
        )
        out[target] = covsel.SelectionResult(
            target=target, chosen=(), null_chi2=np.nan, final_chi2=np.nan,
        )
    return out


def fit_family_model(
    data: ModelData, selections: dict[str, covsel.SelectionResult]
):
    """Fit the full multinomial with the selected per-cause terms."""
    cause_set = cause_set_for(data.family)
    terms = {
        cause: res.chosen
        for cause, res in selections.items()
        if res.chosen
    }
    spec = ModelSpec(cause_set.causes, cause_set.baseline, terms)
    ranges = {
        cov: observed_range(data.frame[cov].to_numpy(dtype=float))
        for cov in spec.covariates()
    }
    result = fit_model(spec, data.frame, data.cells, weights=data.weights)
    return result, ranges


def prediction_frame(
    period: str,
    unit_years: list[tuple[str, int]],
    covariates: pd.DataFrame,
    spec: ModelSpec,
) -> pd.DataFrame:
    """Covariate rows for modelled unit-years, period dummy set to one."""
    indexed = covariates.set_index(["unit_id", "year"])
    rows = []
    for unit, year in unit_years:
        if (unit, year) not in indexed.index:
            raise ValidationError(
                f"no covariate row for modelled unit {unit}/{year}"
            )
        rows.append(indexed.loc[(unit, year)])
    frame = pd.DataFrame(rows).reset_index(drop=True)
    frame[period] = 1.0
    frame.insert(0, "unit_id", [u for u, _ in unit_years])
    frame.insert(1, "year", [y for _, y in unit_years])
    for cov in spec.covariates():
        if cov not in frame.columns:
            raise ValidationError(f"model needs covariate {cov!r}: not in inputs")
        bad = frame[cov].isna()
        if bad.any():
            where = frame.loc[bad, ["unit_id", "year"]].iloc[0]
            raise ValidationError(
                f"missing covariate {cov!r} for modelled unit "
                f"{where['unit_id']}/{int(where['year'])}"
            )
    return frame


# ---------------------------------------------------------------------------
# bootstrap statistic


@dataclass
class _FamilyRefit:
    """Everything needed to refit one family and re-predict its fractions."""

    spec_by_period: dict[str, ModelSpec]
    frame: pd.DataFrame                    # training rows, both periods pooled
    cells: list
    weights: np.ndarray
    row_period_mask: dict[str, np.ndarray]  # which rows feed each period model
    ranges_by_period: dict[str, dict[str, CovariateRange] | None]
    predict_by_period: dict[str, pd.DataFrame]


class PipelineStatistic:
    """Bootstrap statistic: refit both families, return modelled fractions.

    The resample index space is ``[0, n_low_clusters)`` for low-mortality
    training countries (cluster bootstrap: a drawn country contributes all
    its rows) followed by high-mortality study observations. The returned
    vector stacks predicted fractions in a fixed (family, period, row,
    cause) order.
    """

    def __init__(
        self,
        low: _FamilyRefit | None,
        high: _FamilyRefit | None,
        low_cluster_rows: list[np.ndarray],
    ) -> None:
        self.low = low
        self.high = high
        self.low_cluster_rows = low_cluster_rows
        self.n_low = len(low_cluster_rows)
        self.n_high = 0 if high is None else len(high.frame)

    @property
    def n_obs(self) -> int:
        return self.n_low + self.n_high

    def strata_labels(self) -> np.ndarray:
        return np.array(
            ["low"] * self.n_low + ["high"] * self.n_high, dtype=object
        )

    def _family_fractions(
        self, refit: _FamilyRefit, rows: np.ndarray
    ) -> np.ndarray:
        parts = []
        for period in ("early", "late"):
            if period not in refit.predict_by_period:
                continue
            mask = refit.row_period_mask[period][rows]
            use = rows[mask]
            if use.size == 0:
                raise NumericalError(f"resample left no {period} training rows")
            spec = refit.spec_by_period[period]
            # non-convergence is tolerated here exactly as in the main fit;
            # genuine numerical failures abort the replicate
            res = fit_model(
                spec,
                refit.frame.iloc[use].reset_index(drop=True),
                [refit.cells[i] for i in use],
                weights=refit.weights[use],
            )
            p = predict_model(
                spec, res.coefficients, refit.predict_by_period[period],
                ranges=refit.ranges_by_period[period],
            )
            parts.append(p.ravel())
        return np.concatenate(parts) if parts else np.empty(0)

    def __call__(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        out = []
        if self.low is not None:
            clusters = idx[idx < self.n_low]
            if clusters.size == 0:
                raise NumericalError("resample left no low-mortality clusters")
            rows = np.concatenate(
                [self.low_cluster_rows[c] for c in clusters]
            )
            out.append(self._family_fractions(self.low, rows))
        if self.high is not None:
            rows = idx[idx >= self.n_low] - self.n_low
            if rows.size == 0:
                raise NumericalError("resample left no high-mortality rows")
            out.append(self._family_fractions(self.high, rows))
        return np.concatenate(out) if out else np.empty(0)


# ---------------------------------------------------------------------------
# run orchestration


class PipelineRun:
    """Executes the stages of one run and writes their artifacts."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.timings: dict[str, float] = {}
        self.notes: dict[str, object] = {}
        self._done: set[str] = set()
        config.out_dir.mkdir(parents=True, exist_ok=True)

    # -- helpers ----------------------------------------------------------
    def _out(self, name: str) -> Path:
        return self.config.out_dir / name

    def _stage(self, name: str, artifacts: list[str], work) -> None:
        if name in self._done:
            return
        t0 = time.perf_counter()
        try:
            work()
        except NeocodError as exc:
            for a in artifacts:
                self._out(a).unlink(missing_ok=True)
            raise type(exc)(f"{name} stage failed: {exc}") from exc
        self.timings[name] = time.perf_counter() - t0
        self._done.add(name)

    # -- ingest -----------------------------------------------------------
    def stage_ingest(self) -> None:
        def work():
            self.bundle = ingest.load_and_validate(self.config.inputs)
            for unit in sorted(set(self.bundle.envelopes["unit_id"])):
                if unit not in self.bundle.groups:
                    raise ValidationError(
                        f"envelope unit {unit!r} has no group assignment"
                    )
            self.issues = self.bundle.issues
            self.issues.write(self._out("issues.ndjson"))

        self._stage("ingest", ["issues.ndjson"], work)

    # -- impute -----------------------------------------------------------
    def stage_impute(self) -> None:
        self.stage_ingest()

        def work():
            raw: dict[tuple[str, str], dict[int, ingest.CauseDistribution]] = {}
            grouped: dict[tuple[str, int, str], list[ingest.VrRecord]] = {}
            for rec in self.bundle.vr_records:
                grouped.setdefault(
                    (rec.country, rec.year, rec.period), []
                ).append(rec)
            for (country, year, period), records in sorted(grouped.items()):
                try:
                    dist = ingest.build_vr_distribution(records, self.issues)
                except MissingDataError as exc:
                    self.issues.add(
                        "warning", "vr_year_empty", str(exc),
                        unit_id=country, year=year, period=period,
                    )
                    continue
                raw.setdefault((country, period), {})[year] = dist
            self.vr_raw = raw

            env_years = self.bundle.envelopes.groupby("unit_id")["year"]
            spans = {u: (int(g.min()), int(g.max())) for u, g in env_years}
            filled: dict[tuple[str, str], dict[int, ingest.CauseDistribution]] = {}
            for (country, period), series in raw.items():
                lo = min(min(series), *spans.get(country, (min(series),)))
                hi = max(max(series), *spans.get(country, (max(series),)))
                filled[(country, period)] = ingest.impute_series(
                    series, (lo, hi)
                )
            self.vr_filled = filled

            rows = []
            for (country, period), series in sorted(filled.items()):
                for year in sorted(series):
                    d = series[year]
                    for cause in d.fractions:
                        rows.append({
                            "unit_id": country, "year": year, "period": period,
                            "cause": cause, "fraction": d.fractions[cause],
                            "count": (np.nan if d.counts is None
                                      else d.counts[cause]),
                            "total_deaths": (np.nan if d.total_deaths is None
                                             else d.total_deaths),
                            "imputed": d.imputed,
                        })
            pd.DataFrame(rows).to_csv(self._out("vr_fractions.csv"), index=False)

        self._stage("impute", ["vr_fractions.csv"], work)

    # -- model building ---------------------------------------------------
    def _active_families(self) -> tuple[str, ...]:
        units = set(self.bundle.envelopes["unit_id"])
        needed = {
            METHOD_FAMILY[m]
            for u, m in self.bundle.groups.items()
            if u in units and m in METHOD_FAMILY
        }
        return tuple(f for f in FAMILIES if f in needed)

    def stage_select(self) -> None:
        self.stage_impute()

        def work():
            self.model_data: dict[tuple[str, str], ModelData] = {}
            self.selections: dict[tuple[str, str], dict] = {}
            for family in self._active_families():
                for period in ("early", "late"):
                    if family == "low_mortality":
                        data = build_low_model_data(
                            period, self.vr_raw,
                            self.bundle.covariates, self.issues,
                        )
                    else:
                        data = build_high_model_data(
                            period, self.bundle.observations,
                            self.bundle.covariates, self.issues,
                        )
                    if data is None:
                        raise ValidationError(
                            f"{family} model needed but it has no "
                            f"{period}-period training data"
                        )
                    self.model_data[(family, period)] = data
                    self.selections[(family, period)] = run_selection(
                        data, self.issues
                    )

            traces = []
            summary = []
            for (family, period), by_cause in sorted(self.selections.items()):
                for cause, res in by_cause.items():
                    t = res.to_frame()
                    t.insert(0, "family", family)
                    t.insert(1, "period", period)
                    traces.append(t)
                    summary.append({
                        "family": family, "period": period, "target": cause,
                        "selected": "; ".join(
                            f"{term.covariate}:{term.kind}"
                            for term in res.chosen
                        ),
                        "null_chi2": res.null_chi2,
                        "final_chi2": res.final_chi2,
                        "percent_reduction": res.percent_reduction,
                    })
            trace_frame = (
                pd.concat(traces, ignore_index=True) if traces
                else pd.DataFrame(columns=["family", "period", "target",
                                           "step", "action", "covariate",
                                           "form", "oos_chi2", "accepted"])
            )
            trace_frame.to_csv(self._out("selection.csv"), index=False)
            pd.DataFrame(summary).to_csv(
                self._out("selection_summary.csv"), index=False
            )

        self._stage("select", ["selection.csv", "selection_summary.csv"], work)

    def stage_fit(self) -> None:
        self.stage_select()

        def work():
            self.fits = {}
            self.ranges = {}
            for key, data in self.model_data.items():
                result, ranges = fit_family_model(data, self.selections[key])
                if not result.converged:
                    self.issues.add(
                        "warning", "fit_not_converged",
                        f"{key[0]}/{key[1]} model stopped after "
                        f"{result.n_iter} iterations "
                        f"(gradient {result.gradient_norm:.2e})",
                    )
                self.fits[key] = result
                self.ranges[key] = ranges
            modelio.dump_models(
                {k: modelio.ModelTable.from_fit(r) for k, r in self.fits.items()},
                self._out("models.json"),
            )

        self._stage("fit", ["models.json"], work)

    # -- predict ----------------------------------------------------------
    def _modelled_unit_years(self, family: str) -> list[tuple[str, int]]:
        out = []
        for _, row in self.bundle.envelopes.iterrows():
            unit = row["unit_id"]
            method = self.bundle.groups[unit]
            if METHOD_FAMILY.get(method) == family:
                out.append((unit, int(row["year"])))
        return sorted(out)

    def stage_predict(self) -> None:
        self.stage_fit()

        def work():
            self.predict_frames: dict[tuple[str, str], pd.DataFrame] = {}
            frames = []
            for family in self._active_families():
                unit_years = self._modelled_unit_years(family)
                if not unit_years:
                    continue
                for period in ("early", "late"):
                    key = (family, period)
                    fitres = self.fits[key]
                    pframe = prediction_frame(
                        period, unit_years,
                        self.bundle.covariates, fitres.spec,
                    )
                    self.predict_frames[key] = pframe
                    ranges = self.ranges[key] if self.config.cap_covariates else None
                    probs = predict_model(
                        fitres.spec, fitres.coefficients, pframe, ranges=ranges
                    )
                    causes = fitres.spec.causes
                    for i, (unit, year) in enumerate(unit_years):
                        for j, cause in enumerate(causes):
                            frames.append({
                                "unit_id": unit, "year": year,
                                "period": period, "cause": cause,
                                "fraction": probs[i, j],
                            })
            self.predictions = pd.DataFrame(
                frames,
                columns=["unit_id", "year", "period", "cause", "fraction"],
            )
            self.predictions.to_csv(self._out("predictions.csv"), index=False)

        self._stage("predict", ["predictions.csv"], work)

    # -- allocate ---------------------------------------------------------
    def _vr_fractions_for(self, unit: str, year: int, period: str):
        series = self.vr_filled.get((unit, period))
        if series is None or year not in series:
            raise ValidationError(
                f"no VR distribution for {unit}/{year}/{period}"
            )
        return series[year]

    def stage_allocate(self) -> None:
        self.stage_predict()

        def work():
            pred = self.predictions.set_index(
                ["unit_id", "year", "period", "cause"]
            )["fraction"].sort_index() if len(self.predictions) else None
            sample_col = {}  # (unit, year, period, cause) -> column in samples
            col = 0
            for family in self._active_families():
                for period in ("early", "late"):
                    key = (family, period)
                    if key not in self.predict_frames:
                        continue
                    causes = self.fits[key].spec.causes
                    pframe = self.predict_frames[key]
                    for i in range(len(pframe)):
                        unit = pframe.at[i, "unit_id"]
                        year = int(pframe.at[i, "year"])
                        for cause in causes:
                            sample_col[(unit, year, period, cause)] = col
                            col += 1
            self.n_sample_cols = col
            self.sample_col = sample_col

            rows = []
            for _, erow in self.bundle.envelopes.iterrows():
                unit = erow["unit_id"]
                year = int(erow["year"])
                births = float(erow["live_births"])
                total = float(erow["neonatal_deaths"])
                method = self.bundle.groups[unit]
                if method == "vr":
                    share = erow["observed_early_share"]
                    if pd.isna(share):
                        raise ValidationError(
                            f"VR unit {unit}/{year} has no observed_early_share"
                        )
                    share = float(share)
                    dists = {
                        p: self._vr_fractions_for(unit, year, p)
                        for p in ("early", "late")
                    }
                    fracs = {p: dict(dists[p].fractions) for p in dists}
                    counts = {
                        p: (None if dists[p].counts is None
                            else (dict(dists[p].counts), dists[p].total_deaths))
                        for p in dists
                    }
                    if None not in counts.values():
                        ce, te = counts["early"]
                        cl, tl = counts["late"]
                        counts["overall"] = (
                            {c: ce[c] + cl[c] for c in ce}, te + tl
                        )
                    else:
                        counts["overall"] = None
                else:
                    share = self.config.early_share
                    fracs = {}
                    for p in ("early", "late"):
                        sel = pred.loc[unit, year, p]
                        fracs[p] = sel.to_dict()
                    counts = {"early": None, "late": None}

                e_early, e_late = env.split_envelope(total, share)
                d_early = env.allocate_deaths(fracs["early"], e_early)
                d_late = env.allocate_deaths(fracs["late"], e_late)
                d_all = env.combine_periods(d_early, d_late)
                per_period = {
                    "early": (fracs["early"], d_early, e_early),
                    "late": (fracs["late"], d_late, e_late),
                    "overall": (
                        env.fractions_from_deaths(d_all) if total > 0
                        else {c: share * fracs["early"][c]
                              + (1 - share) * fracs["late"][c]
                              for c in d_all},
                        d_all, total,
                    ),
                }
                for period, (fr, deaths, e_part) in per_period.items():
                    for cause in (c for c in CAUSE_ORDER if c in fr):
                        rows.append({
                            "unit_id": unit, "year": year, "period": period,
                            "cause": cause,
                            "fraction": fr[cause],
                            "deaths": deaths[cause],
                            "risk": env.risk_per_1000(deaths[cause], births),
                            "method": method,
                            "live_births": births,
                            "envelope": e_part,
                            "env_early": e_early,
                            "env_late": e_late,
                            "early_share": share,
                            "vr_count": (
                                counts.get(period)[0][cause]
                                if counts.get(period) is not None else np.nan
                            ),
                            "vr_total": (
                                counts.get(period)[1]
                                if counts.get(period) is not None else np.nan
                            ),
                        })
            self.unit_rows = pd.DataFrame(rows)
            out_cols = ["unit_id", "year", "period", "cause",
                        "fraction", "deaths", "risk", "method", "live_births"]
            self.unit_rows[out_cols].to_csv(
                self._out("allocations.csv"), index=False
            )

        self._stage("allocate", ["allocations.csv"], work)

    # -- bootstrap --------------------------------------------------------
    def _build_statistic(self) -> PipelineStatistic | None:
        low = high = None
        cluster_rows: list[np.ndarray] = []
        if any(f == "low_mortality" for f in self._active_families()):
            early = self.model_data[("low_mortality", "early")]
            late = self.model_data[("low_mortality", "late")]
            frame = pd.concat(
                [early.frame, late.frame], ignore_index=True
            )
            cells = list(early.cells) + list(late.cells)
            weights = np.concatenate([early.weights, late.weights])
            labels = np.concatenate([early.fold_labels, late.fold_labels])
            n_early = len(early)
            mask = {
                "early": np.arange(len(labels)) < n_early,
                "late": np.arange(len(labels)) >= n_early,
            }
            countries = list(dict.fromkeys(labels))
            cluster_rows = [
                np.flatnonzero(labels == c) for c in countries
            ]
            low = _FamilyRefit(
                spec_by_period={
                    p: self.fits[("low_mortality", p)].spec
                    for p in ("early", "late")
                },
                frame=frame,
                cells=cells,
                weights=weights,
                row_period_mask=mask,
                ranges_by_period={
                    p: (self.ranges[("low_mortality", p)]
                        if self.config.cap_covariates else None)
                    for p in ("early", "late")
                },
                predict_by_period={
                    p: self.predict_frames[("low_mortality", p)]
                    for p in ("early", "late")
                    if ("low_mortality", p) in self.predict_frames
                },
            )
            if not low.predict_by_period:
                low = None
                cluster_rows = []
        if any(f == "high_mortality" for f in self._active_families()):
            # both period inputs come from one observation list; rebuild the
            # pooled rows so a resampled study feeds every model it belongs to
            cause_set = cause_set_for("high_mortality")
            usable = [
                o for o in self.bundle.observations
                if o.period in ("early", "late", "overall")
            ]
            merged = [
                ingest.apply_missing_cause_policy(o, cause_set) for o in usable
            ]
            keys = [(o.unit_id, o.year) for o in merged]
            kept, frame = _merge_covariates(
                keys, self.bundle.covariates, IssueLog(), "bootstrap input"
            )
            merged = [merged[i] for i in kept]
            periods = np.array([o.period for o in merged], dtype=object)
            for p in ("early", "late"):
                frame[p] = (periods == p).astype(float)
            high = _FamilyRefit(
                spec_by_period={
                    p: self.fits[("high_mortality", p)].spec
                    for p in ("early", "late")
                },
                frame=frame,
                cells=[list(o.cells) for o in merged],
                weights=np.array(
                    [1.0 / np.sqrt(o.total_deaths) for o in merged]
                ),
                row_period_mask={
                    p: (periods == p) | (periods == "overall")
                    for p in ("early", "late")
                },
                ranges_by_period={
                    p: (self.ranges[("high_mortality", p)]
                        if self.config.cap_covariates else None)
                    for p in ("early", "late")
                },
                predict_by_period={
                    p: self.predict_frames[("high_mortality", p)]
                    for p in ("early", "late")
                    if ("high_mortality", p) in self.predict_frames
                },
            )
            if not high.predict_by_period:
                high = None
        if low is None and high is None:
            return None
        return PipelineStatistic(low, high, cluster_rows)

    def stage_bootstrap(self) -> None:
        self.stage_allocate()

        def work():
            self.samples = None
            self.bootstrap_info = {"replicates": 0, "failures": 0,
                                   "unstable": False}
            statistic = (
                self._build_statistic() if self.config.bootstrap_n > 0 else None
            )
            if statistic is not None and statistic.n_obs > 0:
                result = uncertainty.bootstrap(
                    statistic,
                    n_obs=statistic.n_obs,
                    strata_labels=statistic.strata_labels(),
                    n_replicates=self.config.bootstrap_n,
                    seed=self.config.seed,
                    jobs=self.config.jobs,
                )
                self.samples = result.samples
                self.bootstrap_info = {
                    "replicates": result.n_replicates,
                    "failures": result.n_failures,
                    "unstable": result.unstable,
                }
                if result.unstable:
                    self.issues.add(
                        "warning", "bootstrap_unstable",
                        f"{result.n_failures} of {result.n_replicates} "
                        "bootstrap replicates failed",
                    )
            self.results = self._attach_intervals()
            self.results.to_csv(
                self._out("results.csv"), index=False,
                columns=list(RESULT_COLUMNS),
            )

        self._stage("bootstrap", ["results.csv"], work)

    def _frac_samples(self, row) -> np.ndarray | None:
        """Replicate fraction values for one unit row, or None if fixed."""
        if self.samples is None or row["method"] == "vr":
            return None
        key_e = (row["unit_id"], row["year"], "early", row["cause"])
        key_l = (row["unit_id"], row["year"], "late", row["cause"])
        if row["period"] == "early":
            return self.samples[:, self.sample_col[key_e]]
        if row["period"] == "late":
            return self.samples[:, self.sample_col[key_l]]
        s_e = self.samples[:, self.sample_col[key_e]]
        s_l = self.samples[:, self.sample_col[key_l]]
        total = row["env_early"] + row["env_late"]
        if total > 0:
            return (s_e * row["env_early"] + s_l * row["env_late"]) / total
        share = row["early_share"]
        return share * s_e + (1.0 - share) * s_l

    def _attach_intervals(self) -> pd.DataFrame:
        rows = self.unit_rows.copy()
        lo = np.full(len(rows), np.nan)
        hi = np.full(len(rows), np.nan)
        flagged: set[tuple] = set()
        for i, row in rows.iterrows():
            if row["method"] == "vr":
                if np.isnan(row["vr_total"]):
                    key = (row["unit_id"], row["year"], row["period"])
                    if key not in flagged:
                        flagged.add(key)
                        self.issues.add(
                            "warning", "no_interval",
                            "no Poisson interval for imputed VR year "
                            f"{key[0]}/{key[1]}/{key[2]}",
                        )
                    continue
                est = uncertainty.poisson_vr_interval(
                    row["vr_count"], row["vr_total"]
                )
                lo[i], hi[i] = est.lo, est.hi
            else:
                s = self._frac_samples(row)
                if s is None:
                    continue
                lo[i], hi[i] = uncertainty.percentile_interval(s)
        rows["fraction_lo"] = lo
        rows["fraction_hi"] = hi
        rows["deaths_lo"] = lo * rows["envelope"]
        rows["deaths_hi"] = hi * rows["envelope"]
        rows["risk_lo"] = 1000.0 * rows["deaths_lo"] / rows["live_births"]
        rows["risk_hi"] = 1000.0 * rows["deaths_hi"] / rows["live_births"]
        order = {p: i for i, p in enumerate(PERIOD_ORDER)}
        cause_rank = {c: i for i, c in enumerate(CAUSE_ORDER)}
        rows = rows.sort_values(
            ["unit_id", "year", "period", "cause"],
            key=lambda s: (s.map(order) if s.name == "period"
                           else s.map(cause_rank) if s.name == "cause" else s),
        ).reset_index(drop=True)
        return rows

    # -- aggregate --------------------------------------------------------
    def _group_assignments(self) -> pd.DataFrame:
        """Unit -> group value per grouping, one row per envelope unit-year."""
        mem = self.bundle.membership.set_index("unit_id")
        missing = [
            u for u in sorted(set(self.bundle.envelopes["unit_id"]))
            if u not in mem.index
        ]
        if missing:
            raise ValidationError(f"units missing from membership: {missing}")
        rows = []
        for _, erow in self.bundle.envelopes.iterrows():
            unit = erow["unit_id"]
            year = int(erow["year"])
            nmr = 1000.0 * float(erow["neonatal_deaths"]) / float(
                erow["live_births"]
            )
            m = mem.loc[unit]
            rows.append({
                "unit_id": unit, "year": year,
                "global": "all",
                "mdg_region": m["mdg_region"],
                "income_group": m["income_group"],
                "nmr_band": env.nmr_band(nmr),
                "estimation_method": self.bundle.groups[unit],
                "india_national": m["india_state_of"] or np.nan,
            })
        return pd.DataFrame(rows)

    def stage_aggregate(self) -> None:
        self.stage_bootstrap()

        def work():
            groups = self._group_assignments()
            work_rows = self.results.merge(
                groups, on=["unit_id", "year"], how="left"
            )
            # injuries fold into other in all grouped tables
            work_rows["agg_cause"] = work_rows["cause"].where(
                work_rows["cause"] != INJURIES, "other"
            )
            out = []
            for grouping in AGGREGATE_GROUPINGS:
                sub = work_rows[work_rows[grouping].notna()]
                if sub.empty:
                    continue
                for (gval, year, period), block in sub.groupby(
                    [grouping, "year", "period"], sort=True
                ):
                    births = (
                        block.drop_duplicates("unit_id")["live_births"].sum()
                    )
                    env_total = (
                        block.drop_duplicates("unit_id")["envelope"].sum()
                    )
                    for cause, cblock in block.groupby("agg_cause", sort=False):
                        deaths = cblock["deaths"].sum()
                        samples = None
                        const = 0.0
                        for _, row in cblock.iterrows():
                            s = self._frac_samples(row)
                            if s is None:
                                const += row["deaths"]
                            else:
                                part = s * row["envelope"]
                                samples = part if samples is None \
                                    else samples + part
                        if samples is not None:
                            dsamp = samples + const
                            d_lo, d_hi = uncertainty.percentile_interval(dsamp)
                        else:
                            d_lo = d_hi = np.nan
                        frac = deaths / env_total if env_total > 0 else np.nan
                        out.append({
                            "grouping": grouping, "group": gval,
                            "year": year, "period": period, "cause": cause,
                            "deaths": deaths,
                            "deaths_lo": d_lo, "deaths_hi": d_hi,
                            "fraction": frac,
                            "fraction_lo": (d_lo / env_total
                                            if env_total > 0 else np.nan),
                            "fraction_hi": (d_hi / env_total
                                            if env_total > 0 else np.nan),
                            "risk": 1000.0 * deaths / births,
                            "risk_lo": 1000.0 * d_lo / births,
                            "risk_hi": 1000.0 * d_hi / births,
                            "live_births": births,
                            "envelope": env_total,
                        })
            cause_rank = {c: i for i, c in enumerate(CAUSE_ORDER)}
            period_rank = {p: i for i, p in enumerate(PERIOD_ORDER)}
            self.aggregates = pd.DataFrame(out).sort_values(
                ["grouping", "group", "year", "period", "cause"],
                key=lambda s: (
                    s.map(period_rank) if s.name == "period"
                    else s.map(cause_rank) if s.name == "cause" else s
                ),
            ).reset_index(drop=True)
            self.aggregates.to_csv(self._out("aggregates.csv"), index=False)

        self._stage("aggregate", ["aggregates.csv"], work)

    # -- report -----------------------------------------------------------
    def stage_report(self) -> None:
        self.stage_aggregate()

        def work():
            from . import report

            year = self.config.report_year
            if year is None:
                year = int(self.bundle.envelopes["year"].max())
            self.notes["report_year"] = year
            report.table1(self.aggregates, year).to_csv(
                self._out("table1.csv"), index=False
            )
            report.nmr_band_table(self.results, self.aggregates, year).to_csv(
                self._out("nmr_bands.csv"), index=False
            )
            report.country_table(self.results, year).to_csv(
                self._out("country_table.csv"), index=False
            )
            if self.config.comparison is not None:
                report.comparison_table(
                    self.results, self.config.comparison
                ).to_csv(self._out("comparison.csv"), index=False)

        artifacts = ["table1.csv", "nmr_bands.csv", "country_table.csv",
                     "comparison.csv"]
        self._stage("report", artifacts, work)

    # -- full run ---------------------------------------------------------
    def run(self) -> Path:
        self.stage_report()
        # final write picks up issues recorded after the ingest stage
        self.issues.write(self._out("issues.ndjson"))
        manifest = {
            "config": self.config.to_dict(),
            "inputs": {
                k: {"path": str(v), "sha256": sha256_file(v)}
                for k, v in self.config.inputs.items()
            },
            "seed": self.config.seed,
            "stage_seconds": {
                k: round(v, 4) for k, v in self.timings.items()
            },
            "bootstrap": self.bootstrap_info,
            "issues": {
                "errors": self.issues.count("error"),
                "warnings": self.issues.count("warning"),
            },
            "notes": self.notes,
        }
        path = self._out("manifest.json")
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def run(config: RunConfig) -> Path:
    """Execute every stage and return the manifest path."""
    return PipelineRun(config).run()
