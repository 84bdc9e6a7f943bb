"""Reading and writing model files: equation specs plus coefficients as JSON.

A model document holds one table per (family, period), e.g.
``("low_mortality", "early")``. Each table lists its cause set, the baseline
cause, and one equation per non-baseline cause. An equation is an ordered
list of terms (covariate, kind, optional knots) together with a flat
column-name -> value mapping that includes the intercept ``"const"``.

Two degraded states are representable because the packaged transcription of
previously published coefficients needs them: a spline term may carry
``knots: null`` when the original knot locations were never released, and an
individual coefficient may be ``null`` when its value is unavailable. Such
equations load and serialize fine but refuse evaluation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cache
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .basis import TERM_KINDS, Term
from .errors import MissingDataError, ValidationError
from .mnlogit import FitResult, ModelSpec

PERIOD_KEYS = ("early", "late")

PUBLISHED_RESOURCE = "published_coefficients.json"


@dataclass(frozen=True)
class TermSpec:
    """A term as stored on disk; spline knots may be unknown (None)."""

    covariate: str
    kind: str = "linear"
    knots: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in TERM_KINDS:
            raise ValidationError(f"unknown term kind: {self.kind!r}")
        if self.kind != "spline" and self.knots is not None:
            raise ValidationError(f"{self.kind} term must not carry knots")
        if self.knots is not None:
            knots = tuple(float(k) for k in self.knots)
            if len(knots) < 3 or any(b - a <= 0 for a, b in zip(knots, knots[1:])):
                raise ValidationError(f"bad knot vector {knots}")
            object.__setattr__(self, "knots", knots)

    @property
    def knots_known(self) -> bool:
        return self.kind != "spline" or self.knots is not None

    def column_names(self, n_spline_columns: int | None = None) -> tuple[str, ...]:
        """Expanded design column names; spline width comes from the knots
        when known, else from ``n_spline_columns``."""
        if self.kind == "linear":
            return (self.covariate,)
        if self.kind == "quadratic":
            return (self.covariate, f"{self.covariate}_Q")
        if self.knots is not None:
            n = len(self.knots) - 1
        elif n_spline_columns is not None:
            n = n_spline_columns
        else:
            raise ValidationError(
                f"spline width for {self.covariate!r} unknown without knots"
            )
        return tuple(f"{self.covariate}_S{i}" for i in range(1, n + 1))

    def to_term(self) -> Term:
        if not self.knots_known:
            raise MissingDataError(
                f"spline term {self.covariate!r} has no knot locations; "
                "the equation cannot be evaluated"
            )
        return Term(self.covariate, self.kind, self.knots)

    @classmethod
    def from_term(cls, term: Term) -> TermSpec:
        return cls(term.covariate, term.kind, term.knots)


def _spline_width_from_names(covariate: str, names) -> int:
    """Count contiguous cov_S1..cov_Sn keys present in ``names``."""
    n = 0
    while f"{covariate}_S{n + 1}" in names:
        n += 1
    if n < 2:
        raise ValidationError(
            f"spline term {covariate!r} needs at least columns "
            f"{covariate}_S1 and {covariate}_S2 in its coefficients"
        )
    return n


@dataclass(frozen=True)
class EquationSpec:
    """One log-cause-ratio equation: ordered terms and named coefficients."""

    terms: tuple[TermSpec, ...] = ()
    coefficients: dict[str, float | None] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))
        seen = set()
        for t in self.terms:
            if t.covariate in seen:
                raise ValidationError(
                    f"covariate {t.covariate!r} appears in two terms"
                )
            seen.add(t.covariate)
        expected = list(self.expanded_names())
        got = list(self.coefficients)
        if sorted(got) != sorted(expected):
            raise ValidationError(
                f"coefficient names {got} do not match term expansion {expected}"
            )
        ordered = {}
        for name in expected:
            v = self.coefficients[name]
            ordered[name] = None if v is None else float(v)
        object.__setattr__(self, "coefficients", ordered)

    def expanded_names(self) -> tuple[str, ...]:
        names: list[str] = []
        for t in self.terms:
            if t.kind == "spline" and t.knots is None:
                width = _spline_width_from_names(t.covariate, self.coefficients)
                names.extend(t.column_names(width))
            else:
                names.extend(t.column_names())
        names.append("const")
        return tuple(names)

    @property
    def evaluable(self) -> bool:
        return all(t.knots_known for t in self.terms) and not any(
            v is None for v in self.coefficients.values()
        )

    def eta(self, row: Mapping[str, float]) -> float:
        """Linear predictor at one covariate row."""
        if not self.evaluable:
            missing = [n for n, v in self.coefficients.items() if v is None]
            unknown = [t.covariate for t in self.terms if not t.knots_known]
            raise MissingDataError(
                "equation not evaluable: "
                f"unknown spline knots for {unknown}, null coefficients {missing}"
            )
        total = self.coefficients["const"]
        for t in self.terms:
            if t.covariate not in row:
                raise ValidationError(f"covariate {t.covariate!r} missing from row")
            term = t.to_term()
            cols = term.build(np.array([float(row[t.covariate])]))[0]
            for name, x in zip(term.column_names, cols):
                total += self.coefficients[name] * x
        return float(total)

    def to_payload(self) -> dict:
        return {
            "terms": [
                {
                    "covariate": t.covariate,
                    "kind": t.kind,
                    "knots": None if t.knots is None else list(t.knots),
                }
                for t in self.terms
            ],
            "coefficients": dict(self.coefficients),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> EquationSpec:
        terms = tuple(
            TermSpec(
                covariate=t["covariate"],
                kind=t.get("kind", "linear"),
                knots=None if t.get("knots") is None else tuple(t["knots"]),
            )
            for t in payload.get("terms", [])
        )
        return cls(terms, dict(payload.get("coefficients", {})))


@dataclass(frozen=True)
class ModelTable:
    """Cause set, baseline, and fitted or transcribed equations."""

    causes: tuple[str, ...]
    baseline: str
    equations: dict[str, EquationSpec]

    def __post_init__(self) -> None:
        object.__setattr__(self, "causes", tuple(self.causes))
        if self.baseline not in self.causes:
            raise ValidationError(f"baseline {self.baseline!r} not in causes")
        expected = set(self.causes) - {self.baseline}
        if set(self.equations) != expected:
            raise ValidationError(
                f"equations given for {sorted(self.equations)}, "
                f"expected exactly {sorted(expected)}"
            )

    @property
    def non_baseline(self) -> tuple[str, ...]:
        return tuple(c for c in self.causes if c != self.baseline)

    def eta(self, cause: str, row: Mapping[str, float]) -> float:
        if cause == self.baseline:
            return 0.0
        if cause not in self.equations:
            raise ValidationError(f"no equation for cause {cause!r}")
        return self.equations[cause].eta(row)

    def ratio(self, cause: str, row: Mapping[str, float]) -> float:
        """exp(eta): the cause's probability relative to the baseline."""
        return float(np.exp(self.eta(cause, row)))

    def to_model_spec(self) -> ModelSpec:
        """Rebuild a fit/predict spec; requires all spline knots known."""
        terms: dict[str, tuple[Term, ...]] = {}
        for cause, eq in self.equations.items():
            if eq.terms:
                terms[cause] = tuple(t.to_term() for t in eq.terms)
        return ModelSpec(self.causes, self.baseline, terms)

    def coefficient_map(self) -> dict[str, dict[str, float]]:
        """Per-cause name -> value dicts in the shape predict expects."""
        return {c: dict(eq.coefficients) for c, eq in self.equations.items()}

    def to_payload(self) -> dict:
        return {
            "causes": list(self.causes),
            "baseline": self.baseline,
            "equations": {c: self.equations[c].to_payload() for c in self.non_baseline},
        }

    @classmethod
    def from_payload(cls, payload: dict) -> ModelTable:
        try:
            causes = tuple(payload["causes"])
            baseline = payload["baseline"]
            equations = {
                c: EquationSpec.from_payload(e)
                for c, e in payload["equations"].items()
            }
        except KeyError as exc:
            raise ValidationError(f"model table payload missing key {exc}") from None
        return cls(causes, baseline, equations)

    @classmethod
    def from_fit(cls, fit: FitResult) -> ModelTable:
        equations = {}
        for cause in fit.spec.non_baseline:
            terms = tuple(
                TermSpec.from_term(t) for t in fit.spec.equation_terms(cause)
            )
            equations[cause] = EquationSpec(terms, dict(fit.coefficients[cause]))
        return cls(fit.spec.causes, fit.spec.baseline, equations)


def dump_models(models: Mapping[tuple[str, str], ModelTable], path: str | Path) -> None:
    """Write a model document; keys are (family, period) pairs."""
    payload: dict[str, dict] = {"models": {}}
    for (family, period), table in models.items():
        if period not in PERIOD_KEYS:
            raise ValidationError(f"unknown period {period!r}")
        payload["models"].setdefault(family, {})[period] = table.to_payload()
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _parse_document(payload: dict) -> dict[tuple[str, str], ModelTable]:
    if "models" not in payload:
        raise ValidationError("model document has no 'models' key")
    out: dict[tuple[str, str], ModelTable] = {}
    for family, periods in payload["models"].items():
        for period, table in periods.items():
            if period not in PERIOD_KEYS:
                raise ValidationError(f"unknown period {period!r} under {family!r}")
            out[(family, period)] = ModelTable.from_payload(table)
    return out


def load_models(path: str | Path) -> dict[tuple[str, str], ModelTable]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"model file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model file {path} is not valid JSON: {exc}") from None
    return _parse_document(payload)


@cache
def published_models() -> dict[tuple[str, str], ModelTable]:
    """The transcribed coefficient tables of the published models.

    Spline knot locations were never released, so spline-bearing equations
    in these tables cannot be evaluated; see the limitations section of the
    README.
    """
    text = resources.files("neocod").joinpath("data", PUBLISHED_RESOURCE).read_text()
    return _parse_document(json.loads(text))
