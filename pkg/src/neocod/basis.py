"""Covariate transforms: linear, quadratic, and restricted cubic spline terms.

A model equation is a list of :class:`Term` objects per cause. Each term
expands one covariate column into one or more design columns. Spline terms
use the restricted (natural) cubic spline basis whose first function is the
identity, so a spline with m knots contributes m-1 columns named
``cov_S1 .. cov_S{m-1}``; quadratic terms contribute ``cov`` and ``cov_Q``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Region codes expanded from the ``region`` covariate into 0/1 columns.
REGIONS = ("SSA", "SA", "LAC", "EAP", "ECA", "MENA", "HI")
REGION_COLUMNS = tuple(f"reg_{r}" for r in REGIONS)

#: Quantile positions (percent) used when placing spline knots.
KNOT_QUANTILES = {3: (10.0, 50.0, 90.0), 4: (5.0, 35.0, 65.0, 95.0)}

TERM_KINDS = ("linear", "quadratic", "spline")


def rcs_basis(x: np.ndarray, knots) -> np.ndarray:
    """Restricted cubic spline basis, identity first column.

    For knots t_1 < ... < t_m the basis has m-1 columns: the first is x
    itself, and column j+1 (j = 1..m-2) is

        [(x-t_j)^3_+ - (x-t_{m-1})^3_+ (t_m-t_j)/(t_m-t_{m-1})
                     + (x-t_m)^3_+ (t_{m-1}-t_j)/(t_m-t_{m-1})] / (t_m-t_1)^2

    which is linear beyond the outer knots.
    """
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1 or knots.size < 3:
        raise ValueError("spline needs at least 3 knots")
    if np.any(np.diff(knots) <= 0):
        raise ValueError(f"knots must be strictly increasing: {knots.tolist()}")
    x = np.asarray(x, dtype=float)
    m = knots.size
    tm, tm1 = knots[-1], knots[-2]
    scale = (knots[-1] - knots[0]) ** 2
    cols = [x]
    for j in range(m - 2):
        tj = knots[j]
        term = (
            np.clip(x - tj, 0.0, None) ** 3
            - np.clip(x - tm1, 0.0, None) ** 3 * (tm - tj) / (tm - tm1)
            + np.clip(x - tm, 0.0, None) ** 3 * (tm1 - tj) / (tm - tm1)
        )
        cols.append(term / scale)
    return np.column_stack(cols)


def quantile_knots(values, n_knots: int) -> tuple[float, ...]:
    """Knot locations at fixed quantiles of the observed covariate values."""
    if n_knots not in KNOT_QUANTILES:
        raise ValueError(f"unsupported knot count: {n_knots}")
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise ValueError("no values to place knots on")
    knots = tuple(float(q) for q in np.percentile(values, KNOT_QUANTILES[n_knots]))
    if len(set(knots)) != len(knots):
        raise ValueError(f"degenerate knots {knots}; covariate too concentrated")
    return knots


@dataclass(frozen=True)
class Term:
    """One covariate's contribution to a linear predictor."""

    covariate: str
    kind: str = "linear"
    knots: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in TERM_KINDS:
            raise ValueError(f"unknown term kind: {self.kind!r}")
        if self.kind == "spline":
            if self.knots is None:
                raise ValueError(f"spline term for {self.covariate!r} needs knots")
            object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        elif self.knots is not None:
            raise ValueError(f"{self.kind} term must not carry knots")

    @property
    def column_names(self) -> tuple[str, ...]:
        if self.kind == "linear":
            return (self.covariate,)
        if self.kind == "quadratic":
            return (self.covariate, f"{self.covariate}_Q")
        n = len(self.knots) - 1
        return tuple(f"{self.covariate}_S{i}" for i in range(1, n + 1))

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    def build(self, x: np.ndarray) -> np.ndarray:
        """Expand raw covariate values into design columns, shape (n, k)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return x[:, None].copy()
        if self.kind == "quadratic":
            return np.column_stack([x, x * x])
        return rcs_basis(x, self.knots)


@dataclass(frozen=True)
class CovariateRange:
    """Observed input range of one covariate, used to cap predictions."""

    low: float
    high: float

    def cap(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.low, self.high)


def observed_range(values) -> CovariateRange:
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise ValueError("no values to measure range on")
    return CovariateRange(float(values.min()), float(values.max()))


def build_design(
    frame,
    terms: list[Term] | tuple[Term, ...],
    ranges: dict[str, CovariateRange] | None = None,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Design matrix for one equation: expanded terms plus a trailing constant.

    ``frame`` is a DataFrame (or mapping of arrays) holding raw covariate
    columns. When ``ranges`` is given, each covariate is clipped to its
    observed training range before expansion.
    """
    blocks = []
    names: list[str] = []
    n = None
    for term in terms:
        x = np.asarray(frame[term.covariate], dtype=float)
        n = x.size if n is None else n
        if ranges is not None and term.covariate in ranges:
            x = ranges[term.covariate].cap(x)
        blocks.append(term.build(x))
        names.extend(term.column_names)
    if n is None:
        # intercept-only equation still needs a row count
        n = len(next(iter(frame.values()))) if isinstance(frame, dict) else len(frame)
    blocks.append(np.ones((n, 1)))
    names.append("const")
    return np.column_stack(blocks), tuple(names)
