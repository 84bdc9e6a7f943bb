"""Covariate selection by jackknifed out-of-sample chi-squared.

For one target cause, observations where both the target and the baseline
cause were reported separately form a two-outcome dataset. Candidate
covariates (each in linear, quadratic, or spline form) are screened with a
leave-one-group-out jackknife: fit the two-cause submodel without one group,
predict the held-out pairs, and accumulate chi-squared between observed and
expected deaths. Selection starts from the single best candidate and then
cycles through the remaining ones, adding any whose best form strictly
lowers the out-of-sample chi-squared, until a full cycle adds nothing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .basis import Term, quantile_knots
from .errors import NumericalError, ValidationError
from .mnlogit import ModelSpec, fit, predict

FORMS = ("linear", "quadratic", "spline")
_FORM_RANK = {k: i for i, k in enumerate(FORMS)}

#: Candidates are rejected outright when more than this share of jackknife
#: folds fails to fit.
MAX_FAILED_FOLD_FRACTION = 0.2

MIN_FOLDS = 3


def chi_squared(observed, expected) -> float:
    """Pearson statistic sum (obs - exp)^2 / exp over paired cells.

    Cells with expected = observed = 0 contribute nothing; expected = 0
    against a positive observation returns the +inf rejection sentinel.
    """
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if observed.shape != expected.shape:
        raise ValidationError("observed and expected shapes differ")
    if np.any(expected < 0) or np.any(observed < 0):
        raise ValidationError("counts must be non-negative")
    if np.any((expected == 0) & (observed > 0)):
        return float(np.inf)
    live = expected > 0
    diff = observed[live] - expected[live]
    return float(np.sum(diff * diff / expected[live]))


@dataclass
class PairData:
    """Two-cause counts with covariates, weights, and jackknife groups."""

    frame: pd.DataFrame
    target_counts: np.ndarray
    baseline_counts: np.ndarray
    weights: np.ndarray
    fold_ids: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.frame)
        for name in ("target_counts", "baseline_counts", "weights", "fold_ids"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n,):
                raise ValidationError(f"{name} must have one entry per row")
            setattr(self, name, arr)
        totals = self.target_counts + self.baseline_counts
        if np.any(totals <= 0):
            raise ValidationError("every pair needs at least one death")
        if np.any(self.weights <= 0):
            raise ValidationError("weights must be positive")

    def __len__(self) -> int:
        return len(self.frame)


def extract_pairs(cells_list, target: str, baseline: str):
    """Rows where both causes were reported alone, with their counts.

    Returns (row_indices, target_counts, baseline_counts). Observations
    where either cause sits inside a merged category are unusable for the
    pairwise screen and are skipped.
    """
    idx: list[int] = []
    t_counts: list[float] = []
    b_counts: list[float] = []
    for i, cells in enumerate(cells_list):
        t = b = None
        for members, count in cells:
            if members == (target,):
                t = count
            elif members == (baseline,):
                b = count
        if t is None or b is None or t + b <= 0:
            continue
        idx.append(i)
        t_counts.append(t)
        b_counts.append(b)
    return np.asarray(idx, dtype=int), np.asarray(t_counts), np.asarray(b_counts)


@dataclass
class SelectionStep:
    step: int
    action: str          # "evaluate", "add", "exclude", "stop"
    covariate: str
    kind: str
    chi2: float
    accepted: bool


@dataclass
class SelectionResult:
    target: str
    chosen: tuple[Term, ...]
    null_chi2: float
    final_chi2: float
    trace: list[SelectionStep] = field(default_factory=list)

    @property
    def percent_reduction(self) -> float:
        if self.null_chi2 <= 0:
            return 0.0
        return 100.0 * (self.null_chi2 - self.final_chi2) / self.null_chi2

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "target": self.target,
                "step": s.step,
                "action": s.action,
                "covariate": s.covariate,
                "form": s.kind,
                "oos_chi2": s.chi2,
                "accepted": s.accepted,
            }
            for s in self.trace
        ]
        return pd.DataFrame(
            rows,
            columns=["target", "step", "action", "covariate", "form",
                     "oos_chi2", "accepted"],
        )


def oos_chi2(pair: PairData, terms: tuple[Term, ...],
             max_failed: float = MAX_FAILED_FOLD_FRACTION) -> float:
    """Jackknife out-of-sample chi-squared for one candidate term set.

    Each unique fold id is held out in turn; expected target deaths for a
    held-out pair are N_pair * predicted target share. Folds whose training
    fit fails are skipped and counted; if more than ``max_failed`` of folds
    fail the candidate is rejected with an infinite score.
    """
    spec = ModelSpec(("baseline", "target"), "baseline",
                     {"target": terms} if terms else {})
    folds = pd.unique(pair.fold_ids)
    if folds.size < MIN_FOLDS:
        raise ValidationError(f"need at least {MIN_FOLDS} jackknife groups")
    total = 0.0
    failed = 0
    for fold in folds:
        hold = pair.fold_ids == fold
        train = ~hold
        cells = [
            [(("target",), t), (("baseline",), b)]
            for t, b in zip(pair.target_counts[train], pair.baseline_counts[train])
        ]
        try:
            res = fit(spec, pair.frame[train], cells,
                      weights=pair.weights[train])
            p = predict(spec, res.coefficients, pair.frame[hold])[:, 1]
        except (NumericalError, ValidationError, np.linalg.LinAlgError):
            failed += 1
            continue
        n_pair = pair.target_counts[hold] + pair.baseline_counts[hold]
        observed = np.concatenate([pair.target_counts[hold],
                                   pair.baseline_counts[hold]])
        expected = np.concatenate([n_pair * p, n_pair * (1.0 - p)])
        total += chi_squared(observed, expected)
    if failed > max_failed * folds.size:
        return float(np.inf)
    return total


def candidate_terms(covariate: str, values, n_knots: int,
                    dummy: bool = False) -> list[Term]:
    """All admissible forms of one covariate; dummies stay linear."""
    if dummy:
        return [Term(covariate)]
    out = [Term(covariate), Term(covariate, "quadratic")]
    try:
        knots = quantile_knots(np.asarray(values, dtype=float), n_knots)
    except ValueError:
        return out  # too concentrated to spline
    out.append(Term(covariate, "spline", knots))
    return out


def forward_select(
    pair: PairData,
    covariates: tuple[str, ...],
    dummies: tuple[str, ...] = (),
    n_knots: int = 4,
    target: str = "target",
) -> SelectionResult:
    """Best-first start, then first-improvement cycling over candidates.

    Step one adds the single covariate (in its best form) with the lowest
    jackknife chi-squared, if it beats the intercept-only model. Later
    cycles walk the remaining candidates in order and add any whose best
    form strictly lowers the statistic, re-cycling until a pass adds
    nothing. Form ties break toward the simpler form; constant covariates
    are excluded up front.
    """
    trace: list[SelectionStep] = []
    step = 0

    menu: dict[str, list[Term]] = {}
    dummy_set = set(dummies)
    for cov in (*covariates, *dummies):
        vals = pair.frame[cov].to_numpy(dtype=float)
        if np.all(vals == vals[0]):
            step += 1
            trace.append(SelectionStep(step, "exclude", cov, "", np.nan, False))
            continue
        menu[cov] = candidate_terms(cov, vals, n_knots, dummy=cov in dummy_set)

    def score(terms) -> float:
        return oos_chi2(pair, tuple(terms))

    def best_form(cov: str, current: list[Term]) -> tuple[float, int, Term]:
        nonlocal step
        step += 1
        best = None
        for term in menu[cov]:
            chi2 = score(current + [term])
            trace.append(SelectionStep(step, "evaluate", cov, term.kind,
                                       chi2, False))
            key = (chi2, _FORM_RANK[term.kind])
            if best is None or key < best[:2]:
                best = (chi2, _FORM_RANK[term.kind], term)
        return best

    null_chi2 = score([])
    current: list[Term] = []
    current_chi2 = null_chi2

    # opening step: the single best candidate across the whole menu
    opener = None  # (chi2, form_rank, order, term)
    for order, cov in enumerate(menu):
        chi2, rank, term = best_form(cov, current)
        if opener is None or (chi2, rank, order) < opener[:3]:
            opener = (chi2, rank, order, term)
    if opener is not None and opener[0] < current_chi2:
        current.append(opener[3])
        current_chi2 = opener[0]
        trace.append(SelectionStep(step, "add", opener[3].covariate,
                                   opener[3].kind, current_chi2, True))
        # cycling: add any remaining candidate that strictly improves
        while True:
            added = False
            for cov in menu:
                if cov in {t.covariate for t in current}:
                    continue
                chi2, _rank, term = best_form(cov, current)
                if chi2 < current_chi2:
                    current.append(term)
                    current_chi2 = chi2
                    trace.append(SelectionStep(step, "add", cov, term.kind,
                                               current_chi2, True))
                    added = True
            if not added:
                break
    step += 1
    trace.append(SelectionStep(step, "stop", "", "", current_chi2, False))

    return SelectionResult(
        target=target,
        chosen=tuple(current),
        null_chi2=null_chi2,
        final_chi2=current_chi2,
        trace=trace,
    )
