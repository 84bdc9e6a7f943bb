"""Weighted multinomial logistic regression on grouped cause-of-death counts.

Observations are study-level count vectors. A study that merged several
causes into one reported category contributes a composite cell: the count is
matched against the *sum* of the member-cause probabilities, so merged
reporting still informs the fit without pretending the split is known. Each
observation is weighted by 1 / sqrt(total deaths), which damps the largest
studies.

The log-likelihood for observation i with cells c (count n_c, member set c)
is w_i * sum_c n_c log P_c with P_c = sum_{k in c} p_ik. Gradient and
Hessian are analytic; Newton steps with step halving do the maximising.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import CovariateRange, Term, build_design
from .errors import NumericalError, ValidationError

Cells = list[tuple[tuple[str, ...], float]]

SEPARATION_LIMIT = 1e3


def observation_weight(total_deaths: float) -> float:
    """Study weight, one over the square root of its total deaths."""
    if total_deaths <= 0:
        raise ValidationError(f"total deaths must be positive, got {total_deaths}")
    return 1.0 / np.sqrt(total_deaths)


@dataclass(frozen=True)
class ModelSpec:
    """Cause list, baseline cause, and per-cause covariate terms.

    ``terms`` maps each non-baseline cause to its Term tuple; the baseline's
    linear predictor is fixed at zero. Causes absent from ``terms`` get an
    intercept-only equation.
    """

    causes: tuple[str, ...]
    baseline: str
    terms: dict[str, tuple[Term, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.causes)) != len(self.causes):
            raise ValidationError("duplicate causes in model spec")
        if len(self.causes) < 2:
            raise ValidationError("need at least two causes")
        if self.baseline not in self.causes:
            raise ValidationError(f"baseline {self.baseline!r} not in cause list")
        extra = set(self.terms) - set(self.causes)
        if extra:
            raise ValidationError(f"terms given for unknown causes: {sorted(extra)}")
        if self.baseline in self.terms:
            raise ValidationError("baseline cause cannot carry terms")

    @property
    def non_baseline(self) -> tuple[str, ...]:
        return tuple(c for c in self.causes if c != self.baseline)

    def equation_terms(self, cause: str) -> tuple[Term, ...]:
        return tuple(self.terms.get(cause, ()))

    def column_names(self, cause: str) -> tuple[str, ...]:
        names: list[str] = []
        for t in self.equation_terms(cause):
            names.extend(t.column_names)
        names.append("const")
        return tuple(names)

    def covariates(self) -> tuple[str, ...]:
        seen: list[str] = []
        for cause in self.non_baseline:
            for t in self.equation_terms(cause):
                if t.covariate not in seen:
                    seen.append(t.covariate)
        return tuple(seen)


@dataclass
class FitResult:
    spec: ModelSpec
    coefficients: dict[str, dict[str, float]]
    loglik: float
    n_iter: int
    converged: bool
    gradient_norm: float
    used_ridge: bool = False
    separation: bool = False

    def beta_max(self) -> float:
        vals = [abs(v) for eq in self.coefficients.values() for v in eq.values()]
        return max(vals) if vals else 0.0


class _Design:
    """Packed per-equation design matrices and cell bookkeeping."""

    def __init__(self, spec: ModelSpec, frame, cells: Cells | list,
                 weights: np.ndarray | None,
                 ranges: dict[str, CovariateRange] | None = None) -> None:
        self.spec = spec
        self.K = len(spec.causes)
        cause_index = {c: j for j, c in enumerate(spec.causes)}
        self.n = len(cells)

        self.X: list[np.ndarray] = []
        self.names: list[tuple[str, ...]] = []
        self.slices: list[slice] = []
        start = 0
        for cause in spec.non_baseline:
            X, names = build_design(frame, spec.equation_terms(cause), ranges)
            if X.shape[0] != self.n:
                raise ValidationError(
                    f"covariate rows ({X.shape[0]}) != observations ({self.n})"
                )
            if not np.all(np.isfinite(X)):
                raise ValidationError(f"non-finite design values for {cause!r}")
            self.X.append(X)
            self.names.append(names)
            self.slices.append(slice(start, start + X.shape[1]))
            start += X.shape[1]
        self.n_params = start

        # flatten cells: every (obs, cause) points at one global cell id
        self.cell_of = np.full((self.n, self.K), -1, dtype=int)
        counts: list[float] = []
        obs_of_cell: list[int] = []
        totals = np.zeros(self.n)
        for i, obs_cells in enumerate(cells):
            seen: set[int] = set()
            for members, count in obs_cells:
                if count < 0:
                    raise ValidationError(f"negative cell count in observation {i}")
                cid = len(counts)
                counts.append(float(count))
                obs_of_cell.append(i)
                for cause in members:
                    j = cause_index.get(cause)
                    if j is None:
                        raise ValidationError(
                            f"cell cause {cause!r} not in model causes (observation {i})"
                        )
                    if j in seen:
                        raise ValidationError(
                            f"cause {cause!r} appears in two cells (observation {i})"
                        )
                    seen.add(j)
                    self.cell_of[i, j] = cid
                totals[i] += count
            if len(seen) != self.K:
                missing = [c for c in spec.causes if cause_index[c] not in seen]
                raise ValidationError(
                    f"cells of observation {i} do not cover causes {missing}"
                )
            if totals[i] <= 0:
                raise ValidationError(f"observation {i} has no deaths")
        self.counts = np.asarray(counts)
        self.obs_of_cell = np.asarray(obs_of_cell, dtype=int)
        self.totals = totals
        if weights is None:
            self.w = 1.0 / np.sqrt(totals)
        else:
            self.w = np.asarray(weights, dtype=float)
            if self.w.shape != (self.n,) or np.any(self.w <= 0):
                raise ValidationError("weights must be positive, one per observation")

    # probabilities -------------------------------------------------------
    def eta(self, beta: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, self.K))
        for idx, cause in enumerate(self.spec.non_baseline):
            j = self.spec.causes.index(cause)
            out[:, j] = self.X[idx] @ beta[self.slices[idx]]
        return out

    def probs(self, beta: np.ndarray) -> np.ndarray:
        eta = self.eta(beta)
        eta -= eta.max(axis=1, keepdims=True)
        e = np.exp(eta)
        return e / e.sum(axis=1, keepdims=True)

    def cell_probs(self, p: np.ndarray) -> np.ndarray:
        Pc = np.zeros(self.counts.size)
        np.add.at(Pc, self.cell_of.ravel(), p.ravel())
        return Pc

    # likelihood pieces ---------------------------------------------------
    def loglik(self, beta: np.ndarray) -> float:
        Pc = self.cell_probs(self.probs(beta))
        pos = self.counts > 0
        if np.any(Pc[pos] <= 0):
            return -np.inf
        return float(np.sum(
            self.w[self.obs_of_cell[pos]] * self.counts[pos] * np.log(Pc[pos])
        ))

    def loglik_grad_hess(self, beta: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        p = self.probs(beta)
        Pc = self.cell_probs(p)
        pos = self.counts > 0
        if np.any(Pc[pos] <= 0):
            raise NumericalError("zero probability on a populated cell")
        ll = float(np.sum(
            self.w[self.obs_of_cell[pos]] * self.counts[pos] * np.log(Pc[pos])
        ))

        safe_Pc = np.where(Pc > 0, Pc, 1.0)
        ratio_cell = self.counts / safe_Pc            # n_c / P_c
        ratio2_cell = self.counts / safe_Pc ** 2      # n_c / P_c^2
        r = ratio_cell[self.cell_of]                  # (n, K)
        r2 = ratio2_cell[self.cell_of]
        N = self.totals[:, None]

        core = p * (r - N)                            # (n, K)
        grad = np.empty(self.n_params)
        for idx, cause in enumerate(self.spec.non_baseline):
            j = self.spec.causes.index(cause)
            grad[self.slices[idx]] = self.X[idx].T @ (self.w * core[:, j])

        H = np.empty((self.n_params, self.n_params))
        for a, ca in enumerate(self.spec.non_baseline):
            k = self.spec.causes.index(ca)
            for b, cb in enumerate(self.spec.non_baseline):
                if b < a:
                    H[self.slices[a], self.slices[b]] = H[self.slices[b], self.slices[a]].T
                    continue
                l = self.spec.causes.index(cb)
                A = self.totals * p[:, k] * p[:, l]
                same = self.cell_of[:, k] == self.cell_of[:, l]
                A -= np.where(same, r2[:, k] * p[:, k] * p[:, l], 0.0)
                if k == l:
                    A += core[:, k]
                H[self.slices[a], self.slices[b]] = (
                    self.X[a].T @ (self.X[b] * (self.w * A)[:, None])
                )
        return ll, grad, H


def _ridge_mask(design: _Design) -> np.ndarray:
    """Diagonal mask that leaves intercept entries unregularised."""
    mask = np.ones(design.n_params)
    for idx, names in enumerate(design.names):
        sl = design.slices[idx]
        for off, name in enumerate(names):
            if name == "const":
                mask[sl.start + off] = 0.0
    return mask


def fit(
    spec: ModelSpec,
    frame,
    cells: list,
    weights: np.ndarray | None = None,
    ranges: dict[str, CovariateRange] | None = None,
    max_iter: int = 200,
    tol: float = 1e-8,
    ridge: float = 1e-8,
) -> FitResult:
    """Maximise the weighted grouped multinomial likelihood by Newton steps.

    Singular Hessians get a small ridge on non-intercept diagonal entries
    (recorded on the result); coefficients drifting past ``SEPARATION_LIMIT``
    raise a separation warning but the fit is still returned.
    """
    design = _Design(spec, frame, cells, weights, ranges)
    beta = np.zeros(design.n_params)
    ll, grad, H = design.loglik_grad_hess(beta)
    used_ridge = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm < tol:
            converged = True
            break
        try:
            step = np.linalg.solve(-H, grad)
        except np.linalg.LinAlgError:
            used_ridge = True
            mask = _ridge_mask(design)
            try:
                step = np.linalg.solve(-H + ridge * np.diag(mask), grad)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("Hessian singular even with ridge") from exc
        # step halving keeps the likelihood moving uphill
        scale = 1.0
        for _ in range(40):
            candidate = beta + scale * step
            cand_ll = design.loglik(candidate)
            if cand_ll >= ll - 1e-12:
                break
            scale *= 0.5
        else:
            break  # no uphill step found; report current point
        beta = beta + scale * step
        ll, grad, H = design.loglik_grad_hess(beta)
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    if gnorm < tol:
        converged = True

    separation = bool(beta.size and np.max(np.abs(beta)) > SEPARATION_LIMIT)
    if separation:
        warnings.warn(
            "coefficient magnitude exceeds separation threshold; "
            "cause may be (quasi-)separated in these data",
            RuntimeWarning,
            stacklevel=2,
        )
    if not np.isfinite(ll):
        raise NumericalError("log-likelihood is not finite at the fitted point")

    coefficients: dict[str, dict[str, float]] = {}
    for idx, cause in enumerate(spec.non_baseline):
        vals = beta[design.slices[idx]]
        coefficients[cause] = {
            name: float(v) for name, v in zip(design.names[idx], vals)
        }
    return FitResult(
        spec=spec,
        coefficients=coefficients,
        loglik=ll,
        n_iter=it,
        converged=converged,
        gradient_norm=gnorm,
        used_ridge=used_ridge,
        separation=separation,
    )


def predict(
    spec: ModelSpec,
    coefficients: dict[str, dict[str, float]],
    frame,
    ranges: dict[str, CovariateRange] | None = None,
) -> np.ndarray:
    """Predicted cause fractions, rows summing to one, columns = spec.causes.

    Equations with any missing (None) coefficient cannot be evaluated and
    raise ``ValidationError``.
    """
    columns: list[tuple[int, np.ndarray]] = []
    n = None
    for cause in spec.non_baseline:
        j = spec.causes.index(cause)
        X, names = build_design(frame, spec.equation_terms(cause), ranges)
        if n is None:
            n = X.shape[0]
        elif X.shape[0] != n:
            raise ValidationError("equations disagree on the number of rows")
        eq = coefficients.get(cause)
        if eq is None:
            raise ValidationError(f"no coefficients for cause {cause!r}")
        try:
            b = np.array([eq[name] for name in names], dtype=float)
        except KeyError as exc:
            raise ValidationError(f"missing coefficient {exc} for cause {cause!r}") from None
        except TypeError:
            raise ValidationError(
                f"non-numeric coefficient in equation for {cause!r}"
            ) from None
        if not np.all(np.isfinite(b)):
            raise ValidationError(f"non-finite coefficient for cause {cause!r}")
        columns.append((j, X @ b))
    eta = np.zeros((n, len(spec.causes)))
    for j, col in columns:
        eta[:, j] = col
    eta -= eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=1, keepdims=True)
