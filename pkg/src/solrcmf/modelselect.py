"""Two-step hyperparameter selection.

1. Penalized fits over randomly sampled ``(lambda1, lambda2)`` pairs.  Each
   fit is reduced to its zero pattern (which singular values and which factor
   entries are nonzero) and duplicate patterns are merged.
2. Every distinct pattern is scored by K-fold cross-validation over scattered
   held-out entries, fitting without penalties but with the zero pattern
   enforced.  The sparsest pattern whose mean held-out error is within one
   standard error of the best is refit on all observed entries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .admm import FitResult, Hyperparams, SolverState, fit
from .datamodel import DataCollection, FoldAssignment, MatrixKey
from .errors import BadRange, EmptyFold, EmptyInput

logger = logging.getLogger(__name__)

SUPPORT_TOL = 1e-9
CV_EPS_REL = 1e-6
CV_EPS_PRIMAL = 1e-5


@dataclass(frozen=True)
class StructurePattern:
    """Zero pattern of a solution; ``True`` marks an active entry."""

    d_support: Dict[MatrixKey, np.ndarray]
    u_support: Dict[int, np.ndarray]
    source: Optional[Tuple[float, float]] = None

    def signature(self) -> tuple:
        d = tuple((key, self.d_support[key].tobytes()) for key in sorted(self.d_support))
        u = tuple((v, self.u_support[v].tobytes()) for v in sorted(self.u_support))
        return d, u

    @property
    def sparsity_score(self) -> int:
        zeros_d = sum(int((~s).sum()) for s in self.d_support.values())
        zeros_u = sum(int((~s).sum()) for s in self.u_support.values())
        return zeros_d + zeros_u

    @property
    def n_active(self) -> int:
        return sum(int(s.sum()) for s in self.d_support.values())

    @property
    def is_empty(self) -> bool:
        return self.n_active == 0

    @property
    def k(self) -> int:
        return next(iter(self.d_support.values())).size

    @classmethod
    def full(cls, data: DataCollection, k: int) -> "StructurePattern":
        d = {key: np.ones(k, dtype=bool) for key in data.keys}
        u = {v: np.ones((p, k), dtype=bool) for v, p in data.views.items()}
        return cls(d, u)


def apply_closure(d_support, u_support) -> Tuple[dict, dict]:
    """Make a pattern self-consistent.

    A factor whose ``u_support`` column is empty in some view cannot be active
    in any matrix touching that view.  Conversely, a factor that is inactive
    in every matrix carries no structure, so its factor columns are cleared;
    the solver leaves such columns unconstrained.
    """
    d = {MatrixKey(*key): np.array(s, dtype=bool) for key, s in d_support.items()}
    u = {v: np.array(s, dtype=bool) for v, s in u_support.items()}
    for v, s in u.items():
        empty = ~s.any(axis=0)
        if empty.any():
            for key in d:
                if v in (key.row, key.col):
                    d[key] &= ~empty
    if d:
        dead = ~np.any(np.vstack(list(d.values())), axis=0)
        for v in u:
            u[v][:, dead] = False
    return d, u


def extract_structure(result: FitResult, tol: float = SUPPORT_TOL, source=None) -> StructurePattern:
    """Zero pattern of a fit: entries with ``|value| > tol`` are active."""
    state = result.state
    d = {key: np.abs(x) > tol for key, x in state.D.items()}
    u = {v: np.abs(x) > tol for v, x in state.U.items()}
    d, u = apply_closure(d, u)
    if source is None and result.hyperparams is not None:
        source = (result.hyperparams.lambda1, result.hyperparams.lambda2)
    return StructurePattern(d, u, source)


def sample_hyperparams(n: int, lo: float, hi: float, seed=None) -> List[Tuple[float, float]]:
    """``n`` pairs drawn independently and log-uniformly from ``[lo, hi]``."""
    if n < 1:
        raise BadRange(f"need at least one hyperparameter pair, got n={n}")
    if not (0 < lo < hi and np.isfinite(hi)):
        raise BadRange(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    rng = np.random.default_rng(seed)
    draws = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(n, 2)))
    draws = np.clip(draws, lo, hi)
    return [(float(a), float(b)) for a, b in draws]


@dataclass
class CVRecord:
    pattern: StructurePattern
    fold_mses: np.ndarray
    mean_mse: float
    se: float
    sparsity_score: int
    index: int = 0

    @property
    def lambdas(self) -> Tuple[float, float]:
        return self.pattern.source if self.pattern.source is not None else (-np.inf, -np.inf)


def unpenalized(h: Hyperparams, eps_rel: Optional[float] = None, eps_primal: Optional[float] = None) -> Hyperparams:
    h = replace(h, lambda1=0.0, lambda2=0.0)
    if eps_rel is not None:
        h = replace(h, eps_rel=max(h.eps_rel, eps_rel))
    if eps_primal is not None and h.eps_primal is not None:
        h = replace(h, eps_primal=max(h.eps_primal, eps_primal))
    return h


def primal_start(state: SolverState) -> SolverState:
    """Copy of ``state`` keeping ``V``, ``D`` and ``U`` with multipliers reset.

    The scaled multipliers of a converged fit hold the residuals of every
    observed entry, so a cross-validation fit started from them would see
    the held-out values.  Slack and signal copies are made consistent with
    the kept blocks.
    """
    s = state.copy()
    for v in s.V:
        s.Vslack[v] = s.U[v] - s.V[v]
        s.Lambda1[v] = np.zeros_like(s.V[v])
    for key in s.D:
        s.Z[key] = s.signal(key)
        s.Lambda2[key] = np.zeros_like(s.Z[key])
    return s


def _fold_error(data, pattern, folds, fold, init, h):
    """Sum of squared held-out errors and number of held-out entries."""
    held = {key: folds.held_out(key, fold) & m.mask for key, m in data.matrices.items()}
    count = int(sum(x.sum() for x in held.values()))
    if count == 0:
        raise EmptyFold(f"fold {fold} holds out no observed entries")
    if pattern.is_empty:
        sse = sum(float(np.sum(data[key].values[held[key]] ** 2)) for key in data.keys)
        return sse, count
    train = data.with_masks(folds.training_masks(data, fold))
    result = fit(train, h, init, pattern.d_support, pattern.u_support)
    sse = 0.0
    for key in data.keys:
        resid = (data[key].values - result.state.signal(key))[held[key]]
        sse += float(resid @ resid)
    return sse, count


def _aggregate(pattern, errors, index=0) -> CVRecord:
    mses = np.array([sse / count for sse, count in errors])
    se = float(np.std(mses, ddof=1) / np.sqrt(mses.size)) if mses.size > 1 else 0.0
    return CVRecord(pattern, mses, float(mses.mean()), se, pattern.sparsity_score, index)


def cv_score(
    data: DataCollection,
    pattern: StructurePattern,
    folds: FoldAssignment,
    init: SolverState,
    h: Hyperparams,
    index: int = 0,
) -> CVRecord:
    """K-fold score of a zero pattern.

    Each fold is held out of every matrix at once; an unpenalized fit with the
    pattern enforced predicts the held-out entries.  Squared errors are
    pooled over all matrices of a fold, so every held-out entry counts
    equally.  An empty pattern predicts zero everywhere and needs no fit.
    """
    h = unpenalized(h)
    errors = []
    for fold in range(1, folds.n_folds + 1):
        errors.append(_fold_error(data, pattern, folds, fold, init, h))
    return _aggregate(pattern, errors, index)


def select_one_se(records: Sequence[CVRecord]) -> CVRecord:
    """Sparsest record within one standard error of the lowest mean error.

    Ties in sparsity go to the larger ``lambda1``, then the larger
    ``lambda2``, then the earlier record.
    """
    if not records:
        raise EmptyInput("no cross-validation records to choose from")
    best = min(records, key=lambda r: r.mean_mse)
    cutoff = best.mean_mse + best.se
    eligible = [(i, r) for i, r in enumerate(records) if r.mean_mse <= cutoff]
    _, chosen = min(eligible, key=lambda ir: (-ir[1].sparsity_score, -ir[1].lambdas[0], -ir[1].lambdas[1], ir[0]))
    return chosen


def refit_fixed_pattern(data: DataCollection, pattern: StructurePattern, init: SolverState, h: Hyperparams) -> FitResult:
    """Unpenalized fit on all observed entries with the pattern enforced."""
    return fit(data, unpenalized(h), init, pattern.d_support, pattern.u_support)


def monotonicity_violations(grid, patterns) -> int:
    """Count dominated pairs whose larger penalties activate more singular values.

    Fitting is non-convex so violations are possible; they are only logged.
    """
    bad = 0
    for (a1, a2), pa in zip(grid, patterns):
        for (b1, b2), pb in zip(grid, patterns):
            if b1 >= a1 and b2 >= a2 and (b1, b2) != (a1, a2) and pb.n_active > pa.n_active:
                bad += 1
    return bad


@dataclass
class SelectionResult:
    pattern: StructurePattern
    fit: FitResult
    records: List[CVRecord]
    chosen: CVRecord
    grid: List[Tuple[float, float]]
    grid_pattern_index: List[int]
    penalized_objectives: List[float] = field(default_factory=list)
    monotonicity_violations: int = 0

    def __iter__(self):
        return iter((self.pattern, self.fit, self.records))


def _run(tasks, n_jobs):
    if n_jobs == 1:
        return [f(*args) for f, *args in tasks]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(f)(*args) for f, *args in tasks)


def select_model(
    data: DataCollection,
    grid: Sequence[Tuple[float, float]],
    folds: FoldAssignment,
    init: SolverState,
    h: Hyperparams,
    n_jobs: int = 1,
    tol: float = SUPPORT_TOL,
    refit: str = "pattern",
    cv_eps_rel: float = CV_EPS_REL,
    cv_eps_primal: float = CV_EPS_PRIMAL,
    cv_start: str = "restart",
) -> SelectionResult:
    """Penalized search, pattern deduplication, CV scoring, one-SE choice and refit.

    Penalized fits start from ``init``.  Cross-validation fits and the refit
    start from ``init`` as well, or with ``cv_start="penalized"`` from the
    penalized solution that first produced the pattern, which is already
    close to the constrained optimum.  Cross-validation fits use the relaxed
    tolerances ``cv_eps_rel`` and ``cv_eps_primal``; the final refit uses the
    tolerances of ``h``.  ``refit="penalized"`` instead returns the penalized
    fit at the chosen pair.
    """
    if cv_start not in ("restart", "penalized"):
        raise ValueError(f"cv_start must be 'restart' or 'penalized', got {cv_start!r}")
    if refit not in ("pattern", "penalized"):
        raise ValueError(f"refit must be 'pattern' or 'penalized', got {refit!r}")
    if not grid:
        raise EmptyInput("empty hyperparameter grid")
    grid = [(float(a), float(b)) for a, b in grid]

    pen_fits = _run([(fit, data, h.with_penalties(l1, l2), init) for l1, l2 in grid], n_jobs)
    patterns = [extract_structure(r, tol, source=pair) for r, pair in zip(pen_fits, grid)]

    unique: List[StructurePattern] = []
    starts: List[SolverState] = []
    seen: Dict[tuple, int] = {}
    index = []
    for pat, r in zip(patterns, pen_fits):
        sig = pat.signature()
        if sig not in seen:
            seen[sig] = len(unique)
            unique.append(pat)
            starts.append(primal_start(r.state) if cv_start == "penalized" else init)
        index.append(seen[sig])
    logger.info("%d grid points gave %d distinct patterns", len(grid), len(unique))

    h_cv = unpenalized(h, cv_eps_rel, cv_eps_primal)
    tasks = [
        (_fold_error, data, pat, folds, fold, start, h_cv)
        for pat, start in zip(unique, starts)
        for fold in range(1, folds.n_folds + 1)
    ]
    outcomes = _run(tasks, n_jobs)
    K = folds.n_folds
    records = [
        _aggregate(pat, outcomes[i * K : (i + 1) * K], i)
        for i, pat in enumerate(unique)
    ]
    chosen = select_one_se(records)

    if refit == "pattern":
        final = refit_fixed_pattern(data, chosen.pattern, starts[chosen.index], h)
    else:
        final = pen_fits[grid.index(chosen.pattern.source)]

    bad = monotonicity_violations(grid, patterns)
    if bad:
        logger.info("%d grid pairs activate more singular values than a less penalized pair", bad)
    return SelectionResult(
        pattern=chosen.pattern,
        fit=final,
        records=records,
        chosen=chosen,
        grid=grid,
        grid_pattern_index=index,
        penalized_objectives=[r.objective for r in pen_fits],
        monotonicity_violations=bad,
    )
