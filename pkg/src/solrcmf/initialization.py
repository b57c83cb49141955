"""Starting states for the ADMM solver.

Every state produced here satisfies both splitting constraints exactly:
``U = V``, ``V' = 0``, ``Z = V D V^T`` and all multipliers are zero.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Union

import numpy as np

from .admm import FitResult, Hyperparams, SolverState, fit
from .datamodel import DataCollection
from .errors import LayoutNotMultiview, MissingEntriesUnsupported, RankTooLarge

logger = logging.getLogger(__name__)

RESTART_EPS_REL = 1e-5
RESTART_EPS_PRIMAL = 1e-4


class InitStrategy(str, enum.Enum):
    RANDOM = "random"
    MULTIVIEW = "multiview"


@dataclass
class InitConfig:
    k: int
    n_init: int = 5
    seed: int = 0
    strategy: InitStrategy = InitStrategy.RANDOM
    common_view: Optional[int] = None

    def __post_init__(self):
        self.strategy = InitStrategy(self.strategy)
        if self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        if self.k < 1:
            raise ValueError("k must be at least 1")


def _check_rank(data: DataCollection, k: int):
    smallest = min(data.views.values())
    if k > smallest:
        raise RankTooLarge(f"rank {k} exceeds the smallest view dimension {smallest}")


def state_from_factors(data: DataCollection, V: dict, D: dict) -> SolverState:
    """Feasible state with the given factors and singular values."""
    V = {v: np.array(V[v], dtype=float) for v in data.view_ids}
    D = {key: np.array(D[key], dtype=float) for key in data.keys}
    k = next(iter(V.values())).shape[1]
    Z = {key: (V[key.row] * D[key]) @ V[key.col].T for key in data.keys}
    return SolverState(
        V=V,
        D=D,
        U={v: x.copy() for v, x in V.items()},
        Vslack={v: np.zeros_like(x) for v, x in V.items()},
        Z=Z,
        Lambda1={v: np.zeros_like(x) for v, x in V.items()},
        Lambda2={key: np.zeros_like(z) for key, z in Z.items()},
        k=k,
    )


def random_init(data: DataCollection, k: int, seed=None) -> SolverState:
    """Random orthonormal factors (QR of Gaussian draws) and ``d ~ U(-1, 1)``.

    Draws happen in a fixed order: factors for views in ascending order, then
    singular values for matrices in collection order.
    """
    _check_rank(data, k)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    V = {}
    for v in data.view_ids:
        Q, _ = np.linalg.qr(rng.standard_normal((data.views[v], k)))
        V[v] = Q
    D = {key: rng.uniform(-1.0, 1.0, size=k) for key in data.keys}
    return state_from_factors(data, V, D)


def _orthonormal_block(B: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(B)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def multiview_init(data: DataCollection, k: int, common_view: Optional[int] = None) -> SolverState:
    """Spectral start for multi-view layouts.

    All matrices must share ``common_view`` (as column view, or all as row
    view) and have pairwise distinct other views.  The matrices are stacked
    along the common view and a truncated SVD of the stack gives the common
    factors.  Each block of left singular vectors is re-orthonormalized by QR
    to give the factors of its own view, and singular values are set to
    ``diag(V_i^T X V_j)``.
    """
    _check_rank(data, k)
    keys = data.keys
    if common_view is None:
        cols = {key.col for key in keys}
        rows = {key.row for key in keys}
        if len(cols) == 1:
            common_view = next(iter(cols))
        elif len(rows) == 1:
            common_view = next(iter(rows))
        else:
            raise LayoutNotMultiview("matrices do not share a single common view")
    as_col = all(key.col == common_view for key in keys)
    as_row = all(key.row == common_view for key in keys)
    if not (as_col or as_row):
        raise LayoutNotMultiview(f"not every matrix involves view {common_view} on the same side")
    others = [key.row if as_col else key.col for key in keys]
    if len(set(others)) != len(others):
        raise LayoutNotMultiview("each non-common view must appear in exactly one matrix")
    if set(others) | {common_view} != set(data.views):
        raise LayoutNotMultiview("some views are not connected to the common view")
    for key in keys:
        if not data[key].fully_observed:
            raise MissingEntriesUnsupported(f"matrix {key} has missing entries")

    blocks = [data[key].values if as_col else data[key].values.T for key in keys]
    stacked = np.vstack(blocks)
    Uc, _, Vct = np.linalg.svd(stacked, full_matrices=False)
    V = {common_view: Vct[:k].T.copy()}
    offset = 0
    for other, block in zip(others, blocks):
        p = block.shape[0]
        V[other] = _orthonormal_block(Uc[offset : offset + p, :k])
        offset += p
    D = {key: np.sum(V[key.row] * (data[key].values @ V[key.col]), axis=0) for key in keys}
    return state_from_factors(data, V, D)


@dataclass
class RestartResult:
    """Outcome of the restart search.

    ``initial`` is the chosen starting state, ``warm`` the unpenalized fit
    that started from it, ``index`` its restart number and ``objectives`` the
    final augmented Lagrangian of every restart.
    """

    initial: SolverState
    warm: FitResult
    index: int
    objectives: List[float]


def restart_hyperparams(h: Hyperparams) -> Hyperparams:
    eps_primal = None if h.eps_primal is None else max(h.eps_primal, RESTART_EPS_PRIMAL)
    return replace(
        h, lambda1=0.0, lambda2=0.0, eps_rel=max(h.eps_rel, RESTART_EPS_REL), eps_primal=eps_primal
    )


def best_of_restarts(data: DataCollection, cfg: InitConfig, h: Hyperparams, n_jobs: int = 1) -> RestartResult:
    """Fit from several starts without penalties and keep the best start.

    Restarts draw from independent streams spawned from ``cfg.seed``.  The
    winner is the lowest final augmented Lagrangian, ties going to the lower
    restart index.
    """
    h0 = restart_hyperparams(h)
    if cfg.strategy is InitStrategy.MULTIVIEW:
        starts = [multiview_init(data, cfg.k, cfg.common_view)]
    else:
        streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_init)
        starts = [random_init(data, cfg.k, s) for s in streams]

    if n_jobs == 1 or len(starts) == 1:
        fits = [fit(data, h0, s) for s in starts]
    else:
        from joblib import Parallel, delayed

        fits = Parallel(n_jobs=n_jobs)(delayed(fit)(data, h0, s) for s in starts)

    finals = [float(f.lagrangian_trace[-1]) for f in fits]
    best = min(range(len(fits)), key=lambda i: (finals[i], i))
    logger.info("restart %d selected, final Lagrangians %s", best, finals)
    return RestartResult(starts[best], fits[best], best, finals)
