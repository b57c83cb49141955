"""Multi-block ADMM for the sparse orthogonal collective factorization problem.

Model: every observed matrix ``X_ij`` is approximated by ``V_i diag(d_ij) V_j^T``
with orthonormal factor matrices ``V_l`` shared across all matrices touching
view ``l``.  The penalized problem is

    1/2 sum ||P_Omega(X_ij - V_i D_ij V_j^T)||^2
        + lambda1 sum w_ij |d_ij| + lambda2 sum_l w1_l ||U_l||_1

where ``U_l`` is a unit-column copy of ``V_l`` that carries the sparsity
penalty.  It is split into ``U_l = V_l + V'_l`` and ``Z_ij = V_i D_ij V_j^T``
with scaled multipliers ``Lambda1_l`` and ``Lambda2_ij``.  One sweep updates

    V (views in ascending order, each using the newest neighbours),
    D (matrices in collection order), U (views),
    then V' and Z jointly, then the multipliers,

and records the augmented Lagrangian.  Iteration stops once its change is
below ``eps_abs`` or its relative change is below ``eps_rel``, and every
primal residual norm ``||U - V - V'||_F`` and ``||Z - V D V^T||_F`` is below
``eps_primal`` (set it to ``None`` to rely on the Lagrangian alone).

The manifold blocks (V and U) carry a proximal term ``alpha/2 ||. - previous||^2``.
Because the Frobenius norm is constant on both manifolds this only adds
``alpha/rho * previous`` to the matrix being projected, so each update remains
an exact subproblem minimizer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional

import numpy as np

from .datamodel import DataCollection, MatrixKey
from .errors import InvalidRho, NonFiniteValue
from .manifold import project_stiefel, prox_oblique_l1_columns, soft_threshold

logger = logging.getLogger(__name__)

RHO_MARGIN = 1.01


def rho_lower_bound(mu: float, w2) -> float:
    """Smallest step size for which the ADMM iterates are guaranteed to converge.

    ``rho`` must exceed
    ``max(2, 2 mu max(w2)^2 / min(w2), (1 + mu max(w2)) / 2 * (1 + 2 max(w2) / min(w2))^2)``.
    """
    w2 = np.atleast_1d(np.asarray(list(w2.values()) if isinstance(w2, Mapping) else w2, dtype=float))
    if mu <= 0 or np.any(w2 <= 0):
        raise ValueError("mu and all w2 weights must be positive")
    hi, lo = w2.max(), w2.min()
    return float(max(2.0, 2.0 * mu * hi**2 / lo, (1.0 + mu * hi) / 2.0 * (1.0 + 2.0 * hi / lo) ** 2))


@dataclass
class Hyperparams:
    """Penalties, step size and stopping rule.

    Weight fields left as ``None`` are filled by :meth:`resolve`:
    ``w_d`` defaults to ones, ``w1`` to ``1/sqrt(p_l)``, ``w2`` to ones and
    ``rho`` to 1.01 times :func:`rho_lower_bound`.
    """

    lambda1: float = 0.0
    lambda2: float = 0.0
    mu: float = 1.0
    rho: Optional[float] = None
    alpha: float = 1e-3
    w_d: Optional[Dict[MatrixKey, np.ndarray]] = None
    w1: Optional[Dict[int, float]] = None
    w2: Optional[Dict[int, float]] = None
    eps_abs: float = 1e-10
    eps_rel: float = 1e-8
    t_max: int = 10_000
    eps_primal: Optional[float] = 1e-6

    def resolve(self, data: DataCollection, k: int) -> "Hyperparams":
        w_d = {key: np.ones(k) for key in data.keys}
        if self.w_d is not None:
            w_d.update({MatrixKey(*key): np.asarray(v, dtype=float) for key, v in self.w_d.items()})
        w1 = {v: 1.0 / np.sqrt(p) for v, p in data.views.items()}
        if self.w1 is not None:
            w1.update(self.w1)
        w2 = {v: 1.0 for v in data.views}
        if self.w2 is not None:
            w2.update(self.w2)
        rho = self.rho
        if rho is None:
            rho = RHO_MARGIN * rho_lower_bound(self.mu, w2)
        return replace(self, w_d=w_d, w1=w1, w2=w2, rho=float(rho))

    def with_penalties(self, lambda1: float, lambda2: float, **kwargs) -> "Hyperparams":
        return replace(self, lambda1=float(lambda1), lambda2=float(lambda2), **kwargs)


@dataclass
class SolverState:
    V: Dict[int, np.ndarray]
    D: Dict[MatrixKey, np.ndarray]
    U: Dict[int, np.ndarray]
    Vslack: Dict[int, np.ndarray]
    Z: Dict[MatrixKey, np.ndarray]
    Lambda1: Dict[int, np.ndarray]
    Lambda2: Dict[MatrixKey, np.ndarray]
    k: int

    def copy(self) -> "SolverState":
        def dup(d):
            return {key: v.copy() for key, v in d.items()}

        return SolverState(
            dup(self.V), dup(self.D), dup(self.U), dup(self.Vslack),
            dup(self.Z), dup(self.Lambda1), dup(self.Lambda2), self.k,
        )

    def signal(self, key) -> np.ndarray:
        """The fitted low-rank matrix ``V_i diag(d) V_j^T`` for one key."""
        key = MatrixKey(*key)
        return (self.V[key.row] * self.D[key]) @ self.V[key.col].T


@dataclass
class FitResult:
    state: SolverState
    lagrangian_trace: np.ndarray
    primal_residuals: Dict[str, Dict]
    iterations: int
    converged: bool
    objective: float
    hyperparams: Hyperparams = None

    @property
    def max_residual(self) -> float:
        vals = [v for block in self.primal_residuals.values() for v in block.values()]
        return max(vals) if vals else 0.0


def _incidence(data: DataCollection):
    """For each view, the matrices it appears in and whether as the row view."""
    inc = {v: [] for v in data.views}
    for key in data.keys:
        inc[key.row].append((key, True))
        inc[key.col].append((key, False))
    return inc


def augmented_lagrangian(state: SolverState, data: DataCollection, h: Hyperparams) -> float:
    h = h.resolve(data, state.k) if h.rho is None or h.w1 is None else h
    rho = h.rho
    total = 0.0
    for key, m in data.matrices.items():
        model = state.signal(key)
        resid = np.where(m.mask, m.values - state.Z[key], 0.0)
        total += 0.5 * np.sum(resid**2)
        total += h.lambda1 * np.sum(h.w_d[key] * np.abs(state.D[key]))
        L2 = state.Lambda2[key]
        total += rho / 2 * (np.sum((state.Z[key] - model + L2) ** 2) - np.sum(L2**2))
    for v in data.views:
        total += h.lambda2 * h.w1[v] * np.sum(np.abs(state.U[v]))
        total += h.mu / 2 * h.w2[v] * np.sum(state.Vslack[v] ** 2)
        L1 = state.Lambda1[v]
        r = state.U[v] - state.V[v] - state.Vslack[v]
        total += rho / 2 * (np.sum((r + L1) ** 2) - np.sum(L1**2))
    return float(total)


def objective_eq3(state: SolverState, data: DataCollection, h: Hyperparams) -> float:
    """Penalized least-squares objective evaluated at ``V``, ``D`` and ``U``."""
    h = h.resolve(data, state.k) if h.w1 is None or h.w_d is None else h
    total = 0.0
    for key, m in data.matrices.items():
        resid = np.where(m.mask, m.values - state.signal(key), 0.0)
        total += 0.5 * np.sum(resid**2)
        total += h.lambda1 * np.sum(h.w_d[key] * np.abs(state.D[key]))
    for v in data.views:
        total += h.lambda2 * h.w1[v] * np.sum(np.abs(state.U[v]))
    return float(total)


def update_V(state: SolverState, data: DataCollection, h: Hyperparams, view: int, _incidence_map=None):
    inc = _incidence_map if _incidence_map is not None else _incidence(data)
    M = state.U[view] - state.Vslack[view] + state.Lambda1[view] + (h.alpha / h.rho) * state.V[view]
    for key, as_row in inc[view]:
        ZL = state.Z[key] + state.Lambda2[key]
        d = state.D[key]
        if as_row:
            M = M + ZL @ (state.V[key.col] * d)
        else:
            M = M + ZL.T @ (state.V[key.row] * d)
    return project_stiefel(M)


def update_D(state: SolverState, data: DataCollection, h: Hyperparams, key, support=None):
    key = MatrixKey(*key)
    ZL = state.Z[key] + state.Lambda2[key]
    m = np.sum(state.V[key.row] * (ZL @ state.V[key.col]), axis=0)
    d = soft_threshold(m, h.lambda1 * h.w_d[key] / h.rho)
    if support is not None:
        d = np.where(support, d, 0.0)
    return d


def update_U(state: SolverState, data: DataCollection, h: Hyperparams, view: int, support=None):
    M = state.V[view] + state.Vslack[view] - state.Lambda1[view] + (h.alpha / h.rho) * state.U[view]
    w = h.lambda2 * h.w1[view] / h.rho
    return prox_oblique_l1_columns(M, w, support)


def update_delta(state: SolverState, data: DataCollection, h: Hyperparams):
    """Joint closed-form update of the slack ``V'`` and the signal copies ``Z``."""
    rho = h.rho
    Vslack = {
        v: rho / (rho + h.mu * h.w2[v]) * (state.U[v] - state.V[v] + state.Lambda1[v])
        for v in data.views
    }
    Z = {}
    for key, m in data.matrices.items():
        a = state.signal(key) - state.Lambda2[key]
        Z[key] = np.where(m.mask, (rho * a + np.where(m.mask, m.values, 0.0)) / (rho + 1.0), a)
    return Vslack, Z


def update_multipliers(state: SolverState, data: DataCollection, h: Hyperparams):
    Lambda1 = {v: state.Lambda1[v] + (state.U[v] - state.V[v] - state.Vslack[v]) for v in data.views}
    Lambda2 = {
        key: state.Lambda2[key] + (state.Z[key] - state.signal(key)) for key in data.keys
    }
    return Lambda1, Lambda2


def primal_residuals(state: SolverState, data: DataCollection) -> Dict[str, Dict]:
    return {
        "U-V-V'": {
            v: float(np.linalg.norm(state.U[v] - state.V[v] - state.Vslack[v])) for v in data.view_ids
        },
        "Z-VDV'": {key: float(np.linalg.norm(state.Z[key] - state.signal(key))) for key in data.keys},
    }


def check_rho(h: Hyperparams) -> float:
    bound = rho_lower_bound(h.mu, h.w2)
    if not h.rho > bound:
        raise InvalidRho(f"rho={h.rho:g} must exceed the convergence bound {bound:.6g}")
    return bound


def fit(
    data: DataCollection,
    h: Hyperparams,
    init: SolverState,
    d_support: Optional[Mapping[MatrixKey, np.ndarray]] = None,
    u_support: Optional[Mapping[int, np.ndarray]] = None,
) -> FitResult:
    """Run ADMM sweeps from ``init`` until the augmented Lagrangian settles.

    ``d_support`` and ``u_support`` optionally pin singular values and factor
    entries to zero (entries marked ``False`` stay exactly zero).
    """
    h = h.resolve(data, init.k)
    check_rho(h)
    state = init.copy()
    inc = _incidence(data)
    d_support = {MatrixKey(*k): np.asarray(v, bool) for k, v in (d_support or {}).items()}
    u_support = dict(u_support or {})
    views = data.view_ids
    keys = data.keys
    masks = {key: m.mask for key, m in data.matrices.items()}
    xfill = {key: m.filled for key, m in data.matrices.items()}
    rho = h.rho
    shrink = {v: rho / (rho + h.mu * h.w2[v]) for v in views}

    trace = []
    prev = np.inf
    converged = False
    t = 0
    for t in range(1, h.t_max + 1):
        for v in views:
            state.V[v] = update_V(state, data, h, v, inc)
        for key in keys:
            state.D[key] = update_D(state, data, h, key, d_support.get(key))
        for v in views:
            state.U[v] = update_U(state, data, h, v, u_support.get(v))

        total = 0.0
        worst = 0.0
        for v in views:
            vs = shrink[v] * (state.U[v] - state.V[v] + state.Lambda1[v])
            state.Vslack[v] = vs
            r = state.U[v] - state.V[v] - vs
            worst = max(worst, np.vdot(r, r))
            L1 = state.Lambda1[v] + r
            state.Lambda1[v] = L1
            total += h.lambda2 * h.w1[v] * np.abs(state.U[v]).sum()
            total += h.mu / 2 * h.w2[v] * np.vdot(vs, vs)
            total += rho / 2 * (np.vdot(r + L1, r + L1) - np.vdot(L1, L1))
        for key in keys:
            d = state.D[key]
            model = (state.V[key.row] * d) @ state.V[key.col].T
            a = model - state.Lambda2[key]
            mask = masks[key]
            Z = np.where(mask, (rho * a + xfill[key]) / (rho + 1.0), a)
            state.Z[key] = Z
            r = Z - model
            worst = max(worst, np.vdot(r, r))
            L2 = state.Lambda2[key] + r
            state.Lambda2[key] = L2
            res = np.where(mask, xfill[key] - Z, 0.0)
            total += 0.5 * np.vdot(res, res)
            total += h.lambda1 * np.sum(h.w_d[key] * np.abs(d))
            total += rho / 2 * (np.vdot(r + L2, r + L2) - np.vdot(L2, L2))

        total = float(total)
        if not np.isfinite(total):
            raise NonFiniteValue(f"augmented Lagrangian became {total} at sweep {t}")
        trace.append(total)
        change = abs(total - prev)
        settled = change < h.eps_abs or (np.isfinite(prev) and change / abs(prev) < h.eps_rel)
        feasible = h.eps_primal is None or np.sqrt(worst) < h.eps_primal
        if settled and feasible:
            converged = True
            break
        prev = total

    residuals = primal_residuals(state, data)
    logger.debug("fit finished after %d sweeps, converged=%s", t, converged)
    return FitResult(
        state=state,
        lagrangian_trace=np.array(trace),
        primal_residuals=residuals,
        iterations=t,
        converged=converged,
        objective=objective_eq3(state, data, h),
        hyperparams=h,
    )
