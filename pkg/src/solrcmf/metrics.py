"""Summaries of fitted models.

Functions accept either a :class:`~solrcmf.admm.FitResult` or a bare
:class:`~solrcmf.admm.SolverState`.  Data norms are taken over observed
entries only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Tuple, Union

import networkx as nx
import numpy as np

from .admm import FitResult, SolverState
from .datamodel import DataCollection, MatrixKey
from .errors import NoSharedView, ZeroDataNorm

MATCH_THRESHOLD = 0.75

FitLike = Union[FitResult, SolverState]


def _state(fit: FitLike) -> SolverState:
    return fit.state if isinstance(fit, FitResult) else fit


def _data_norm2(data: DataCollection, key) -> float:
    norm2 = data[key].observed_norm2()
    if norm2 == 0.0:
        raise ZeroDataNorm(f"matrix {MatrixKey(*key)} has zero observed norm")
    return norm2


def shares_view(a, b) -> bool:
    a, b = MatrixKey(*a), MatrixKey(*b)
    return bool({a.row, a.col} & {b.row, b.col})


def proportion_of_variation(fit: FitLike, data: DataCollection, key) -> float:
    """``sum(d^2) / ||X||_F^2``, the share of the data captured by the fit."""
    key = MatrixKey(*key)
    d = _state(fit).D[key]
    return float(np.sum(d**2) / _data_norm2(data, key))


def directed_r2_values(d_dep, d_pred, norm2: float) -> float:
    """``sum_l J_l d_dep_l^2 / norm2`` with ``J`` the nonzero pattern of ``d_pred``."""
    d_dep = np.asarray(d_dep, dtype=float)
    active = np.asarray(d_pred) != 0
    return float(np.sum(d_dep[active] ** 2) / norm2)


def directed_r2(fit: FitLike, data: DataCollection, dep, pred) -> float:
    """Fraction of the dependent matrix explained by the predictor's signal.

    The signal of ``pred`` is used as a linear predictor of the signal of
    ``dep`` through a view the two matrices share; because factors are
    orthogonal this reduces to summing ``d_dep^2`` over factors active in
    ``pred``.
    """
    dep, pred = MatrixKey(*dep), MatrixKey(*pred)
    if not shares_view(dep, pred):
        raise NoSharedView(f"matrices {dep} and {pred} have no view in common")
    state = _state(fit)
    return directed_r2_values(state.D[dep], state.D[pred], _data_norm2(data, dep))


def _oriented(Z: np.ndarray, key: MatrixKey, view: int) -> np.ndarray:
    return Z if key.row == view else Z.T


def directed_r2_regression(fit: FitLike, data: DataCollection, dep, pred) -> float:
    """Directed R^2 computed by explicit least-squares regression.

    The dependent signal is projected onto the span of the predictor signal
    along the shared view using a pseudo-inverse.  Slow; mainly a reference
    for :func:`directed_r2`.
    """
    dep, pred = MatrixKey(*dep), MatrixKey(*pred)
    shared = sorted({dep.row, dep.col} & {pred.row, pred.col})
    if not shared:
        raise NoSharedView(f"matrices {dep} and {pred} have no view in common")
    view = shared[0]
    state = _state(fit)
    Zd = _oriented(state.signal(dep), dep, view)
    Zp = _oriented(state.signal(pred), pred, view)
    B = np.linalg.pinv(Zp) @ Zd
    predicted = Zp @ B
    return float(np.sum(predicted**2) / _data_norm2(data, dep))


def estimate_noise(fit: FitLike, data: DataCollection, key) -> Tuple[float, float]:
    """Residual variance over observed entries and the implied signal-to-noise ratio."""
    key = MatrixKey(*key)
    m = data[key]
    Zhat = _state(fit).signal(key)
    resid = (m.values - Zhat)[m.mask]
    sigma2 = float(resid @ resid / m.n_obs)
    p_i, p_j = m.shape
    signal2 = float(np.sum(Zhat**2))
    snr = signal2 / (p_i * p_j * sigma2) if sigma2 > 0 else np.inf
    return sigma2, float(snr)


def estimated_rank(fit: FitLike, key) -> int:
    return int(np.count_nonzero(_state(fit).D[MatrixKey(*key)]))


def shared_rank(fit: FitLike, key_a, key_b) -> int:
    D = _state(fit).D
    return int(np.count_nonzero((D[MatrixKey(*key_a)] != 0) & (D[MatrixKey(*key_b)] != 0)))


@dataclass
class VariationReport:
    proportions: Dict[MatrixKey, float]
    directed: Dict[Tuple[MatrixKey, MatrixKey], float]
    sigma2_hat: Dict[MatrixKey, float]
    snr_hat: Dict[MatrixKey, float]


def variation_report(fit: FitLike, data: DataCollection) -> VariationReport:
    """Proportions of variation, directed R^2 for every (dep, pred) pair sharing a view, and noise."""
    keys = data.keys
    props = {key: proportion_of_variation(fit, data, key) for key in keys}
    directed = {
        (dep, pred): directed_r2(fit, data, dep, pred)
        for dep in keys
        for pred in keys
        if shares_view(dep, pred)
    }
    noise = {key: estimate_noise(fit, data, key) for key in keys}
    return VariationReport(
        props,
        directed,
        {k: v[0] for k, v in noise.items()},
        {k: v[1] for k, v in noise.items()},
    )


@dataclass
class FactorMatching:
    """Matched column pairs ``(estimated index, truth index, signed dot product)``."""

    pairs: List[Tuple[int, int, float]]
    threshold: float

    def truth_to_estimate(self) -> Dict[int, int]:
        return {j: i for i, j, _ in self.pairs}

    def __len__(self):
        return len(self.pairs)


def _unit_columns(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    return np.divide(A, norms, out=np.zeros_like(A), where=norms > 0)


def factor_similarity(est, truth) -> np.ndarray:
    """Dot products between normalized estimated and truth columns."""
    return _unit_columns(est).T @ _unit_columns(truth)


def match_factors(est, truth, threshold: float = MATCH_THRESHOLD, optimal: bool = False) -> FactorMatching:
    """Pair estimated and true factors by absolute scalar product.

    Greedy: repeatedly take the largest remaining ``|dot|`` (ties by lower
    indices), using every column at most once, and stop below ``threshold``.
    With ``optimal=True`` the pairing maximizes the total ``|dot|`` instead
    and pairs below the threshold are dropped afterwards.
    """
    S = factor_similarity(est, truth)
    A = np.abs(S)
    pairs = []
    if optimal:
        from scipy.optimize import linear_sum_assignment

        rows, cols = linear_sum_assignment(-A)
        pairs = [(int(i), int(j), float(S[i, j])) for i, j in zip(rows, cols) if A[i, j] >= threshold]
    else:
        flat = np.argsort(-A, axis=None, kind="stable")
        used_i, used_j = set(), set()
        for idx in flat:
            i, j = np.unravel_index(idx, A.shape)
            if A[i, j] < threshold:
                break
            if i in used_i or j in used_j:
                continue
            used_i.add(i)
            used_j.add(j)
            pairs.append((int(i), int(j), float(S[i, j])))
    pairs.sort(key=lambda t: t[1])
    return FactorMatching(pairs, threshold)


@dataclass
class Confusion:
    estimate: int
    truth: int
    tpr: float
    fpr: float


def sparsity_confusion(est_support, truth_support, matching: FactorMatching) -> List[Confusion]:
    """True and false positive rates of the nonzero pattern of each matched factor."""
    est_support = np.asarray(est_support, dtype=bool)
    truth_support = np.asarray(truth_support, dtype=bool)
    out = []
    for i, j, _ in matching.pairs:
        e, t = est_support[:, i], truth_support[:, j]
        tp = np.sum(e & t)
        fp = np.sum(e & ~t)
        pos, neg = np.sum(t), np.sum(~t)
        tpr = float(tp / pos) if pos else float("nan")
        fpr = float(fp / neg) if neg else float("nan")
        out.append(Confusion(i, j, tpr, fpr))
    return out


def structure_graph(fit: FitLike, data: DataCollection) -> nx.DiGraph:
    """Directed graph with an edge ``pred -> dep`` for each positive directed R^2.

    Matrices are nodes (labelled with their names); self-pairs are left out.
    """
    g = nx.DiGraph()
    for key in data.keys:
        g.add_node(key, name=data.name(key))
    for dep in data.keys:
        for pred in data.keys:
            if dep == pred or not shares_view(dep, pred):
                continue
            w = directed_r2(fit, data, dep, pred)
            if w > 0:
                g.add_edge(pred, dep, weight=w)
    return g


def edge_list(graph: nx.DiGraph, data: Optional[DataCollection] = None) -> List[Tuple[str, str, float]]:
    """``(dep, pred, weight)`` rows sorted by dependent then predictor."""
    name = (lambda k: data.name(k)) if data is not None else str
    rows = [(dep, pred, d["weight"]) for pred, dep, d in graph.edges(data=True)]
    rows.sort(key=lambda r: (r[0], r[1]))
    return [(name(dep), name(pred), float(w)) for dep, pred, w in rows]


def canonicalize_signs(fit: FitLike):
    """Flip factor signs so that as many singular values as possible are non-negative.

    For each factor, matrices in which it is active are visited in sorted key
    order.  A spanning forest over the views is grown from the smallest key:
    its row view keeps its sign and every newly reached view is flipped when
    needed to make the connecting singular value non-negative.  Singular
    values on edges that close a cycle may stay negative.  Flips negate whole
    columns of ``V``, ``U``, ``V'`` and ``Lambda1`` together with the matching
    singular values, which leaves every ``V_i D V_j^T`` unchanged bit for bit.
    Returns an object of the same type as ``fit``.
    """
    state = _state(fit).copy()
    keys = sorted(state.D)
    for c in range(state.k):
        active = [key for key in keys if state.D[key][c] != 0]
        visited = set()
        remaining = list(active)
        while remaining:
            visited.add(remaining[0].row)
            grew = True
            while grew:
                grew = False
                for key in list(remaining):
                    ends = (key.row in visited, key.col in visited)
                    if ends == (True, True):
                        remaining.remove(key)
                    elif any(ends):
                        new = key.col if ends[0] else key.row
                        if state.D[key][c] < 0:
                            _flip(state, new, c)
                        visited.add(new)
                        remaining.remove(key)
                        grew = True
    if isinstance(fit, FitResult):
        return replace(fit, state=state)
    return state


def _flip(state: SolverState, view: int, c: int):
    for block in (state.V, state.U, state.Vslack, state.Lambda1):
        block[view][:, c] = -block[view][:, c]
    for key in state.D:
        if view in (key.row, key.col):
            state.D[key][c] = -state.D[key][c]
