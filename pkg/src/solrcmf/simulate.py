"""Synthetic ground truth with dense or sparse orthogonal factors.

A scenario lists the views, the matrix keys with their true singular value
vectors, a factor sparsity level and a target signal-to-noise ratio.  Each
view receives an orthonormal factor matrix; every matrix is the signal
``V_i diag(d) V_j^T`` plus i.i.d. Gaussian noise with variance
``||signal||_F^2 / (snr * p_i * p_j)``.

Sparse factors keep the ``ceil((1 - s) p)`` largest-magnitude entries of each
column of a Gaussian draw and are then orthogonalized column by column
without touching the zero pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from .datamodel import DataCollection, MatrixKey, ObservedMatrix, build_collection
from .errors import DegenerateSupport, InvalidScenario, RankTooLarge

DEGENERATE_TOL = 1e-12
# entries below this are rounding residue of the orthogonalization, not support
SUPPORT_TOL = 1e-10

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_dense_orthogonal(p: int, k: int, seed: SeedLike = None) -> np.ndarray:
    """Orthonormal ``p x k`` matrix from the QR factorization of a Gaussian draw.

    Columns of ``Q`` are multiplied by the signs of ``diag(R)`` so that the
    result is uniformly distributed on the Stiefel manifold.
    """
    if k > p:
        raise RankTooLarge(f"cannot draw {k} orthonormal columns in dimension {p}")
    A = _rng(seed).standard_normal((p, k))
    Q, R = np.linalg.qr(A)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def n_kept(p: int, sparsity: float) -> int:
    """Number of nonzero entries per column at the given zero fraction."""
    # rounding guards against e.g. (1 - 0.7) * 10 = 3.0000000000000004
    return int(math.ceil(round((1.0 - sparsity) * p, 9)))


def truncate_columns(A: np.ndarray, sparsity: float) -> np.ndarray:
    """Zero all but the ``ceil((1 - s) p)`` largest-magnitude entries per column.

    Ties are resolved in favour of the lower row index.
    """
    p = A.shape[0]
    keep = n_kept(p, sparsity)
    order = np.argsort(-np.abs(A), axis=0, kind="stable")
    mask = np.zeros(A.shape, dtype=bool)
    np.put_along_axis(mask, order[:keep], True, axis=0)
    return np.where(mask, A, 0.0)


def orthogonalize_preserving_zeros(A: np.ndarray) -> np.ndarray:
    """Orthonormalize the columns of ``A`` without filling any zero entries.

    Column ``i`` is replaced by the component of ``a_i`` restricted to its
    support that is orthogonal to the earlier factors restricted to the same
    support.  Since ``a_i`` vanishes off its support this makes it orthogonal
    to every earlier factor.  The projection is applied twice for accuracy.
    """
    p, k = A.shape
    V = np.zeros((p, k))
    for i in range(k):
        a = A[:, i]
        support = np.flatnonzero(a)
        x = a[support].astype(float)
        if i > 0 and support.size:
            B = V[support, :i]
            # orthonormal basis of span{v_j restricted to the support}
            Ub, sb, _ = np.linalg.svd(B, full_matrices=False)
            rank_tol = max(B.shape) * np.finfo(float).eps * (sb[0] if sb.size else 0.0)
            Ub = Ub[:, sb > rank_tol]
            for _ in range(2):
                x = x - Ub @ (Ub.T @ x)
        norm = np.linalg.norm(x)
        if norm < DEGENERATE_TOL:
            raise DegenerateSupport(f"column {i} vanishes after orthogonalization on its support")
        V[support, i] = x / norm
    return V


def simulate_sparse_orthogonal(p: int, k: int, sparsity: float, seed: SeedLike = None) -> np.ndarray:
    """Orthonormal ``p x k`` matrix with a fraction ``sparsity`` of zeros per column."""
    if not 0.0 <= sparsity < 1.0:
        raise InvalidScenario(f"sparsity must lie in [0, 1), got {sparsity}")
    if k > p:
        raise RankTooLarge(f"cannot draw {k} orthonormal columns in dimension {p}")
    if sparsity == 0.0:
        return simulate_dense_orthogonal(p, k, seed)
    if n_kept(p, sparsity) < k:
        raise InvalidScenario(
            f"{n_kept(p, sparsity)} nonzeros per column cannot hold {k} orthogonal factors"
        )
    A = truncate_columns(_rng(seed).standard_normal((p, k)), sparsity)
    return orthogonalize_preserving_zeros(A)


@dataclass
class Scenario:
    """Layout, true singular values and noise level of a simulation."""

    views: Dict[int, int]
    D_truth: Dict[MatrixKey, np.ndarray]
    sparsity: float = 0.0
    snr: float = 0.5
    seed: int = 0
    matrix_names: Dict[MatrixKey, str] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        self.D_truth = {MatrixKey(*k): np.asarray(v, dtype=float) for k, v in self.D_truth.items()}
        self.matrix_names = {MatrixKey(*k): v for k, v in self.matrix_names.items()}
        lengths = {v.size for v in self.D_truth.values()}
        if len(lengths) != 1:
            raise InvalidScenario("all singular value vectors must have the same length")
        if not self.snr > 0:
            raise InvalidScenario(f"snr must be positive, got {self.snr}")
        if not 0.0 <= self.sparsity < 1.0:
            raise InvalidScenario(f"sparsity must lie in [0, 1), got {self.sparsity}")
        for key in self.D_truth:
            for v in (key.row, key.col):
                if v not in self.views:
                    raise InvalidScenario(f"matrix {key} uses undeclared view {v}")

    @property
    def keys(self) -> List[MatrixKey]:
        return list(self.D_truth)

    @property
    def k(self) -> int:
        return next(iter(self.D_truth.values())).size


@dataclass
class GroundTruth:
    scenario: Scenario
    V_truth: Dict[int, np.ndarray]
    data: DataCollection
    signals: Dict[MatrixKey, np.ndarray]
    sigma2: Dict[MatrixKey, float]

    @property
    def D_truth(self) -> Dict[MatrixKey, np.ndarray]:
        return self.scenario.D_truth

    @property
    def u_support(self) -> Dict[int, np.ndarray]:
        return {v: np.abs(V) > SUPPORT_TOL for v, V in self.V_truth.items()}

    @property
    def d_support(self) -> Dict[MatrixKey, np.ndarray]:
        return {key: d != 0 for key, d in self.D_truth.items()}


def build_scenario(sc: Scenario) -> GroundTruth:
    """Draw factors and noise for a scenario.

    Random streams are split from ``sc.seed``: one per view (in ascending
    order) for the factors and one per matrix for the noise.  ``snr = inf``
    yields noiseless data.
    """
    views = sorted(sc.views)
    keys = sc.keys
    root = np.random.SeedSequence(sc.seed)
    view_seeds, noise_seeds = root.spawn(2)
    view_streams = dict(zip(views, view_seeds.spawn(len(views))))
    noise_streams = dict(zip(keys, noise_seeds.spawn(len(keys))))

    k = sc.k
    V = {
        v: simulate_sparse_orthogonal(sc.views[v], k, sc.sparsity, view_streams[v]) for v in views
    }
    signals, sigma2, entries = {}, {}, {}
    for key in keys:
        Z = (V[key.row] * sc.D_truth[key]) @ V[key.col].T
        p_i, p_j = Z.shape
        s2 = 0.0 if np.isinf(sc.snr) else float(np.sum(Z**2) / (sc.snr * p_i * p_j))
        X = Z + np.sqrt(s2) * np.random.default_rng(noise_streams[key]).standard_normal(Z.shape)
        signals[key] = Z
        sigma2[key] = s2
        entries[key] = ObservedMatrix.from_array(key, X)
    data = build_collection(sc.views.items(), entries.values(), matrix_names=sc.matrix_names)
    return GroundTruth(sc, V, data, signals, sigma2)


SIM1_D = {
    (1, 2, 1): (3.0, 3.5, 0.0, 0.0, 4.0),
    (1, 3, 1): (2.5, 2.75, 3.0, 0.0, 0.0),
    (1, 3, 2): (2.5, 0.0, 3.5, 3.0, 0.0),
    (4, 3, 1): (3.0, 0.0, 4.5, 3.5, 0.0),
    (1, 4, 1): (0.0, 0.0, 3.5, 0.0, 4.0),
}
SIM1_NAMES = dict(zip(SIM1_D, "ABCDE"))
SIM1_DIMS = {1: 50, 2: 25, 3: 35, 4: 30}

SIM2_D = {
    (1, 2, 1): (0.0, 3.5, 0.0, 0.0, 4.0),
    (1, 3, 1): (3.1, 3.15, 3.05, 0.0, 0.0),
    (1, 3, 2): (3.1, 3.15, 3.05, 0.0, 0.0),
    (4, 3, 1): (0.0, 0.0, 3.5, 4.0, 0.0),
}
SIM2_DIMS = {1: 100, 2: 50, 3: 100, 4: 50}

BUILTIN = ("sim1", "sim2")


def builtin_scenario(
    name: str,
    seed: int = 0,
    sparsity: Optional[float] = None,
    snr: Optional[float] = None,
    dim_scale: float = 1.0,
) -> Scenario:
    """The two reference simulations.

    ``sim1``: four views, five matrices A to E, 75% sparse factors, SNR 0.5.
    ``sim2``: four views, an L-shaped layout with a two-layer centre and nearly
    equal singular values in the centre; default sparsity 0.75.
    ``dim_scale`` shrinks or grows all view dimensions (rounded).
    """
    if name == "sim1":
        dims, D, names, s = SIM1_DIMS, SIM1_D, SIM1_NAMES, 0.75
    elif name == "sim2":
        dims, D, names, s = SIM2_DIMS, SIM2_D, {}, 0.75
    else:
        raise InvalidScenario(f"unknown scenario {name!r}; built-in scenarios are {', '.join(BUILTIN)}")
    dims = {v: max(1, int(round(p * dim_scale))) for v, p in dims.items()}
    return Scenario(
        views=dims,
        D_truth={MatrixKey(*k): np.array(v) for k, v in D.items()},
        sparsity=s if sparsity is None else float(sparsity),
        snr=0.5 if snr is None else float(snr),
        seed=seed,
        matrix_names=names,
        name=name,
    )


def scenario_from_dict(spec: Mapping, seed: int = 0) -> Scenario:
    """Build a scenario from its JSON form.

    Expected keys: ``views`` (list of ``{"id", "dim"}``), ``matrices`` (list of
    ``{"row", "col", "layer", "d", "name"}``), and optionally ``sparsity``,
    ``snr`` (a number or the string ``"inf"``) and ``seed``.
    """
    try:
        views = {int(v["id"]): int(v["dim"]) for v in spec["views"]}
        D, names = {}, {}
        for m in spec["matrices"]:
            key = MatrixKey(int(m["row"]), int(m["col"]), int(m.get("layer", 1)))
            D[key] = np.asarray(m["d"], dtype=float)
            if "name" in m:
                names[key] = str(m["name"])
        snr = float(spec.get("snr", 0.5))
        return Scenario(
            views=views,
            D_truth=D,
            sparsity=float(spec.get("sparsity", 0.0)),
            snr=snr,
            seed=int(spec.get("seed", seed)),
            matrix_names=names,
            name=str(spec.get("name", "custom")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidScenario):
            raise
        raise InvalidScenario(f"malformed scenario description: {exc}") from exc
