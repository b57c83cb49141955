"""Views, observed matrices, preprocessing and cross-validation folds.

A data collection is a set of views (entity sets with a dimension) and a set of
matrices, each relating a row view to a column view.  Several matrices may
relate the same pair of views; they are told apart by a layer index, so every
matrix is addressed by a ``MatrixKey(row, col, layer)``.

Matrices are stored densely together with a boolean mask of observed entries.
Values at unobserved positions are kept as given (they may be NaN) and are
never read by any computation; use :attr:`ObservedMatrix.filled` for a copy
with zeros in unobserved positions.

Normalization targets a Frobenius norm of ``n_obs / (p_i * p_j)`` over the
observed entries.  For fully observed matrices this is the familiar unit
Frobenius norm; with missing data the target shrinks with the fraction of
observed entries so that fitted singular values stay within [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateKey,
    EmptyRowOrColumn,
    NoConvergence,
    SelfRelation,
    TooFewEntries,
    ZeroMatrix,
)

BICENTER_TOL = 1e-8
BICENTER_MAX_SWEEPS = 100


class MatrixKey(NamedTuple):
    row: int
    col: int
    layer: int = 1

    def __str__(self):
        return f"({self.row},{self.col},{self.layer})"

    @classmethod
    def parse(cls, text: str) -> "MatrixKey":
        parts = [int(p) for p in text.strip().strip("()").split(",")]
        return cls(*parts)


@dataclass(frozen=True)
class ObservedMatrix:
    key: MatrixKey
    values: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_array(cls, key, values, mask=None) -> "ObservedMatrix":
        """Build from an array where NaN marks a missing entry."""
        values = np.array(values, dtype=float)
        if values.ndim != 2:
            raise DimensionMismatch(f"matrix {key} must be two-dimensional")
        if mask is None:
            mask = np.isfinite(values)
        mask = np.array(mask, dtype=bool)
        if mask.shape != values.shape:
            raise DimensionMismatch(f"mask shape {mask.shape} differs from values {values.shape}")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError(f"matrix {key} has non-finite observed values")
        return cls(MatrixKey(*key), values, mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def n_obs(self) -> int:
        return int(self.mask.sum())

    @property
    def fully_observed(self) -> bool:
        return bool(self.mask.all())

    @property
    def filled(self) -> np.ndarray:
        return np.where(self.mask, self.values, 0.0)

    def observed_norm2(self) -> float:
        x = self.values[self.mask]
        return float(x @ x)

    def with_mask(self, mask) -> "ObservedMatrix":
        return replace(self, mask=np.asarray(mask, dtype=bool))


@dataclass(frozen=True)
class PreprocessRecord:
    row_means: np.ndarray
    col_means: np.ndarray
    scale: float


@dataclass(frozen=True)
class DataCollection:
    views: Dict[int, int]
    matrices: Dict[MatrixKey, ObservedMatrix]
    view_names: Dict[int, str] = field(default_factory=dict)
    matrix_names: Dict[MatrixKey, str] = field(default_factory=dict)
    preprocessing_log: Dict[MatrixKey, PreprocessRecord] = field(default_factory=dict)

    @property
    def keys(self) -> List[MatrixKey]:
        return list(self.matrices)

    @property
    def view_ids(self) -> List[int]:
        return sorted(self.views)

    def __getitem__(self, key) -> ObservedMatrix:
        return self.matrices[MatrixKey(*key)]

    def __len__(self):
        return len(self.matrices)

    def name(self, key) -> str:
        key = MatrixKey(*key)
        return self.matrix_names.get(key, str(key))

    def with_masks(self, masks: Mapping[MatrixKey, np.ndarray]) -> "DataCollection":
        """Copy of the collection with the given masks replacing the current ones."""
        matrices = {
            key: (m.with_mask(masks[key]) if key in masks else m) for key, m in self.matrices.items()
        }
        return replace(self, matrices=matrices)

    def with_matrices(self, matrices: Mapping[MatrixKey, ObservedMatrix], log=None) -> "DataCollection":
        return replace(
            self,
            matrices=dict(matrices),
            preprocessing_log=dict(log) if log is not None else self.preprocessing_log,
        )


def build_collection(
    views: Iterable[Tuple[int, int]],
    entries: Iterable[ObservedMatrix],
    view_names: Optional[Mapping[int, str]] = None,
    matrix_names: Optional[Mapping[MatrixKey, str]] = None,
) -> DataCollection:
    """Validate views and matrices and assemble a :class:`DataCollection`.

    Matrices keep the order in which they are given; the solver sweeps over
    them in that order.
    """
    view_dims: Dict[int, int] = {}
    for vid, dim in views:
        vid, dim = int(vid), int(dim)
        if vid in view_dims:
            raise DuplicateKey(f"view {vid} listed twice")
        if dim < 1:
            raise DimensionMismatch(f"view {vid} must have dimension >= 1, got {dim}")
        view_dims[vid] = dim

    matrices: Dict[MatrixKey, ObservedMatrix] = {}
    for entry in entries:
        key = entry.key
        if key.row == key.col:
            raise SelfRelation(f"matrix {key} relates view {key.row} to itself")
        if key.layer < 1:
            raise DimensionMismatch(f"matrix {key} has layer < 1")
        for vid in (key.row, key.col):
            if vid not in view_dims:
                raise DimensionMismatch(f"matrix {key} references unknown view {vid}")
        expected = (view_dims[key.row], view_dims[key.col])
        if entry.shape != expected:
            raise DimensionMismatch(f"matrix {key} has shape {entry.shape}, expected {expected}")
        if key in matrices:
            raise DuplicateKey(f"matrix {key} listed twice")
        matrices[key] = entry

    names = {MatrixKey(*k): v for k, v in (matrix_names or {}).items()}
    return DataCollection(view_dims, matrices, dict(view_names or {}), names)


def _masked_means(x, mask, axis):
    counts = mask.sum(axis=axis)
    return np.where(mask, x, 0.0).sum(axis=axis) / counts


def bicenter(matrix: ObservedMatrix, tol=BICENTER_TOL, max_sweeps=BICENTER_MAX_SWEEPS):
    """Remove row and column means computed over observed entries.

    Row and column means are subtracted alternately until the largest absolute
    observed-entry mean drops below ``tol``.  A fully observed matrix is done
    after one sweep, which equals the closed-form double centering.

    Returns
    -------
    (ObservedMatrix, row_means, col_means)
        The accumulated means can be added back to invert the transform.
    """
    mask = matrix.mask
    if np.any(mask.sum(axis=1) == 0) or np.any(mask.sum(axis=0) == 0):
        raise EmptyRowOrColumn(f"matrix {matrix.key} has a row or column without observed entries")
    x = matrix.filled
    row_total = np.zeros(x.shape[0])
    col_total = np.zeros(x.shape[1])
    for _ in range(max_sweeps):
        r = _masked_means(x, mask, 1)
        x = np.where(mask, x - r[:, None], 0.0)
        row_total += r
        c = _masked_means(x, mask, 0)
        x = np.where(mask, x - c[None, :], 0.0)
        col_total += c
        worst = max(np.abs(_masked_means(x, mask, 1)).max(), np.abs(_masked_means(x, mask, 0)).max())
        if worst < tol:
            break
    else:
        raise NoConvergence(f"bicentering of {matrix.key} did not converge in {max_sweeps} sweeps")
    values = np.where(mask, x, matrix.values)
    return replace(matrix, values=values), row_total, col_total


def normalize(matrix: ObservedMatrix):
    """Scale so the observed-entry Frobenius norm equals ``n_obs / (p_i p_j)``.

    Returns the scaled matrix and the factor that was applied.
    """
    norm = math.sqrt(matrix.observed_norm2())
    if norm == 0.0:
        raise ZeroMatrix(f"matrix {matrix.key} is zero on all observed entries")
    p_i, p_j = matrix.shape
    scale = (matrix.n_obs / (p_i * p_j)) / norm
    values = np.where(matrix.mask, matrix.values * scale, matrix.values)
    return replace(matrix, values=values), scale


def unnormalize(matrix: ObservedMatrix, scale: float) -> ObservedMatrix:
    values = np.where(matrix.mask, matrix.values / scale, matrix.values)
    return replace(matrix, values=values)


def preprocess(data: DataCollection, center=True, scale=True) -> DataCollection:
    """Bicenter and normalize every matrix, recording the transforms."""
    out = {}
    log = {}
    for key, m in data.matrices.items():
        rows = np.zeros(m.shape[0])
        cols = np.zeros(m.shape[1])
        factor = 1.0
        if center:
            m, rows, cols = bicenter(m)
        if scale:
            m, factor = normalize(m)
        out[key] = m
        log[key] = PreprocessRecord(rows, cols, factor)
    return data.with_matrices(out, log)


@dataclass(frozen=True)
class FoldAssignment:
    """Fold labels per matrix; 0 marks unobserved entries, 1..K observed ones."""

    labels: Dict[MatrixKey, np.ndarray]
    n_folds: int
    seed: int

    def held_out(self, key, fold: int) -> np.ndarray:
        return self.labels[MatrixKey(*key)] == fold

    def training_masks(self, data: DataCollection, fold: int) -> Dict[MatrixKey, np.ndarray]:
        return {key: m.mask & (self.labels[key] != fold) for key, m in data.matrices.items()}


def make_folds(data: DataCollection, n_folds: int, seed: int) -> FoldAssignment:
    """Randomly split the observed entries of each matrix into ``n_folds`` folds.

    Fold sizes within a matrix differ by at most one.  No attempt is made to
    keep an observed entry in every row and column of every training split.
    """
    if n_folds < 2:
        raise TooFewEntries("at least two folds are required")
    rng = np.random.default_rng(seed)
    labels = {}
    for key, m in data.matrices.items():
        obs = np.flatnonzero(m.mask)
        if obs.size < n_folds:
            raise TooFewEntries(
                f"matrix {key} has {obs.size} observed entries, fewer than {n_folds} folds"
            )
        perm = rng.permutation(obs.size)
        lab = np.zeros(m.mask.size, dtype=np.int64)
        lab[obs[perm]] = np.arange(obs.size) % n_folds + 1
        labels[key] = lab.reshape(m.shape)
    return FoldAssignment(labels, n_folds, seed)
