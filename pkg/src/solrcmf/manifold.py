"""Closed-form proximal maps and projections used by the ADMM block updates."""

from __future__ import annotations

import enum
import warnings

import numpy as np


class LargePenaltyWarning(RuntimeWarning):
    """The l1 weight on a factor column is so large that it collapses to a unit vector."""


class ProxCase(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    CORNER = "corner"
    ZERO_INPUT = "zero_input"


def soft_threshold(x, beta):
    """``sign(x) * max(|x| - beta, 0)``, elementwise."""
    return np.sign(x) * np.maximum(np.abs(x) - beta, 0.0)


def project_stiefel(M):
    """Closest matrix with orthonormal columns to ``M`` in Frobenius norm.

    Solves ``argmin_V 1/2 ||V - M||_F^2`` subject to ``V^T V = I`` via the SVD
    ``M = B1 S B2^T``; the minimizer is ``B1 B2^T``.  It is unique when all
    singular values of ``M`` are positive.  Otherwise the columns belonging to
    zero singular values are whatever the LAPACK driver returns.
    """
    M = np.asarray(M, dtype=float)
    if M.shape[1] > M.shape[0]:
        raise ValueError(f"cannot project a {M.shape} matrix onto the Stiefel manifold")
    B1, _, B2t = np.linalg.svd(M, full_matrices=False)
    return B1 @ B2t


def prox_diag_l1(M, weights, beta):
    """Prox of ``beta * sum_l w_l |D_ll|`` restricted to diagonal matrices.

    Off-diagonal entries of ``M`` are dropped and the diagonal is soft
    thresholded.  Accepts either a square matrix or its diagonal as a vector.
    Returns the diagonal of the result.
    """
    M = np.asarray(M, dtype=float)
    diag = np.diag(M) if M.ndim == 2 else M
    return soft_threshold(diag, beta * np.asarray(weights, dtype=float))


def prox_oblique_l1(m, w):
    """Minimize ``-u^T m + w ||u||_1`` over unit vectors ``u``.

    Returns ``(u, case)``.  When ``max |m_i| > w`` the minimizer is unique and
    equals the normalized soft-thresholded ``m``.  In all other cases a signed
    standard basis vector is returned, picking the first index of largest
    magnitude (``e_1`` for ``m = 0``).
    """
    m = np.asarray(m, dtype=float)
    if w < 0:
        raise ValueError("w must be non-negative")
    top = np.max(np.abs(m)) if m.size else 0.0
    if top == 0.0:
        u = np.zeros_like(m)
        u[0] = 1.0
        return u, ProxCase.ZERO_INPUT
    if top > w:
        # rescale first so tiny inputs do not underflow in the norm
        st = soft_threshold(m, w) / top
        return st / np.linalg.norm(st), ProxCase.INTERIOR
    j0 = int(np.argmax(np.abs(m)))
    u = np.zeros_like(m)
    u[j0] = np.sign(m[j0])
    return u, (ProxCase.BOUNDARY if top == w else ProxCase.CORNER)


def prox_oblique_l1_columns(M, w, support=None):
    """Column-wise :func:`prox_oblique_l1` on a matrix.

    ``support`` is an optional boolean mask; entries outside it are pinned to
    zero and the prox is taken over the remaining coordinates of each column.
    Columns whose support is empty are treated as unconstrained.
    """
    M = np.asarray(M, dtype=float)
    p = M.shape[0]
    if w * np.sqrt(p) >= 1.0:
        warnings.warn(
            f"l1 threshold {w:.3g} times sqrt({p}) is >= 1; the sparsity penalty is likely too large",
            LargePenaltyWarning,
            stacklevel=3,
        )
    if support is not None:
        support = np.asarray(support, dtype=bool)
        free = ~support.any(axis=0)
        support = support | free[None, :]
        M = np.where(support, M, 0.0)

    absM = np.abs(M)
    top = absM.max(axis=0)
    st = np.sign(M) * np.maximum(absM - w, 0.0) / np.where(top > 0, top, 1.0)
    norms = np.sqrt(np.einsum("ij,ij->j", st, st))
    out = np.zeros_like(M)
    interior = top > w
    out[:, interior] = st[:, interior] / norms[interior]
    for col in np.flatnonzero(~interior):
        j0 = int(np.argmax(absM[:, col]))
        s = np.sign(M[j0, col])
        if support is not None and not support[j0, col]:
            j0 = int(np.flatnonzero(support[:, col])[0])
        out[j0, col] = s if s != 0 else 1.0
    return out
