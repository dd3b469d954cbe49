"""Batched least-squares pieces shared by the scan and model search.

Everything works on centred columns: once the intercept is projected out,
the residual sum of squares of a design is RSS0 minus the squared length of
the phenotype's projection onto an orthonormal basis of the design. One
basis per position serves every time point through a single matrix product.
"""
from __future__ import annotations

import numpy as np

LOD_CAP = 300.0
# a column whose residual norm falls below REL_DROP x its original norm is collinear
REL_DROP = 1e-7
ABS_DROP = 1e-10
# RSS1 below PERFECT_FIT x RSS0 is a numerically exact fit
PERFECT_FIT = 1e-12
# RSS0 below ZERO_VAR x sum(y^2) means a constant phenotype column
ZERO_VAR = 1e-20


def center(X: np.ndarray, axis: int = 0) -> np.ndarray:
    return X - X.mean(axis=axis, keepdims=True)


def orthonormalize(X: np.ndarray, ref_norms: np.ndarray | None = None):
    """Modified Gram-Schmidt over the last axis of ``X`` (..., n, d).

    Columns that are (numerically) in the span of earlier columns are
    dropped: their basis vector is all zeros and their diagonal entry in R is
    zero. ``ref_norms`` (..., d) are the norms used for the relative drop
    test; by default the norms of ``X`` itself.

    Returns ``Q`` (..., n, d) and ``R`` (..., d, d) with ``X ~= Q @ R`` on the
    kept columns.
    """
    X = np.asarray(X, float)
    d = X.shape[-1]
    Q = np.array(X, copy=True)
    R = np.zeros(X.shape[:-2] + (d, d))
    if ref_norms is None:
        ref_norms = np.linalg.norm(X, axis=-2)
    for j in range(d):
        v = Q[..., :, j]
        for i in range(j):
            qi = Q[..., :, i]
            rij = np.einsum("...n,...n->...", qi, v)
            R[..., i, j] = rij
            v = v - qi * rij[..., None]
        nrm = np.linalg.norm(v, axis=-1)
        keep = (nrm > REL_DROP * ref_norms[..., j]) & (nrm > ABS_DROP)
        safe = np.where(keep, nrm, 1.0)
        Q[..., :, j] = np.where(keep[..., None], v / safe[..., None], 0.0)
        R[..., j, j] = np.where(keep, nrm, 0.0)
    return Q, R


def lod_from_rss(rss_ref: np.ndarray, rss_new: np.ndarray, n: int, sumsq: np.ndarray) -> np.ndarray:
    """Per-time LOD = (n/2) log10(rss_ref / rss_new), with the edge rules.

    ``sumsq`` is the per-time uncentred sum of squares of the phenotype and
    sets the scale for detecting a constant column (LOD 0). Fits with
    ``rss_new`` numerically zero get ``LOD_CAP``.
    """
    rss_ref = np.asarray(rss_ref, float)
    rss_new = np.asarray(rss_new, float)
    flat = rss_ref <= ZERO_VAR * sumsq
    perfect = rss_new <= PERFECT_FIT * rss_ref
    with np.errstate(divide="ignore", invalid="ignore"):
        lod = 0.5 * n * np.log10(rss_ref / np.where(perfect, 1.0, rss_new))
    lod = np.clip(np.where(perfect, LOD_CAP, lod), 0.0, LOD_CAP)
    return np.where(flat, 0.0, lod)
