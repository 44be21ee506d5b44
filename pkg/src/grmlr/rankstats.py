"""Spearman rank correlation with deterministic tie handling.

This is the statistical primitive under both adjacency sources of the
ecological knowledge graph. Ties receive average ranks (the mean of the
positions they occupy), and the correlation is the Pearson correlation of
the two rank vectors. The popular 6*sum(d^2) shortcut is deliberately not
used because it is invalid under ties, and ties are essentially guaranteed
at the sample sizes this package targets.

Convention: if either input is constant, the correlation is defined as 0.
A flat vector carries no rank information, and 0 translates into "no graph
edge" downstream, which is the conservative choice.
"""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatch, TooFewSamples


def average_ranks(values: np.ndarray) -> np.ndarray:
    """Return 1-based average ranks of ``values``.

    Tied entries share the mean of the positions they would occupy in a
    sorted ordering, so the rank sum is always n*(n+1)/2.

    Parameters
    ----------
    values : array_like, shape (n,)
        Values to rank, smallest first.

    Returns
    -------
    numpy.ndarray
        Real-valued ranks in the original element order.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    order = np.argsort(v, kind="stable")
    ranks = np.empty(n, dtype=float)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and v[order[j + 1]] == v[order[i]]:
            j += 1
        # positions i+1 .. j+1 share the mean rank
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_matrix(values: np.ndarray) -> np.ndarray:
    """Column-wise :func:`average_ranks` for a 2-D array."""
    m = np.asarray(values, dtype=float)
    out = np.empty_like(m)
    for j in range(m.shape[1]):
        out[:, j] = average_ranks(m[:, j])
    return out


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rank correlation between two equal-length vectors.

    Parameters
    ----------
    a, b : array_like, shape (n,)
        Paired observations, n >= 2.

    Returns
    -------
    float
        Correlation in [-1, 1]; 0 if either input is constant.

    Raises
    ------
    LengthMismatch
        If the vectors differ in length.
    TooFewSamples
        If fewer than 2 observations are given.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"paired vectors of length {a.shape[0]} and {b.shape[0]}")
    if a.shape[0] < 2:
        raise TooFewSamples("Spearman correlation needs at least 2 observations")
    ra = average_ranks(a)
    rb = average_ranks(b)
    return _pearson_or_zero(ra, rb)


def spearman_matrix(columns: np.ndarray) -> np.ndarray:
    """Pairwise Spearman correlations between the columns of a matrix.

    Equivalent to calling :func:`spearman` on every column pair, but ranks
    each column once. Constant columns yield zero rows/columns; the
    diagonal is 1 except for constant columns, which get 0 everywhere.
    """
    m = np.asarray(columns, dtype=float)
    if m.shape[0] < 2:
        raise TooFewSamples("Spearman correlation needs at least 2 observations")
    r = rank_matrix(m)
    r = r - r.mean(axis=0, keepdims=True)
    norms = np.sqrt((r * r).sum(axis=0))
    ok = norms > 0.0
    safe = np.where(ok, norms, 1.0)
    r = r / safe
    corr = r.T @ r
    corr[~ok, :] = 0.0
    corr[:, ~ok] = 0.0
    np.fill_diagonal(corr, np.where(ok, 1.0, 0.0))
    return snap_to_unit(np.clip(corr, -1.0, 1.0))


def spearman_cross(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Spearman correlations between every column of ``x`` and of ``y``.

    Returns a (x_cols, y_cols) matrix; entries involving a constant column
    are 0 by the package convention.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise LengthMismatch(f"row counts differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise TooFewSamples("Spearman correlation needs at least 2 observations")
    rx = rank_matrix(x)
    ry = rank_matrix(y)
    rx = rx - rx.mean(axis=0, keepdims=True)
    ry = ry - ry.mean(axis=0, keepdims=True)
    nx = np.sqrt((rx * rx).sum(axis=0))
    ny = np.sqrt((ry * ry).sum(axis=0))
    okx = nx > 0.0
    oky = ny > 0.0
    rx = rx / np.where(okx, nx, 1.0)
    ry = ry / np.where(oky, ny, 1.0)
    corr = rx.T @ ry
    corr[~okx, :] = 0.0
    corr[:, ~oky] = 0.0
    return snap_to_unit(np.clip(corr, -1.0, 1.0))


def _pearson_or_zero(ra: np.ndarray, rb: np.ndarray) -> float:
    da = ra - ra.mean()
    db = rb - rb.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        return 0.0
    r = float(da @ db) / np.sqrt(va * vb)
    return float(snap_to_unit(np.clip(r, -1.0, 1.0)))


def snap_to_unit(values: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Round magnitudes within ``tol`` of 1 to exactly +/-1.

    Correlations and cosines are bounded by 1; exact collinearity can land
    one ulp short after normalization, which would otherwise fail a
    threshold of exactly 1.
    """
    return np.where(np.abs(np.abs(values) - 1.0) <= tol, np.sign(values), values)
