"""First-order RDMs and second-order (Spearman) representational similarity."""
import logging
import warnings

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import rankdata

from ..errors import ContractError, DimensionError

log = logging.getLogger(__name__)


def rdm(embeddings):
    """Pairwise Euclidean distance matrix of the rows of ``embeddings``."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DimensionError(f"rdm needs at least two embedding rows, got shape {X.shape}")
    return squareform(pdist(X, metric="euclidean"))


def validate_dissimilarity(D, tol=0.0):
    D = np.asarray(D)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise DimensionError(f"dissimilarity matrix must be square, got {D.shape}")
    if np.abs(D - D.T).max() > tol or np.abs(np.diag(D)).max() > tol or (D < -tol).any():
        raise ContractError("dissimilarity matrix must be symmetric, non-negative, with zero diagonal")
    return D


def upper_triangle(D):
    return np.asarray(D)[np.triu_indices(len(D), k=1)]


def spearman(a, b):
    """Spearman correlation with average ranks for ties; ``nan`` if either input is constant."""
    return _rank_corr(np.stack([rankdata(a), rankdata(b)]))[0, 1]


def _rank_corr(ranks):
    centred = ranks - ranks.mean(axis=1, keepdims=True)
    norms = np.sqrt((centred * centred).sum(axis=1))
    ok = norms > 0
    unit = np.zeros_like(centred)
    unit[ok] = centred[ok] / norms[ok, None]
    R = np.clip(unit @ unit.T, -1.0, 1.0)
    R[~ok, :] = np.nan
    R[:, ~ok] = np.nan
    idx = np.arange(len(R))
    R[idx, idx] = np.where(ok, 1.0, np.nan)
    return R


def second_order_rsa(rdms):
    """Spearman r_s between the upper triangles of every pair of RDMs.

    Constant upper triangles have undefined correlation; their rows and
    columns are NaN and a warning is emitted.
    """
    rdms = [np.asarray(r, dtype=np.float64) for r in rdms]
    sizes = {r.shape for r in rdms}
    if len(sizes) != 1:
        raise DimensionError(f"all RDMs must share one size, got {sorted(sizes)}")
    ranks = np.stack([rankdata(upper_triangle(r)) for r in rdms])
    R = _rank_corr(ranks)
    bad = np.flatnonzero(np.isnan(np.diag(R)))
    if bad.size:
        warnings.warn(f"RDMs {bad.tolist()} have constant upper triangles; correlations reported as missing")
    return R
