"""Average-linkage clustering with silhouette-based selection, and classical MDS."""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from ..errors import ContractError, DegenerateInputError

SINGLETON_CONVENTION = "silhouette of an item in a singleton cluster is defined as 0"


def silhouette_samples(D, labels):
    """Per-item silhouette from a precomputed distance matrix."""
    D = np.asarray(D, dtype=np.float64)
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    n = len(labels)
    s = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == c].mean() for c in clusters if c != labels[i])
        denom = max(a, b)
        s[i] = 0.0 if denom == 0 else (b - a) / denom
    return s


def silhouette_score(D, labels):
    return float(silhouette_samples(D, labels).mean())


def _canonical(labels):
    """Relabel clusters 0.. in order of first appearance."""
    mapping = {}
    return np.array([mapping.setdefault(l, len(mapping)) for l in labels])


def average_linkage(D, n_clusters):
    Z = linkage(squareform(np.asarray(D, dtype=np.float64), checks=False), method="average")
    return _canonical(fcluster(Z, n_clusters, criterion="maxclust"))


@dataclass
class StabilityReport:
    similarity: np.ndarray
    distance: np.ndarray
    counts: list
    silhouettes: list
    chosen: int
    labels: np.ndarray
    coords: np.ndarray = None
    exemplars: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    items: list = field(default_factory=list)  # (model, expert) per row
    meis: list = field(default_factory=list)

    @property
    def best_silhouette(self):
        return self.silhouettes[self.counts.index(self.chosen)] if self.chosen in self.counts else float("nan")


def cluster_stability(similarity, min_clusters=2, max_clusters=15):
    """Pick the cluster count in [min, max] maximising the mean silhouette of distance 1 - r_s."""
    S = np.asarray(similarity, dtype=np.float64)
    n = len(S)
    if n < 3 or n < min_clusters:
        raise ContractError(f"cluster selection needs at least {max(3, min_clusters)} items, got {n}")
    D = 1.0 - S
    D = np.where(np.isnan(D), 1.0, D)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    D = np.clip(D, 0.0, None)
    notes = [SINGLETON_CONVENTION]
    if np.all(D == 0):
        warnings.warn("all items are identical; reporting a single cluster")
        notes.append("degenerate: all items identical, single cluster")
        return StabilityReport(S, D, [], [], 1, np.zeros(n, dtype=int), None, notes=notes)
    counts = list(range(min_clusters, min(max_clusters, n - 1) + 1))
    sils = []
    assignments = {}
    for k in counts:
        labels = average_linkage(D, k)
        assignments[k] = labels
        sils.append(silhouette_score(D, labels) if len(np.unique(labels)) > 1 else float("-inf"))
    best = counts[int(np.argmax(sils))]
    coords = mds_2d(D) if n >= 3 else None
    return StabilityReport(S, D, counts, sils, best, assignments[best], coords, notes=notes)


def mds_2d(distances, dims=2):
    """Classical MDS: double-centre the squared distances and keep the top eigenpairs."""
    D = np.asarray(distances, dtype=np.float64)
    n = len(D)
    if n < 3:
        raise ContractError(f"MDS needs at least 3 items, got {n}")
    if np.all(D == 0):
        raise DegenerateInputError("all distances are zero; MDS has no configuration to recover")
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D * D) @ J
    B = 0.5 * (B + B.T)
    vals, vecs = np.linalg.eigh(B)
    # round-off negatives on flat configurations are not worth a warning
    tol = 1e-9 * np.abs(vals).max()
    if vals.min() < -tol:
        neg = -vals[vals < -tol].sum() / np.abs(vals).sum()
        warnings.warn(f"distances are not Euclidean: negative eigenvalues carry {neg:.1%} of the spectrum; clamped to 0 in MDS")
    order = np.argsort(vals)[::-1][:dims]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    # fix eigenvector signs so the output is deterministic
    pivot = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    return vecs * np.sqrt(vals)
