import numpy as np

from ..errors import ConfigError


def kfold_split(n, k, seed=0):
    """Shuffled k-fold partition of ``range(n)``; fold sizes differ by at most one."""
    if k < 2:
        raise ConfigError(f"k-fold needs k >= 2, got {k}")
    if k > n:
        raise ConfigError(f"cannot split {n} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


def stratified_kfold_split(labels, k, seed=0):
    """k folds with each class spread as evenly as possible across folds."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    assign = np.empty(len(labels), dtype=np.intp)
    offset = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        assign[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return [(np.flatnonzero(assign != i), np.flatnonzero(assign == i)) for i in range(k)]


def holdout_split(n, fraction, seed=0):
    """(train_idx, val_idx) with ``round(fraction * n)`` validation items."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(fraction * n))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])
