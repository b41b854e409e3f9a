"""Pairwise linear separability of classes in an expert's readout space."""
import itertools

import numpy as np

from ..errors import ContractError, ConvergenceError
from ..pipeline.splits import stratified_kfold_split


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _objective(Xa, y, theta, C):
    t = Xa @ theta
    # log(1 + e^t) - y t, stable
    loss = np.logaddexp(0.0, t) - y * t
    return C * float(loss.sum()) + 0.5 * float(theta[:-1] @ theta[:-1])


def logistic_fit(X, y, C=1.0, tol=1e-6, max_iter=100):
    """L2-penalised binary logistic regression (unpenalised intercept) by damped Newton steps.

    Minimises ``C * sum(logloss) + 0.5 ||w||^2``; returns ``(w, b)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    reg = np.ones(d + 1)
    reg[-1] = 0.0
    obj = _objective(Xa, y, theta, C)
    for _ in range(max_iter):
        p = _sigmoid(Xa @ theta)
        grad = C * Xa.T @ (p - y) + reg * theta
        if np.linalg.norm(grad) < tol:
            return theta[:-1], float(theta[-1])
        H = C * (Xa.T * (p * (1 - p))) @ Xa + np.diag(reg) + 1e-12 * np.eye(d + 1)
        step = np.linalg.solve(H, grad)
        if grad @ step < 1e-10 * max(1.0, abs(obj)):
            # objective changes are below rounding; a full Newton step is safe this close to the optimum
            theta = theta - step
            obj = _objective(Xa, y, theta, C)
            continue
        t = 1.0
        while t > 1e-10:
            cand = theta - t * step
            new = _objective(Xa, y, cand, C)
            if new <= obj:
                break
            t *= 0.5
        theta, obj = cand, new
    p = _sigmoid(Xa @ theta)
    gnorm = np.linalg.norm(C * Xa.T @ (p - y) + reg * theta)
    if gnorm < tol:
        return theta[:-1], float(theta[-1])
    raise ConvergenceError(f"logistic regression stopped after {max_iter} Newton steps with gradient norm {gnorm:.3e}")


def balanced_accuracy(y, pred):
    y = np.asarray(y)
    pred = np.asarray(pred)
    recalls = [float((pred[y == c] == c).mean()) for c in np.unique(y)]
    return float(np.mean(recalls))


def pair_balanced_accuracy(X, y, folds=5, seed=0, C=1.0):
    """Mean balanced accuracy over stratified folds for a two-class problem."""
    scores = []
    for tr, te in stratified_kfold_split(y, folds, seed):
        w, b = logistic_fit(X[tr], y[tr], C)
        scores.append(balanced_accuracy(y[te], (X[te] @ w + b > 0).astype(int)))
    return float(np.mean(scores))


def separability_matrix(features, labels, folds=5, seed=0, C=1.0, min_per_class=10):
    """Class x class balanced accuracies (NaN diagonal) for any feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    keep = labels >= 0
    features, labels = features[keep], labels[keep]
    classes, counts = np.unique(labels, return_counts=True)
    for c, n in zip(classes, counts):
        if n < folds:
            raise ContractError(f"class {c} has {n} samples, fewer than the {folds} folds")
    usable = classes[counts >= min_per_class]
    if len(usable) < 2:
        raise ContractError(f"need at least 2 classes with >= {min_per_class} samples each")
    M = np.full((len(usable), len(usable)), np.nan)
    for (i, a), (j, b) in itertools.combinations(enumerate(usable), 2):
        mask = (labels == a) | (labels == b)
        acc = pair_balanced_accuracy(features[mask], (labels[mask] == b).astype(int), folds, seed, C)
        M[i, j] = M[j, i] = acc
    return usable, M


def pairwise_separability(probes, expert, labels=None, folds=5, seed=0, C=1.0):
    """Separability of every class pair in one expert's forced readouts."""
    labels = probes.labels if labels is None else np.asarray(labels)
    return separability_matrix(probes.readouts[:, expert, :], labels, folds, seed, C)
