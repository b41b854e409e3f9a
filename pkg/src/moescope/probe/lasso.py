"""Non-negative Lasso by cyclic coordinate descent, with nested cross-validation."""
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError
from ..pipeline.splits import kfold_split
from . import _pydescent

try:
    if os.environ.get("MOESCOPE_PURE_PYTHON"):
        raise ImportError
    from ._cdescent import cd_nonneg
except ImportError:  # extension not built
    cd_nonneg = _pydescent.cd_nonneg
BACKEND = "python" if cd_nonneg is _pydescent.cd_nonneg else "cython"

log = logging.getLogger(__name__)

DEFAULT_GRID = np.logspace(-4, 0, 40)


@dataclass
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float
    sweeps: int


def lasso_objective(X, y, coef, intercept, lam):
    r = y - X @ coef - intercept
    return 0.5 * float(r @ r) / len(y) + lam * float(np.abs(coef).sum())


def nn_lasso(X, y, lam, tol=1e-7, max_sweeps=10000, warm_start=None):
    """Minimise (1/2n)||y - X b - c||^2 + lam ||b||_1 subject to b >= 0.

    The intercept ``c`` is free and profiled out by centring. Converged when
    the largest coordinate update in a sweep is below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    xm = X.mean(axis=0)
    ym = y.mean()
    xt = np.ascontiguousarray((X - xm).T)
    sq = (xt * xt).sum(axis=1) / n
    beta = np.zeros(d) if warm_start is None else np.array(warm_start, dtype=np.float64)
    resid = np.ascontiguousarray((y - ym) - xt.T @ beta)
    sweeps, change = cd_nonneg(xt, resid, beta, sq, float(lam), float(tol), int(max_sweeps))
    if change >= tol:
        raise ConvergenceError(
            f"non-negative Lasso did not converge in {max_sweeps} sweeps (lam={lam}): last max update {change:.3e}, "
            f"residual RMS {np.sqrt(np.mean(resid**2)):.3e}"
        )
    return LassoFit(beta, float(ym - xm @ beta), float(lam), int(sweeps))


def r2_score(y, pred):
    """1 - SS_res/SS_tot; ``nan`` when y is constant."""
    y = np.asarray(y, dtype=np.float64)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return float("nan")
    return 1.0 - float(((y - pred) ** 2).sum()) / ss_tot


class _Standardizer:
    def __init__(self, X):
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)
        self.constant = sd == 0

    def __call__(self, X):
        Z = (X - self.mean) / self.scale
        Z[:, self.constant] = 0.0
        return Z

    def to_original(self, fit):
        coef = np.where(self.constant, 0.0, fit.coef / self.scale)
        return coef, fit.intercept - float(self.mean @ coef)


def _path(X, y, grid):
    """Fits along ``grid`` (any order) with warm starts from larger to smaller lambda."""
    std = _Standardizer(X)
    Z = std(X)
    fits = {}
    beta = None
    for lam in sorted(grid, reverse=True):
        fit = nn_lasso(Z, y, lam, warm_start=beta)
        beta = fit.coef
        fits[lam] = std.to_original(fit)
    return fits


def select_lambda(X, y, grid, k=5, seed=0):
    """Lambda with the best mean validation r^2 over k folds (ties go to the larger lambda)."""
    scores = {lam: [] for lam in grid}
    for tr, va in kfold_split(len(y), k, seed):
        if np.ptp(y[tr]) == 0:
            continue
        for lam, (coef, b) in _path(X[tr], y[tr], grid).items():
            r2 = r2_score(y[va], X[va] @ coef + b)
            if np.isfinite(r2):
                scores[lam].append(r2)
    means = {lam: np.mean(v) if v else -np.inf for lam, v in scores.items()}
    return max(sorted(grid, reverse=True), key=lambda lam: means[lam])


@dataclass
class LassoReport:
    r2_mean: float
    r2_std: float
    r2_folds: list
    lam: float
    coef: np.ndarray
    intercept: float
    top: list  # (dimension name, weight), descending
    flagged_folds: list = field(default_factory=list)
    fold_lambdas: list = field(default_factory=list)


def top_dimensions(coef, names, m):
    order = np.lexsort((np.arange(len(coef)), -coef))
    return [(names[i], float(coef[i])) for i in order[:m] if coef[i] > 0]


def nn_lasso_nested_cv(X, y, names=None, outer_k=5, inner_k=5, grid=None, seed=0, top_m=3):
    """Nested-CV estimate of held-out r^2 plus a full-data refit at the selected lambda.

    Predictors are standardised inside every training fold using that fold's
    statistics; reported coefficients are on the original column scale.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    grid = [float(g) for g in grid]
    names = names or [f"dim_{j}" for j in range(X.shape[1])]
    r2s, flagged, lams = [], [], []
    for i, (tr, te) in enumerate(kfold_split(len(y), outer_k, seed)):
        if np.ptp(y[te]) == 0 or np.ptp(y[tr]) == 0:
            log.warning("outer fold %d has a constant target; excluded from the r^2 mean", i)
            flagged.append(i)
            continue
        lam = select_lambda(X[tr], y[tr], grid, inner_k, seed + 1 + i)
        coef, b = _path(X[tr], y[tr], [lam])[lam]
        r2s.append(r2_score(y[te], X[te] @ coef + b))
        lams.append(lam)
    lam = select_lambda(X, y, grid, inner_k, seed)
    coef, b = _path(X, y, [lam])[lam]
    return LassoReport(
        r2_mean=float(np.mean(r2s)) if r2s else float("nan"),
        r2_std=float(np.std(r2s)) if r2s else float("nan"),
        r2_folds=[float(r) for r in r2s],
        lam=lam,
        coef=coef,
        intercept=float(b),
        top=top_dimensions(coef, names, top_m),
        flagged_folds=flagged,
        fold_lambdas=lams,
    )
