"""Numpy coordinate-descent sweep for the non-negative Lasso (fallback for ``_cdescent``)."""


def cd_nonneg(xt, resid, beta, sq, lam, tol, max_sweeps):
    D, n = xt.shape
    sweep = 0
    max_change = 0.0
    while sweep < max_sweeps:
        sweep += 1
        max_change = 0.0
        for j in range(D):
            if sq[j] <= 0.0:
                continue
            old = beta[j]
            rho = float(xt[j] @ resid) / n + sq[j] * old
            new = max(rho - lam, 0.0) / sq[j]
            delta = new - old
            if delta != 0.0:
                resid -= xt[j] * delta
                beta[j] = new
                max_change = max(max_change, abs(delta))
        if max_change < tol:
            break
    return sweep, max_change
