# Compiled cyclic coordinate descent for the non-negative Lasso.
# Must stay numerically identical to _pydescent.cd_nonneg.


def cd_nonneg(const double[:, ::1] xt, double[::1] resid, double[::1] beta,
              const double[::1] sq, double lam, double tol, int max_sweeps):
    """Sweep coordinates in place until the largest update falls below ``tol``.

    ``xt`` holds centred predictor columns as rows ([D, n]); ``resid`` is
    y - X beta and is kept current. Returns (sweeps, last max change).
    """
    cdef Py_ssize_t D = xt.shape[0], n = xt.shape[1]
    cdef Py_ssize_t j, i
    cdef int sweep = 0
    cdef double rho, old, new, delta, max_change = 0.0, dot
    while sweep < max_sweeps:
        sweep += 1
        max_change = 0.0
        for j in range(D):
            if sq[j] <= 0.0:
                continue
            old = beta[j]
            dot = 0.0
            for i in range(n):
                dot += xt[j, i] * resid[i]
            rho = dot / n + sq[j] * old
            new = rho - lam
            if new < 0.0:
                new = 0.0
            new = new / sq[j]
            delta = new - old
            if delta != 0.0:
                for i in range(n):
                    resid[i] -= xt[j, i] * delta
                beta[j] = new
                if delta < 0.0:
                    delta = -delta
                if delta > max_change:
                    max_change = delta
        if max_change < tol:
            break
    return sweep, max_change
