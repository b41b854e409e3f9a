"""Independent reference implementations used as test oracles."""
import numpy as np

from moescope.ndtensor import Tensor


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` with respect to array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def check_grads(build, arrays, h=1e-5):
    """Compare analytic and numeric gradients of ``build(*tensors) -> scalar Tensor``.

    Returns the largest relative error across all inputs.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    build(*tensors).backward()
    worst = 0.0
    for t in tensors:
        num = numeric_grad(lambda: build(*[Tensor(s.data) for s in tensors]).item(), t.data, h)
        worst = max(worst, rel_error(t.grad, num))
    return worst


def conv2d_direct(x, w, b, stride, pad):
    """Loop-based cross-correlation."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for i in range(Ho):
        for j in range(Wo):
            patch = xp[:, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    return out + (0 if b is None else b[None, :, None, None])


def lasso_objective(X, y, beta, b, lam):
    r = y - X @ beta - b
    return r @ r / (2 * len(y)) + lam * np.abs(beta).sum()


def projected_gradient_lasso(X, y, lam, iters=200000, tol=1e-13):
    """Brute-force solver: projected gradient on (beta >= 0, free intercept) with a 1/L step."""
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    L = np.linalg.eigvalsh(A.T @ A / n).max()
    theta = np.zeros(d + 1)
    for _ in range(iters):
        grad = A.T @ (A @ theta - y) / n
        grad[:d] += lam
        new = theta - grad / L
        new[:d] = np.maximum(new[:d], 0.0)
        if np.max(np.abs(new - theta)) < tol:
            theta = new
            break
        theta = new
    return theta[:d], theta[d]


def spearman_textbook(a, b):
    """rho = 1 - 6 sum d^2 / (n (n^2 - 1)), valid without ties."""
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    n = len(a)
    d = ra - rb
    return 1 - 6 * (d * d).sum() / (n * (n * n - 1))
