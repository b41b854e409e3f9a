"""Neural-network primitives on :class:`Tensor`, each with an explicit gradient rule."""
import numpy as np

from ..errors import ContractError, DimensionError, EmptySupportError, UninitializedStatisticsError
from . import kernels
from .tensor import Tensor, record

SOFTPLUS_THRESHOLD = 30.0


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation (no kernel flip) of an NCHW batch."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects rank-4 input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    Cout, Cin, kh, kw = weight.shape
    if C != Cin:
        raise DimensionError(f"conv2d: input axis 1 has {C} channels but weight axis 1 expects {Cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel axes 2,3 must be odd, got {kh}x{kw}")
    if bias is not None and bias.shape != (Cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match weight axis 0 ({Cout})")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"conv2d: spatial axes 2,3 ({H}x{W}) too small for a {kh}x{kw} kernel")

    cols = kernels.im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(Cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2))

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, Cout)
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(np.ascontiguousarray(gmat @ wmat), B, C, H, W, kh, kw, stride, padding)
        gw = (gmat.T @ cols).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, bw, "conv2d")


class BatchNormState:
    """Running per-channel statistics owned by one batch-norm layer."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.initialized = False
        self.momentum = momentum
        self.eps = eps

    def update(self, batch_mean, batch_var_unbiased):
        if not self.initialized:
            self.running_mean = batch_mean.copy()
            self.running_var = batch_var_unbiased.copy()
            self.initialized = True
            return
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * batch_mean
        self.running_var = (1 - m) * self.running_var + m * batch_var_unbiased


def batchnorm(x, gamma, beta, state, training):
    """Per-channel normalisation over every axis except 1 (works for [B,C] and [B,C,H,W])."""
    if x.ndim not in (2, 4):
        raise DimensionError(f"batchnorm expects rank 2 or 4, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batchnorm: affine shapes {gamma.shape}/{beta.shape} vs axis 1 = {C}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, C) if x.ndim == 2 else (1, C, 1, 1)
    n = x.size // C
    gd, bd = gamma.data.reshape(bshape), beta.data.reshape(bshape)

    if training:
        if n < 2:
            raise ContractError(f"batchnorm in train mode needs at least 2 values per channel, got {n}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.update(mu, var * n / (n - 1))
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)

        def bw(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * gd
            gx = (inv.reshape(bshape) / n) * (
                n * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
            )
            return gx, dgamma, dbeta

    else:
        if not state.initialized:
            raise UninitializedStatisticsError("batchnorm evaluated before any train-mode statistics were gathered")
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean.reshape(bshape)) * inv.reshape(bshape)

        def bw(g):
            return g * gd * inv.reshape(bshape), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return record(gd * xhat + bd, (x, gamma, beta), bw, "batchnorm")


def batchnorm2d(x, gamma, beta, state, training):
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects [B,C,H,W], got {x.shape}")
    return batchnorm(x, gamma, beta, state, training)


def batchnorm1d(x, gamma, beta, state, training):
    if x.ndim != 2:
        raise DimensionError(f"batchnorm1d expects [B,C], got {x.shape}")
    return batchnorm(x, gamma, beta, state, training)


def relu(x):
    mask = x.data > 0
    return record(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def _softplus(v):
    out = np.empty_like(v)
    hi = v > SOFTPLUS_THRESHOLD
    lo = v < -SOFTPLUS_THRESHOLD
    mid = ~(hi | lo)
    out[hi] = v[hi]
    out[lo] = np.exp(v[lo])
    out[mid] = np.log1p(np.exp(v[mid]))
    return out


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x):
    """ln(1 + e^x), evaluated without overflow for large |x|."""
    sig = _sigmoid(x.data)
    return record(_softplus(x.data), (x,), lambda g: (g * sig,), "softplus")


def _masked_rows(v):
    v2 = v.reshape(1, -1) if v.ndim == 1 else v
    mask = np.isneginf(v2)
    if mask.all(axis=1).any():
        raise EmptySupportError("softmax over a row whose entries are all -inf")
    finite_max = np.where(mask, -np.inf, v2).max(axis=1, keepdims=True)
    shifted = np.where(mask, -np.inf, v2 - finite_max)
    e = np.exp(shifted)
    return v2, mask, shifted, e


def softmax_masked(x):
    """Row-wise softmax where -inf entries receive exactly zero probability."""
    _, mask, _, e = _masked_rows(x.data)
    s = e / e.sum(axis=1, keepdims=True)
    s[mask] = 0.0
    shape = x.shape

    def bw(g):
        g2 = g.reshape(s.shape)
        return ((s * (g2 - (g2 * s).sum(axis=1, keepdims=True))).reshape(shape),)

    return record(s.reshape(shape), (x,), bw, "softmax_masked")


def log_softmax_masked(x):
    """Row-wise log-softmax; masked (-inf) entries stay -inf and pass no gradient."""
    _, mask, shifted, e = _masked_rows(x.data)
    z = e.sum(axis=1, keepdims=True)
    out = shifted - np.log(z)
    s = e / z
    shape = x.shape

    def bw(g):
        g2 = np.where(mask, 0.0, g.reshape(s.shape))
        gx = g2 - s * g2.sum(axis=1, keepdims=True)
        gx[mask] = 0.0
        return (gx.reshape(shape),)

    return record(out.reshape(shape), (x,), bw, "log_softmax_masked")


def topk_indices(scores, k):
    """Indices of the k largest entries per row; exact ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= scores.shape[-1]:
        raise ContractError(f"top-k needs 1 <= k <= {scores.shape[-1]}, got k={k}")
    order = np.argsort(-scores, axis=-1, kind="stable")
    return np.sort(order[..., :k], axis=-1)


def keep_topk(x, k):
    """Keep the k largest entries of each row, set the rest to -inf."""
    idx = topk_indices(x.data, k)
    keep = np.zeros(x.shape, dtype=bool)
    np.put_along_axis(keep, idx, True, axis=-1)
    out = np.where(keep, x.data, -np.inf)
    return record(out, (x,), lambda g: (g * keep,), "keep_topk")


def gap(x):
    """Global average pooling [B,C,H,W] -> [B,C]."""
    if x.ndim != 4:
        raise DimensionError(f"gap expects [B,C,H,W], got {x.shape}")
    shape = x.shape
    hw = shape[2] * shape[3]
    return record(x.data.mean(axis=(2, 3)), (x,), lambda g: (np.broadcast_to(g[:, :, None, None] / hw, shape).copy(),), "gap")


def linear(x, weight, bias=None):
    """x @ W^T + b for x [B,n], W [m,n], b [m]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} axis 1 vs weight {weight.shape} axis 1")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} vs weight axis 0 = {weight.shape[0]}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        grads = (g @ wd, g.T @ xd)
        return grads if bias is None else grads + (g.sum(axis=0),)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out, inputs, bw, "linear")


def l2norm(x, axis=-1):
    """Euclidean norm along ``axis`` (all entries for a vector)."""
    n = np.sqrt((x.data * x.data).sum(axis=axis))
    safe = np.where(n > 0, n, 1.0)

    def bw(g):
        return (np.expand_dims(g / safe, axis) * x.data,)

    return record(n, (x,), bw, "l2norm")


def normalize_rows(x):
    """Scale each row of a matrix to unit Euclidean norm."""
    if x.ndim != 2:
        raise DimensionError(f"normalize_rows expects a matrix, got {x.shape}")
    n = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if (n == 0).any():
        bad = np.flatnonzero(n[:, 0] == 0).tolist()
        raise ContractError(f"cannot normalise zero-norm rows {bad}")
    u = x.data / n

    def bw(g):
        return ((g - u * (g * u).sum(axis=1, keepdims=True)) / n,)

    return record(u, (x,), bw, "normalize_rows")


def as_param(data):
    return Tensor(data, requires_grad=True)
