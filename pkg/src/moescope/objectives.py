"""Training objectives: NT-Xent contrastive loss and the importance (CV^2) penalty."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DegenerateInputError, DimensionError
from .ndtensor import (
    Tensor,
    add,
    as_tensor,
    div,
    expand,
    gather,
    log_softmax_masked,
    mask_fill,
    matmul,
    mean,
    mul,
    neg,
    normalize_rows,
    square,
    sub,
    transpose,
    tsum,
)


@dataclass
class LossConfig:
    temperature: float = 0.5
    w_importance: float = 0.1

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.w_importance < 0:
            raise ConfigError(f"w_importance must be non-negative, got {self.w_importance}")


def positive_index(n_rows):
    """Partner row of each anchor when rows 2j and 2j+1 are views of origin j."""
    return np.arange(n_rows) ^ 1


def nt_xent(projected, temperature=0.5):
    """Mean NT-Xent loss over all 2N anchors of a [2N, d] batch of projections.

    Similarities are cosines of L2-normalised rows divided by the temperature;
    each anchor's own similarity is excluded from the denominator.
    """
    v = as_tensor(projected)
    if v.ndim != 2 or v.shape[0] % 2:
        raise DimensionError(f"nt_xent expects [2N, d] with paired rows, got {v.shape}")
    n2 = v.shape[0]
    if n2 < 4:
        raise ContractError(f"nt_xent needs N >= 2 origins, got {n2 // 2}")
    u = normalize_rows(v)
    sim = mul(matmul(u, transpose(u)), 1.0 / temperature)
    logp = log_softmax_masked(mask_fill(sim, np.eye(n2, dtype=bool), -np.inf))
    pos = gather(logp, np.arange(n2), positive_index(n2))
    return neg(mean(pos))


def importance(weights):
    """Per-expert total gate weight I_i = sum over the batch of g_i."""
    return tsum(as_tensor(weights), axis=0)


def importance_loss(I, w_importance=0.1):
    """w * (std(I) / mean(I))^2 with the population standard deviation."""
    I = as_tensor(I)
    if I.ndim != 1:
        raise DimensionError(f"importance vector must be 1-D, got {I.shape}")
    m = mean(I)
    if not m.item() > 0:
        raise DegenerateInputError(f"importance has non-positive mean {m.item()}; nothing was routed")
    centred = sub(I, expand(m, I.shape))
    var = mean(square(centred))
    return mul(div(var, square(m)), float(w_importance))


def total_loss(projected, weights_or_importance, cfg=None):
    """NT-Xent plus importance penalty.

    Returns ``(total, parts)`` where ``parts`` holds the ``nt_xent`` and
    ``importance`` Tensors. The second argument may be the [B,E] gate weights
    or an already-accumulated importance vector.
    """
    cfg = cfg or LossConfig()
    g = as_tensor(weights_or_importance)
    I = importance(g) if g.ndim == 2 else g
    contrastive = nt_xent(projected, cfg.temperature)
    imp = importance_loss(I, cfg.w_importance)
    return add(contrastive, imp), {"nt_xent": contrastive, "importance": imp}


def loss_log_line(epoch, step, parts, total):
    """CSV line ``epoch,step,nt_xent,importance,total``."""
    vals = [float(parts["nt_xent"].item() if isinstance(parts["nt_xent"], Tensor) else parts["nt_xent"]),
            float(parts["importance"].item() if isinstance(parts["importance"], Tensor) else parts["importance"]),
            float(total.item() if isinstance(total, Tensor) else total)]
    return f"{epoch},{step}," + ",".join(repr(v) for v in vals)
