"""Expert tuning: most exciting inputs and gating-versus-readout comparison."""
import numpy as np

from ..errors import DegenerateInputError


def mei_topn(probes, expert, n):
    """Image ids with the largest readout norm for ``expert``; ties broken by lower id."""
    n = min(n, len(probes))
    order = np.lexsort((probes.ids, -probes.norms[:, expert]))
    return probes.ids[order[:n]]


def minmax(x, what="series"):
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        raise DegenerateInputError(f"{what} is constant; min-max normalisation undefined")
    return (x - lo) / (hi - lo)


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / denom) if denom > 0 else float("nan")


def gating_vs_readout(probes, expert):
    """Min-max normalised gating logits and readout norms of one expert, with Pearson r."""
    gate = minmax(probes.logits[:, expert], f"gating logits of expert {expert}")
    readout = minmax(probes.norms[:, expert], f"readout norms of expert {expert}")
    return {
        "expert": int(expert),
        "gating": gate,
        "readout": readout,
        "labels": probes.labels.copy(),
        "pearson_r": pearson(gate, readout),
    }
