"""Noisy top-k gating: perturb, keep the k best scores, renormalise with a masked softmax."""
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..ndtensor import Tensor, add, keep_topk, mul, no_grad, softmax_masked, softplus, topk_indices


@dataclass
class GateDecision:
    logits: np.ndarray  # clean gating logits, [E]
    scores: np.ndarray  # noisy scores H, [E]
    selected: np.ndarray  # sorted expert indices, [k]
    weights: np.ndarray  # [E], zero off-support

    @property
    def support(self):
        return set(int(i) for i in self.selected)


def gate_noise(seed, step, batch, num_experts):
    """Standard normal draws, one per (image, expert), from a counter-based stream.

    The same (seed, step) pair always yields the same matrix, which keeps
    training runs and finite-difference checks reproducible.
    """
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(step) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((batch, num_experts))


def noisy_topk(clean, noise_logits, k, noise=None):
    """Differentiable gate on [B,E] logit tensors.

    Returns ``(scores, weights, selected)`` where ``scores`` is the (possibly
    noisy) Tensor H, ``weights`` the sparse softmax Tensor and ``selected`` the
    [B,k] array of chosen experts.
    """
    if not 1 <= k <= clean.shape[1]:
        raise ContractError(f"top-k gate needs 1 <= k <= E={clean.shape[1]}, got k={k}")
    scores = clean
    if noise is not None:
        if noise_logits is None:
            raise ContractError("noisy gating requires the noise-branch logits")
        scores = add(clean, mul(Tensor(noise), softplus(noise_logits)))
    selected = topk_indices(scores.data, k)
    weights = softmax_masked(keep_topk(scores, k))
    return scores, weights, selected


def noisy_topk_gate(clean_logits, noise_logits, k, mode="eval", rng=None):
    """Gate a single logit vector (or a batch of them) without recording gradients.

    In ``"train"`` mode each score gets ``N(0,1) * softplus(noise_logit)`` added;
    ``rng`` is a :class:`numpy.random.Generator` supplying the normal draws.
    """
    lg = np.atleast_2d(np.asarray(clean_logits, dtype=np.float64))
    ln = None if noise_logits is None else np.atleast_2d(np.asarray(noise_logits, dtype=np.float64))
    noise = None
    if mode == "train":
        if rng is None:
            rng = np.random.default_rng()
        noise = rng.standard_normal(lg.shape)
    elif mode != "eval":
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    with no_grad():
        scores, weights, selected = noisy_topk(Tensor(lg), None if ln is None else Tensor(ln), k, noise)
    decisions = [
        GateDecision(lg[i].copy(), scores.data[i].copy(), selected[i].copy(), weights.data[i].copy())
        for i in range(lg.shape[0])
    ]
    return decisions[0] if np.ndim(clean_logits) == 1 else decisions


def combine(readouts, decision):
    """Gate-weighted sum of the selected experts' readouts.

    ``readouts`` maps expert index to its readout vector (a list indexed by
    expert works too).
    """
    total = None
    for i in decision.selected:
        i = int(i)
        try:
            z_i = readouts[i]
        except (KeyError, IndexError):
            z_i = None
        if z_i is None:
            raise ContractError(f"no readout supplied for selected expert {i}")
        term = decision.weights[i] * np.asarray(z_i, dtype=np.float64)
        total = term if total is None else total + term
    return total
