"""Per-image router and forced-expert measurements."""
from dataclasses import dataclass

import numpy as np

from ..ndtensor import no_grad
from ..pipeline.augment import AugmentConfig, normalize


@dataclass
class ProbeRecord:
    image_id: int
    label: int
    logits: np.ndarray  # [E] clean gating logits
    weights: np.ndarray  # [E] gate weights, zero off-support
    readouts: np.ndarray  # [E, D] forced readouts z_i
    norms: np.ndarray  # [E] ||z_i||_2


@dataclass
class ProbeSet:
    """Column-oriented store of probe records for one model on one corpus."""

    ids: np.ndarray
    labels: np.ndarray
    logits: np.ndarray
    weights: np.ndarray
    selected: np.ndarray
    readouts: np.ndarray  # [N, E, D]
    norms: np.ndarray
    top_k: int

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        return ProbeRecord(int(self.ids[i]), int(self.labels[i]), self.logits[i], self.weights[i],
                           self.readouts[i], self.norms[i])

    def records(self):
        return [self[i] for i in range(len(self))]

    @property
    def num_experts(self):
        return self.logits.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return ProbeSet(self.ids[idx], self.labels[idx], self.logits[idx], self.weights[idx],
                        self.selected[idx], self.readouts[idx], self.norms[idx], self.top_k)


def collect(model, corpus, mean=None, std=None, batch_size=256):
    """Eval-mode pass recording router outputs and every expert's forced readout.

    ``mean``/``std`` are the per-channel normalisation used in training; they
    default to the corpus's own statistics.
    """
    if mean is None or std is None:
        mean, std = corpus.channel_stats()
    cfg = AugmentConfig.identity(model.config.input_size, mean, std)
    chunks = []
    with no_grad():
        for s in range(0, len(corpus), batch_size):
            x = normalize(corpus.images[s : s + batch_size], cfg)
            out = model.forward(x, mode="eval", force_all_experts=True)
            chunks.append((out.logits.data, out.weights.data, out.selected, np.stack(out.readouts, axis=1), out.norms))
    logits, weights, selected, readouts, norms = (np.concatenate(c) for c in zip(*chunks))
    return ProbeSet(np.arange(len(corpus)), corpus.labels.copy(), logits, weights, selected, readouts, norms,
                    model.config.top_k)
