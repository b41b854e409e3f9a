"""Routing statistics: class-by-expert routing proportions and view agreement."""
from dataclasses import dataclass
from math import comb

import numpy as np

from ..errors import ContractError
from ..pipeline.augment import AugmentConfig, augment_pair

MEMBERSHIP = "top-k membership: share of class images whose selected expert set contains the expert"
WEIGHTED = "gate-weight mass: mean gate weight the expert receives over class images"


@dataclass
class RoutingReport:
    classes: np.ndarray
    proportions: np.ndarray  # [classes, experts]
    top_logit_ids: np.ndarray  # [experts, m]
    convention: str


def routing_stats(probes, weighted=False, top_m=3):
    labels = probes.labels
    labelled = labels >= 0
    if not labelled.any():
        raise ContractError("routing statistics need labelled images; every label is -1")
    E = probes.num_experts
    member = np.zeros((len(probes), E))
    np.put_along_axis(member, probes.selected, 1.0, axis=1)
    values = probes.weights if weighted else member
    classes = np.unique(labels[labelled])
    props = np.stack([values[labels == c].mean(axis=0) for c in classes])
    top = np.stack([
        np.lexsort((probes.ids, -probes.logits[:, e]))[:top_m] for e in range(E)
    ])
    return RoutingReport(classes, props, probes.ids[top], WEIGHTED if weighted else MEMBERSHIP)


def chance_agreement(num_experts, top_k=2):
    """Probability that two independent uniformly random top-k sets coincide."""
    return 1.0 / comb(num_experts, top_k)


def topk_agreement(model, corpus, seed=0, augment_cfg=None, batch_size=256):
    """Fraction of images whose two augmented views select exactly the same experts (eval gate)."""
    if augment_cfg is None:
        mean, std = corpus.channel_stats()
        augment_cfg = AugmentConfig(size=model.config.input_size).with_stats(mean, std)
    same = 0
    for s in range(0, len(corpus), batch_size):
        imgs = corpus.images[s : s + batch_size]
        pairs = [augment_pair(img, (seed, s + j), augment_cfg) for j, img in enumerate(imgs)]
        _, sel_a, _ = model.route(np.stack([p[0] for p in pairs]))
        _, sel_b, _ = model.route(np.stack([p[1] for p in pairs]))
        same += int((sel_a == sel_b).all(axis=1).sum())
    return same / len(corpus)
