"""Cross-model representational stability: pooled (model, expert) RSA and cluster purity."""
import numpy as np

from ..errors import ContractError
from .cluster import cluster_stability
from .rsa import rdm, second_order_rsa
from .tuning import mei_topn


def rsa_subset(n_images, size, seed=0):
    """Sorted random subset of image ids used for the first-order RDMs."""
    if size >= n_images:
        return np.arange(n_images)
    return np.sort(np.random.default_rng([seed, 0x25A]).choice(n_images, size, replace=False))


def expert_rdms(probe_sets, image_ids):
    """One Euclidean RDM per (model, expert), in model-major order."""
    rdms, items = [], []
    for m, probes in enumerate(probe_sets):
        for e in range(probes.num_experts):
            rdms.append(rdm(probes.readouts[image_ids, e, :]))
            items.append((m, e))
    return rdms, items


def pooled_stability(probe_sets, rsa_images=500, seed=0, mei_n=10, min_clusters=2, max_clusters=15):
    """Second-order RSA over all (model, expert) pairs, clustered by silhouette.

    The report's ``exemplars`` maps each cluster to the top-``mei_n`` image ids
    of its members, most exciting first, merged by member rank.
    """
    if len(probe_sets) < 1:
        raise ContractError("stability analysis needs at least one probed model")
    sizes = {len(p) for p in probe_sets}
    if len(sizes) != 1:
        raise ContractError(f"probe sets cover different corpora sizes: {sorted(sizes)}")
    ids = rsa_subset(sizes.pop(), rsa_images, seed)
    rdms, items = expert_rdms(probe_sets, ids)
    report = cluster_stability(second_order_rsa(rdms), min_clusters, max_clusters)
    report.items = items
    meis = [mei_topn(probe_sets[m], e, mei_n) for m, e in items]
    report.meis = meis
    for c in np.unique(report.labels):
        members = np.flatnonzero(report.labels == c)
        merged = []
        for rank in range(mei_n):
            for i in members:
                if rank < len(meis[i]) and meis[i][rank] not in merged:
                    merged.append(int(meis[i][rank]))
        report.exemplars[int(c)] = merged[:mei_n]
    return report


def mei_majority(meis, attribute):
    """Majority value of ``attribute`` over each expert's MEI ids (ties go to the smaller value)."""
    out = []
    for ids in meis:
        vals, counts = np.unique(np.asarray(attribute)[np.asarray(ids)], return_counts=True)
        out.append(vals[np.argmax(counts)])
    return np.array(out)


def purity(clusters, classes):
    """Fraction of items whose class is the majority class of their cluster."""
    clusters = np.asarray(clusters)
    classes = np.asarray(classes)
    if len(clusters) == 0:
        raise ContractError("purity of an empty assignment is undefined")
    hit = 0
    for c in np.unique(clusters):
        _, counts = np.unique(classes[clusters == c], return_counts=True)
        hit += counts.max()
    return hit / len(clusters)
