"""Report bundles: run the probe and stability analyses and write their tables and figures."""
import logging
import os

import numpy as np

from ..pipeline.corpus import CLASS_NAMES
from ..probe import (chance_agreement, gating_vs_readout, mei_majority, mei_topn, nn_lasso_nested_cv,
                     pairwise_separability, pooled_stability, purity, routing_stats, topk_agreement)
from ..probe.cluster import SINGLETON_CONVENTION
from . import svg
from .tables import matrix_rows, write_csv, write_json

log = logging.getLogger(__name__)


def class_names(classes):
    return [CLASS_NAMES[c] if 0 <= c < len(CLASS_NAMES) else f"class_{c}" for c in classes]


def _write(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def probe_bundle(out_dir, probes, corpus, model=None, seed=0, mei_n=10, folds=5, lasso_targets=("gating", "readout"),
                 lasso_rows=None, separability=True, augment_cfg=None):
    """Run every per-model analysis on ``probes`` and write it under ``out_dir``.

    Returns the summary dictionary that is also written to ``summary.json``.
    ``lasso_rows`` caps the images used for the dimension regression (a
    seeded subset); ``None`` uses all of them.
    """
    os.makedirs(out_dir, exist_ok=True)
    E = probes.num_experts
    experts = [f"expert_{e}" for e in range(E)]
    summary = {"experts": E, "images": len(probes), "top_k": probes.top_k}
    written = []

    def out(name):
        written.append(name)
        return os.path.join(out_dir, name)

    # routing
    rs = routing_stats(probes, top_m=3)
    names = class_names(rs.classes)
    write_csv(out("routing.csv"), ["class", *experts], matrix_rows(rs.proportions, names))
    write_csv(out("top_logit_ids.csv"), ["expert", "rank", "image_id"],
              [[e, r, i] for e in range(E) for r, i in enumerate(rs.top_logit_ids[e])])
    _write(out("routing.svg"), svg.heatmap(rs.proportions, names, experts, "routing proportion", 0.0, 1.0))
    summary["routing"] = {"convention": rs.convention, "classes": names, "proportions": rs.proportions}
    if model is not None:
        agree = topk_agreement(model, corpus, seed, augment_cfg)
        summary["topk_agreement"] = agree
        summary["chance_agreement"] = chance_agreement(E, probes.top_k)

    # most exciting inputs
    meis = [mei_topn(probes, e, mei_n) for e in range(E)]
    write_csv(out("mei.csv"), ["expert", "rank", "image_id", "norm", "label"],
              [[e, r, i, probes.norms[i, e], probes.labels[i]] for e in range(E) for r, i in enumerate(meis[e])])
    _write(out("mei.svg"), svg.image_grid([corpus.images[m] for m in meis], experts, "most exciting inputs"))
    summary["mei"] = meis

    # gating versus readout
    pearsons = []
    for e in range(E):
        try:
            g = gating_vs_readout(probes, e)
        except Exception as exc:  # constant series: record and move on
            log.warning("%s", exc)
            pearsons.append(float("nan"))
            continue
        pearsons.append(g["pearson_r"])
        write_csv(out(f"gating_vs_readout_{e}.csv"), ["image_id", "label", "gating", "readout"],
                  [[probes.ids[i], g["labels"][i], g["gating"][i], g["readout"][i]] for i in range(len(probes))])
        _write(out(f"gating_vs_readout_{e}.svg"),
               svg.scatter(g["gating"], g["readout"], np.maximum(g["labels"], 0), title=f"expert {e} (r = {g['pearson_r']:.2f})",
                           xlabel="gating logit (min-max)", ylabel="readout norm (min-max)", radius=1.5))
    summary["gating_readout_pearson"] = pearsons

    # separability
    if separability:
        sep = []
        for e in range(E):
            classes, M = pairwise_separability(probes, e, folds=folds, seed=seed)
            cn = class_names(classes)
            write_csv(out(f"separability_{e}.csv"), ["class", *cn], matrix_rows(M, cn))
            _write(out(f"separability_{e}.svg"), svg.heatmap(M, cn, cn, f"expert {e} balanced accuracy", 0.5, 1.0))
            sep.append(float(np.nanmean(M)))
        summary["separability_mean"] = sep

    # dimension regression
    rows = np.arange(len(probes))
    if lasso_rows is not None and lasso_rows < len(rows):
        rows = np.sort(np.random.default_rng([seed, 0x1A5]).choice(len(rows), lasso_rows, replace=False))
    X = corpus.factors[probes.ids[rows]]
    lasso_table, lasso_summary = [], {}
    for target in lasso_targets:
        lasso_summary[target] = []
        for e in range(E):
            y = (probes.logits if target == "gating" else probes.norms)[rows, e]
            rep = nn_lasso_nested_cv(X, y, corpus.dim_names, seed=seed)
            top = rep.top + [("", float("nan"))] * (3 - len(rep.top))
            lasso_table.append([e, target, rep.r2_mean, rep.r2_std, rep.lam,
                                *[v for pair in top for v in pair], *rep.coef])
            lasso_summary[target].append({"expert": e, "r2_mean": rep.r2_mean, "r2_std": rep.r2_std,
                                          "lambda": rep.lam, "top": rep.top, "coef": rep.coef,
                                          "flagged_folds": rep.flagged_folds})
    write_csv(out("lasso.csv"),
              ["expert", "target", "r2_mean", "r2_std", "lambda", "dim1", "w1", "dim2", "w2", "dim3", "w3",
               *[f"coef_{n}" for n in corpus.dim_names]], lasso_table)
    summary["lasso"] = lasso_summary
    summary["files"] = sorted(written + ["summary.json"])
    write_json(out("summary.json"), summary)
    return summary


def stability_bundle(out_dir, probe_sets, corpus, model_names, rsa_images=500, seed=0, mei_n=10):
    """Pooled second-order RSA, silhouette-selected clustering, MDS and exemplar grids."""
    os.makedirs(out_dir, exist_ok=True)
    rep = pooled_stability(probe_sets, rsa_images=rsa_images, seed=seed, mei_n=mei_n)
    labels = [f"{model_names[m]}:e{e}" for m, e in rep.items]
    written = []

    def out(name):
        written.append(name)
        return os.path.join(out_dir, name)

    write_csv(out("second_order.csv"), ["item", *labels], matrix_rows(rep.similarity, labels))
    _write(out("second_order.svg"), svg.heatmap(rep.similarity, labels, labels, "second-order RSA (Spearman)",
                                                -1.0, 1.0, annotate=len(labels) <= 16))
    write_csv(out("silhouette.csv"), ["clusters", "silhouette"], list(zip(rep.counts, rep.silhouettes)))
    if rep.counts:
        _write(out("silhouette.svg"), svg.line(rep.counts, rep.silhouettes, "silhouette by cluster count",
                                               "clusters", "mean silhouette", mark=rep.chosen))
    domain = None
    if corpus.factors.shape[1] and corpus.dim_names[0] == "domain":
        domain = mei_majority(rep.meis, corpus.factors[:, 0]).astype(int)
    rows = []
    for i, (m, e) in enumerate(rep.items):
        coords = rep.coords[i] if rep.coords is not None else (float("nan"), float("nan"))
        rows.append([model_names[m], e, rep.labels[i], coords[0], coords[1],
                     domain[i] if domain is not None else ""])
    write_csv(out("clusters.csv"), ["model", "expert", "cluster", "mds_x", "mds_y", "mei_domain"], rows)
    if rep.coords is not None:
        _write(out("mds.svg"), svg.scatter(rep.coords[:, 0], rep.coords[:, 1], rep.labels, labels,
                                           "MDS of second-order similarity", "MDS 1", "MDS 2", radius=4))
    for c, ids in rep.exemplars.items():
        _write(out(f"exemplars_cluster{c}.svg"),
               svg.image_grid([corpus.images[ids]], [f"cluster {c}"], f"cluster {c} exemplars"))
    summary = {
        "items": labels,
        "chosen_clusters": rep.chosen,
        "counts": rep.counts,
        "silhouettes": rep.silhouettes,
        "assignments": rep.labels,
        "notes": rep.notes + ([SINGLETON_CONVENTION] if SINGLETON_CONVENTION not in rep.notes else []),
        "exemplars": rep.exemplars,
        "rsa_images": min(rsa_images, len(corpus)),
    }
    if domain is not None:
        summary["mei_domain"] = domain
        summary["purity_per_model"] = [
            purity(rep.labels[[i for i, (mm, _) in enumerate(rep.items) if mm == m]],
                   domain[[i for i, (mm, _) in enumerate(rep.items) if mm == m]])
            for m in range(len(probe_sets))
        ]
        summary["purity_pooled"] = purity(rep.labels, domain)
    summary["files"] = sorted(written + ["summary.json"])
    write_json(out("summary.json"), summary)
    return summary, rep
