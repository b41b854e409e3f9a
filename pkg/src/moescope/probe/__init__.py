"""Expert-interpretability analyses: routing, tuning, dimension regression, separability, RSA."""
from .cluster import StabilityReport, average_linkage, cluster_stability, mds_2d, silhouette_samples, silhouette_score
from .lasso import (DEFAULT_GRID, LassoFit, LassoReport, lasso_objective, nn_lasso, nn_lasso_nested_cv, r2_score,
                    top_dimensions)
from .records import ProbeRecord, ProbeSet, collect
from .routing import RoutingReport, chance_agreement, routing_stats, topk_agreement
from .rsa import rdm, second_order_rsa, spearman, upper_triangle, validate_dissimilarity
from .separability import (balanced_accuracy, logistic_fit, pair_balanced_accuracy, pairwise_separability,
                           separability_matrix)
from .tuning import gating_vs_readout, mei_topn, minmax, pearson
from .stability import expert_rdms, mei_majority, pooled_stability, purity, rsa_subset
