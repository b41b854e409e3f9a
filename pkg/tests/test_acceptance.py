"""Acceptance gate: one pass/fail line per criterion, printed in the terminal summary.

Criterion 8 trains three models at desk scale (about half an hour on one core).
Set MOESCOPE_DESK_DIR to a persistent directory to reuse finished stages, or
MOESCOPE_SKIP_DESK=1 to record it as skipped.
"""
import csv
import json
import math
import os
import time

import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from moescope.cli import main
from moescope.moe import MoeConfig, MoeModel, load_checkpoint, noisy_topk_gate, parameter_count, save_checkpoint
from moescope.objectives import importance_loss, nt_xent
from moescope.pipeline import load_corpus, save_corpus, synth_corpus
from moescope.probe import (cluster_stability, mds_2d, nn_lasso, nn_lasso_nested_cv, rdm, second_order_rsa,
                            separability_matrix)
from moescope.probe.lasso import lasso_objective

from conftest import CRITERIA
from gradcases import CASES
from oracles import check_grads, projected_gradient_lasso
from test_moe import end_to_end_fd


def record(n, ok, detail):
    CRITERIA.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    worst_prim, worst_name = 0.0, ""
    for name, factory in sorted(CASES.items()):
        rng = np.random.default_rng(sum(map(ord, name)) + 7)
        for _ in range(20):
            err = check_grads(*factory(rng))
            if err > worst_prim:
                worst_prim, worst_name = err, name
    cfg = MoeConfig(num_experts=4, top_k=2, base_width=16, input_size=16, shared_widths=(4, 6), gate_width=4,
                    proj_dim=8)
    worst_e2e = 0.0
    for i in range(20):
        rng = np.random.default_rng(100 + i)
        model = MoeModel(cfg, seed=i)
        worst_e2e = max(worst_e2e, end_to_end_fd(model, rng.normal(size=(6, 3, 16, 16)), fraction=0.004, seed=i))
    elapsed = time.perf_counter() - t0
    record(1, worst_prim < 1e-4 and worst_e2e < 1e-3 and elapsed < 120,
           f"{len(CASES)} primitives x 20: max rel err {worst_prim:.1e} ({worst_name}); "
           f"end-to-end x 20: {worst_e2e:.1e}; {elapsed:.0f}s")


def test_criterion_2_architecture():
    dims = [MoeConfig.full_scale(E).embed_dim for E in (4, 8, 16)]
    c = MoeConfig.full_scale(4)
    counts = [parameter_count(MoeConfig.full_scale(E)) for E in (4, 8, 16)]
    spread = (max(counts) - min(counts)) / min(counts)
    ok = dims == [128, 90, 64] and c.input_size == 96 and c.gate_size == 12 and spread < 0.05
    record(2, ok, f"embed_dim {dims}; {c.input_size}x{c.input_size} -> {c.gate_size}x{c.gate_size}; "
                  f"params {counts} (spread {spread:.1%})")


def test_criterion_3_gate_contract():
    rng = np.random.default_rng(0)
    bad = 0
    total = 0
    for E in (4, 8, 16):
        for k in (1, 2):
            lg = rng.normal(size=(10000, E)) * 3
            lg[::50, :3] = 1.5  # planted ties
            ds = noisy_topk_gate(lg, None, k, "eval")
            again = noisy_topk_gate(lg, None, k, "eval")
            for row, d, d2 in zip(lg, ds, again):
                order = sorted(range(E), key=lambda j: (-row[j], j))[:k]
                ok = (len(d.selected) == k and abs(d.weights.sum() - 1.0) <= 1e-12
                      and int((d.weights > 0).sum()) == k and sorted(order) == sorted(d.selected.tolist())
                      and d.weights.tobytes() == d2.weights.tobytes())
                bad += not ok
                total += 1
    record(3, bad == 0, f"{total} logit vectors over E in (4,8,16), k in (1,2): {bad} violations")


def test_criterion_4_loss_oracles():
    imp = importance_loss(np.array([2.0, 0, 0, 0]), 0.1).item()
    uni = importance_loss(np.full(4, 0.7), 0.1).item()
    ln3 = nt_xent(np.tile([[0.3, -1.2, 2.0]], (4, 1)), 0.5).item()
    V = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 1.0, 0, 0]])
    ao = nt_xent(V, 0.5).item()
    target = -math.log(math.e**2 / (math.e**2 + 2))
    ok = abs(imp - 0.3) <= 1e-12 and uni == 0.0 and abs(ln3 - math.log(3)) <= 1e-9 and abs(ao - target) <= 1e-9
    record(4, ok, f"importance {imp!r}, uniform {uni!r}, identical {ln3:.12f} (ln3), aligned {ao:.12f} ({target:.12f})")


def test_criterion_5_lasso():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_gap = -np.inf
    worst_kkt = 0.0
    for _ in range(50):
        X = rng.normal(size=(20, 3))
        y = X @ np.abs(rng.normal(size=3)) + 0.3 * rng.normal(size=20)
        lam = 10 ** rng.uniform(-3, -0.5)
        fit = nn_lasso(X, y, lam)
        b, c = projected_gradient_lasso(X, y, lam)
        worst_gap = max(worst_gap, lasso_objective(X, y, fit.coef, fit.intercept, lam) - lasso_objective(X, y, b, c, lam))
        g = -(X - X.mean(0)).T @ (y - X @ fit.coef - fit.intercept) / len(y)
        act = fit.coef > 0
        worst_kkt = max(worst_kkt, np.abs(g[act] + lam).max(initial=0), np.maximum(-(g[~act] + lam), 0).max(initial=0))
    X = rng.uniform(size=(200, 6))
    y = 1.5 * X[:, 1] + 0.5 * X[:, 4]
    planted = nn_lasso_nested_cv(X, y, seed=0).r2_mean
    permuted = nn_lasso_nested_cv(X, rng.permutation(y), seed=0).r2_mean
    elapsed = time.perf_counter() - t0
    ok = worst_gap < 1e-6 and worst_kkt < 1e-5 and planted > 0.99 and permuted <= 0.05 and elapsed < 300
    record(5, ok, f"50 oracle problems: max gap {worst_gap:.1e}, KKT {worst_kkt:.1e}; nested CV planted r2 "
                  f"{planted:.4f}, permuted {permuted:.4f}; {elapsed:.0f}s")


def test_criterion_6_separability():
    same = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        same.append(separability_matrix(r.normal(size=(400, 8)), np.repeat([0, 1], 200), seed=seed)[1][0, 1])
    r = np.random.default_rng(9)
    X = r.normal(size=(400, 8))
    X[200:] += 4.0
    sep = separability_matrix(X, np.repeat([0, 1], 200), seed=0)[1][0, 1]
    ok = all(abs(a - 0.5) <= 0.05 for a in same) and sep >= 0.95
    record(6, ok, f"identical classes {[round(float(a), 3) for a in same]}; separated {sep:.3f}")


def test_criterion_7_geometry():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    E = rng.normal(size=(30, 5))
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    iso = np.abs(rdm(E @ Q + rng.normal(size=5)) - rdm(E)).max()
    D = rdm(E)
    mono = second_order_rsa([D, np.exp(D), D ** 3])
    S = np.full((8, 8), 0.01)
    S[:4, :4] = S[4:, 4:] = 0.99
    np.fill_diagonal(S, 1.0)
    rep = cluster_stability(S)
    P = rng.normal(size=(25, 2)) * 4
    Dp = squareform(pdist(P))
    mds_err = np.abs(squareform(pdist(mds_2d(Dp))) - Dp).max()
    elapsed = time.perf_counter() - t0
    ok = iso <= 1e-10 and (mono == 1.0).all() and rep.chosen == 2 and rep.best_silhouette > 0.9 and mds_err < 1e-6
    record(7, ok and elapsed < 60, f"isometry {iso:.1e}; monotone RSA min {float(mono.min())!r}; two blobs -> "
                                   f"{rep.chosen} clusters (silhouette {rep.best_silhouette:.3f}); MDS {mds_err:.1e}")


def test_criterion_9_round_trips(tmp_path):
    import test_report

    c = synth_corpus(50, 16, 5, seed=2)
    save_corpus(tmp_path / "c.moec", c)
    c2 = load_corpus(tmp_path / "c.moec")
    corpus_ok = (c2.images.tobytes() == c.images.tobytes() and c2.factors.tobytes() == c.factors.tobytes()
                 and (c2.labels == c.labels).all())
    save_corpus(tmp_path / "d.moec", c2)
    corpus_ok &= (tmp_path / "c.moec").read_bytes() == (tmp_path / "d.moec").read_bytes()
    m = MoeModel(MoeConfig(num_experts=4, top_k=2, base_width=16, input_size=16, shared_widths=(4, 6),
                           gate_width=4, proj_dim=8), seed=1)
    m.warmup_statistics(np.random.default_rng(0).normal(size=(4, 3, 16, 16)))
    save_checkpoint(tmp_path / "m.ckpt", m, meta={"epoch": 0})
    m2, _, _ = load_checkpoint(tmp_path / "m.ckpt")
    save_checkpoint(tmp_path / "m2.ckpt", m2, meta={"epoch": 0})
    ckpt_ok = (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()
    texts = test_report.golden_texts(tmp_path)
    golden_ok = all((test_report.GOLDEN / name).read_text(encoding="utf-8") == text for name, text in texts.items())
    record(9, corpus_ok and ckpt_ok and golden_ok,
           f"corpus round-trip {corpus_ok}; checkpoint round-trip {ckpt_ok}; {len(texts)} golden SVG/CSV files {golden_ok}")


# ---------------------------------------------------------------- desk-scale end-to-end

SEEDS = (0, 1, 2)


def _stage(done_marker, argv):
    if os.path.exists(done_marker):
        return 0.0
    t0 = time.perf_counter()
    code = main([str(a) for a in argv])
    assert code == 0, f"{argv[0]} exited {code}"
    return time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_8_desk_run(tmp_path):
    if os.environ.get("MOESCOPE_SKIP_DESK") == "1":
        CRITERIA.append("CRITERION 8: SKIPPED  (MOESCOPE_SKIP_DESK=1)")
        pytest.skip("desk-scale run disabled")
    root = os.environ.get("MOESCOPE_DESK_DIR") or str(tmp_path)
    os.makedirs(root, exist_ok=True)
    corpus = os.path.join(root, "corpus.moec")
    _stage(corpus + ".manifest.json", ["gen", "--n", 8000, "--size", 32, "--dims", 8, "--seed", 100, "--out", corpus])
    train_times = {}
    for s in SEEDS:
        out = os.path.join(root, f"seed{s}")
        train_times[s] = _stage(os.path.join(out, "manifest.json"),
                                ["train", "--corpus", corpus, "--seed", s, "--experts", 4, "--topk", 2,
                                 "--epochs", 20, "--out", out])
        _stage(os.path.join(root, f"probe{s}", "manifest.json"),
               ["probe", "--corpus", corpus, "--checkpoint", os.path.join(out, "last.ckpt"), "--seed", s,
                "--out", os.path.join(root, f"probe{s}")])
    stab = os.path.join(root, "stability")
    _stage(os.path.join(stab, "manifest.json"),
           ["stability", "--corpus", corpus, "--models", *[os.path.join(root, f"seed{s}", "last.ckpt") for s in SEEDS],
            "--out", stab])

    details, checks = [], []
    agreements, shares = [], []
    r2_ok, domain_top3, n_experts = True, 0, 0
    for s in SEEDS:
        summary = json.load(open(os.path.join(root, f"probe{s}", "summary.json")))
        agreements.append(summary["topk_agreement"])
        with open(os.path.join(root, f"seed{s}", "epochs.csv"), newline="") as f:
            shares.append(float(list(csv.DictReader(f))[-1]["min_routing_share"]))
        for row in summary["lasso"]["readout"]:
            n_experts += 1
            r2_ok &= row["r2_mean"] > 0
            domain_top3 += any(name == "domain" for name, _ in row["top"])
    chance = 1 / 6
    checks.append(all(a > chance for a in agreements))
    details.append(f"(a) agreement {[round(a, 3) for a in agreements]} vs chance {chance:.3f}")
    checks.append(all(m > 1 / 16 for m in shares))
    details.append(f"(b) min routing share {[round(m, 3) for m in shares]} vs {1 / 16:.4f}")
    st = json.load(open(os.path.join(stab, "summary.json")))
    purities = st.get("purity_per_model", [])
    good = sum(p >= 0.8 for p in purities)
    checks.append(st["chosen_clusters"] == 2 and good >= 2)
    details.append(f"(c) {st['chosen_clusters']} clusters, purity per model {[round(p, 2) for p in purities]}")
    checks.append(r2_ok and domain_top3 >= n_experts / 2)
    details.append(f"(d) readout-norm r2 > 0 for all experts: {r2_ok}; domain in top 3 for {domain_top3}/{n_experts}")
    fresh = [t for t in train_times.values() if t > 0]
    checks.append(all(t < 1800 for t in fresh))
    details.append("train time " + (", ".join(f"{t / 60:.1f} min" for t in fresh) if fresh else "cached"))
    labels = "abcd"
    failed = [labels[i] if i < 4 else "time" for i, ok in enumerate(checks) if not ok]
    record(8, not failed, "; ".join(details) + (f"; failing: {failed}" if failed else ""))
