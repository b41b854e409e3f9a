"""Compare the compiled kernels with their numpy / pure-Python fallbacks.

    python3 benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python3 benchmarks/bench_kernels.py --step     # plus one training step per backend

Both backends are imported directly, so the micro-benchmarks run in one
process; ``--step`` spawns a subprocess with MOESCOPE_PURE_PYTHON=1 for the
fallback.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from moescope.ndtensor import _pykernels
from moescope.probe import _pydescent

try:
    from moescope.ndtensor import _ckernels
    from moescope.probe import _cdescent
except ImportError:
    _ckernels = _cdescent = None

# (batch, channels, height, width, stride) seen during desk-scale training
CONV_SHAPES = [(256, 3, 32, 32, 2), (256, 16, 16, 16, 1), (256, 32, 8, 8, 2), (64, 64, 4, 4, 1)]


def best_of(fn, repeat, number=1):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_conv(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for B, C, H, W, s in CONV_SHAPES:
        x = rng.normal(size=(B, C, H, W))
        cols = _pykernels.im2col(x, 3, 3, s, 1)
        if _ckernels is not None:
            np.testing.assert_array_equal(cols, _ckernels.im2col(x, 3, 3, s, 1))
            np.testing.assert_allclose(_pykernels.col2im(cols, B, C, H, W, 3, 3, s, 1),
                                       _ckernels.col2im(cols, B, C, H, W, 3, 3, s, 1), atol=1e-12)
        for name, fn in [("im2col", lambda m: m.im2col(x, 3, 3, s, 1)),
                         ("col2im", lambda m: m.col2im(cols, B, C, H, W, 3, 3, s, 1))]:
            t_py = best_of(lambda: fn(_pykernels), repeat)
            t_c = best_of(lambda: fn(_ckernels), repeat) if _ckernels is not None else float("nan")
            rows.append((f"{name} {B}x{C}x{H}x{W} s{s}", t_py, t_c))
    return rows


def bench_lasso(repeat):
    rng = np.random.default_rng(1)
    rows = []
    for n, d in [(500, 8), (8000, 8), (8000, 32)]:
        X = rng.normal(size=(n, d))
        Xc = X - X.mean(axis=0)
        y = Xc @ (np.abs(rng.normal(size=d)) * (rng.random(d) < 0.5)) + rng.normal(size=n)
        xt = np.ascontiguousarray(Xc.T)
        sq = (xt * xt).sum(axis=1) / n

        def run(mod):
            beta = np.zeros(d)
            resid = np.ascontiguousarray(y - y.mean())
            mod.cd_nonneg(xt, resid, beta, sq, 0.01, 1e-9, 10000)
            return beta

        if _cdescent is not None:
            np.testing.assert_allclose(run(_pydescent), run(_cdescent), atol=1e-10)
        t_py = best_of(lambda: run(_pydescent), repeat)
        t_c = best_of(lambda: run(_cdescent), repeat) if _cdescent is not None else float("nan")
        rows.append((f"cd_nonneg n={n} d={d}", t_py, t_c))
    return rows


STEP_SNIPPET = """
import time, numpy as np
from moescope.moe import MoeConfig, MoeModel
from moescope.objectives import total_loss
from moescope.ndtensor import BACKEND
m = MoeModel(MoeConfig(num_experts=4, top_k=2), seed=0)
x = np.random.default_rng(0).normal(size=(256, 3, 32, 32))
m.warmup_statistics(x)
best = float("inf")
for i in range(3):
    t = time.perf_counter()
    out = m.forward(x, mode="train", noise_key=(0, i))
    m.zero_grad()
    total_loss(out.v, out.weights)[0].backward()
    best = min(best, time.perf_counter() - t)
print(BACKEND, best)
"""


def bench_step():
    rows = {}
    for pure in (True, False):
        env = dict(os.environ)
        env.pop("MOESCOPE_PURE_PYTHON", None)
        if pure:
            env["MOESCOPE_PURE_PYTHON"] = "1"
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        rows[backend] = float(seconds)
    return [("train step (256 views, E=4)", rows.get("numpy", float("nan")), rows.get("cython", float("nan")))]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--step", action="store_true", help="also time a full forward/backward step per backend")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extensions not built; only the fallback column is meaningful")
    rows = bench_conv(args.repeat) + bench_lasso(args.repeat)
    if args.step:
        rows += bench_step()
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'fallback ms':>12}  {'compiled ms':>12}  {'speedup':>8}")
    for name, t_py, t_c in rows:
        print(f"{name:<{width}}  {t_py * 1e3:12.2f}  {t_c * 1e3:12.2f}  {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
