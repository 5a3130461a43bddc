"""Time the numba kernels against their numpy fallbacks at training-sized inputs.

Run: python benchmarks/bench_kernels.py --repeats 20
"""

import argparse
import time

import numpy as np

from photonic_qt import kernels
from photonic_qt.linear_optics import MeshParams, clements_mesh
from photonic_qt.mps_mapper import MpsModel, encode_batch


def best_of(fn, args, repeats):
    fn(*args)  # warm-up, includes compilation for the numba path
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # 126 collision-free outcomes of 4 photons in 9 modes: a batch of 4x4 submatrices
    u = clements_mesh(9, MeshParams.random(9, rng))
    rows = np.array([rng.choice(9, 4, replace=False) for _ in range(126)])
    subs = np.stack([u[np.ix_(r, np.arange(4))] for r in rows])
    yield "permanent_batch (126 x 4x4)", "permanent_batch", (subs,)

    m, chi = 6690, 10
    mps = MpsModel.init(chi, m, rng)
    feats = encode_batch(np.arange(m), rng.random(m) / m, mps.n_sites - 1)
    h0 = np.ones(chi)
    hs = kernels.mps_chain_forward(mps.cores, feats, h0)
    g = rng.standard_normal((m, chi))
    yield "mps_chain_forward (m=6690, chi=10)", "mps_chain_forward", (mps.cores, feats, h0)
    yield "mps_chain_backward (m=6690, chi=10)", "mps_chain_backward", (mps.cores, feats, hs, g)

    x = rng.random((64, 1, 28, 28))
    w = rng.standard_normal((10, 1, 3, 3))
    b = rng.standard_normal(10)
    out = kernels.conv2d_forward(x, w, b)
    yield "conv2d_forward (64x1x28x28, 10x3x3)", "conv2d_forward", (x, w, b)
    yield "conv2d_backward (same)", "conv2d_backward", (rng.standard_normal(out.shape), x, w, False)

    x2 = rng.standard_normal((64, 10, 26, 26))
    pooled, arg = kernels.maxpool2_forward(x2)
    yield "maxpool2_forward (64x10x26x26)", "maxpool2_forward", (x2,)
    yield "maxpool2_backward (same)", "maxpool2_backward", (rng.standard_normal(pooled.shape), arg, 26, 26)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    if not kernels.NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy path can run")
        return
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, name, call_args in cases(rng):
        t_np = best_of(getattr(kernels, f"_{name}_np"), call_args, args.repeats)
        t_nb = best_of(getattr(kernels, f"_{name}_nb"), call_args, args.repeats)
        print(f"{label:40s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
