"""Time the hot kernels under the compiled and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs forward and backward on desk-sized tensors; the last case is a
full training step of the desk U-Net. Reported numbers are the median of
``--repeat`` runs after one warm-up.
"""
import argparse
import json
import statistics
import time

import numpy as np

from raincast import models as M
from raincast import tensor as T
from raincast.losses import LossSpec
from raincast.tensor import Tensor
from raincast.train import AdamState, train_step


def _op_case(fn, *shapes):
    rng = np.random.default_rng(0)
    arrays = [rng.standard_normal(s).astype(np.float32) for s in shapes]

    def run():
        ts = [Tensor(a, requires_grad=True) for a in arrays]
        out = fn(*ts)
        T.backward((out * out).mean())
    return run


def _train_case():
    cfg = M.UNet3DConfig(start_filters=8, depth=2)
    params = M.init_model(cfg, seed=0)
    opt = AdamState.fresh(params)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 4, 4, 24, 24)).astype(np.float32)
    y = (rng.random((8, 8, 48, 48)) < 0.1).astype(np.float32)

    def run():
        train_step(cfg, params, opt, LossSpec(), x, y, 1e-3, 0.0, 1.0, np.random.default_rng(0))
    return run


CASES = {
    "conv3d 3x3x3 [8,16,4,24,24]": lambda: _op_case(
        lambda x, w: T.conv3d(x, w, padding=1), (8, 16, 4, 24, 24), (16, 16, 3, 3, 3)),
    "conv3d_transpose 2x2x2 [8,16,2,12,12]": lambda: _op_case(
        lambda x, w: T.conv3d_transpose(x, w, stride=2), (8, 16, 2, 12, 12), (16, 8, 2, 2, 2)),
    "maxpool3d 2x2x2 [8,16,4,24,24]": lambda: _op_case(
        lambda x: T.maxpool3d(x, (2, 2, 2)), (8, 16, 4, 24, 24)),
    "upsample_bilinear2d x2 [8,8,24,24]": lambda: _op_case(
        lambda x: T.upsample_bilinear2d(x, 2), (8, 8, 24, 24)),
    "unet3d train step (batch 8)": _train_case,
}


def time_case(make, repeat):
    run = make()
    run()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        run()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)

    backends = T.backend.available()
    if "compiled" not in backends:
        print("compiled kernels are not built; timing the numpy fallback only")
    results = {}
    for case, make in CASES.items():
        results[case] = {}
        for b in backends:
            with T.backend.use_backend(b):
                results[case][b] = time_case(make, args.repeat)

    width = max(map(len, CASES))
    print(f"{'case':<{width}}  " + "  ".join(f"{b:>10}" for b in backends) + ("    speedup" if len(backends) > 1 else ""))
    for case, row in results.items():
        line = f"{case:<{width}}  " + "  ".join(f"{row[b] * 1e3:>8.2f}ms" for b in backends)
        if len(backends) > 1:
            line += f"  {row['python'] / row['compiled']:>8.2f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
