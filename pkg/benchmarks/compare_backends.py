"""Time the compiled and numpy kernel backends on the default model.

Usage: python benchmarks/compare_backends.py [--repeat N]

Each row is the best of N timings, in microseconds.  Before timing, the
outputs of both backends are checked for bitwise equality.
"""

import argparse
import timeit

import numpy as np

from gatecnn import kernels
from gatecnn.fixed import quantize_array
from gatecnn.model import GateCNNConfig, forward, init_weights
from gatecnn.quant import forward_fixed, quantize_model


def workloads():
    rng = np.random.default_rng(0)
    cfg = GateCNNConfig()
    w = init_weights(cfg, 0)
    qm = quantize_model(cfg, w)
    frame = rng.random(cfg.input_shape)
    x3 = rng.normal(size=(9, 4, 14))
    w3 = rng.normal(size=(9, 9, 5, 5))
    b3 = rng.normal(size=9)
    xq, wq, bq = quantize_array(x3), quantize_array(w3 * 0.1), quantize_array(b3)
    x1, w1, b1 = rng.normal(size=(4, 14)), rng.normal(size=(4, 7)), rng.normal(size=4)
    pool_in = rng.normal(size=(1, 30, 28))
    return {
        "conv2d_f64 9x9x5x5": lambda k: k.conv2d_f64(x3, w3, b3, 1, 1, 2, 2),
        "conv2d_fx 9x9x5x5": lambda k: k.conv2d_fx(xq, wq, bq, 1, 1, 2, 2, 16, 0, 0),
        "conv1d_dw_f64 4x7": lambda k: k.conv1d_dw_f64(x1, w1, b1),
        "maxpool2d 30x28": lambda k: k.maxpool2d(pool_in, 2, 2, 2, 2),
        "forward": lambda k: _with(k, lambda: forward(cfg, w, frame).logits),
        "forward_fixed": lambda k: _with(k, lambda: forward_fixed(qm, frame)),
    }


def _with(mod, fn):
    saved = kernels.active
    kernels.active = mod
    try:
        return fn()
    finally:
        kernels.active = saved


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = kernels.available_backends()
    mods = {n: kernels.get_backend(n) for n in names}
    jobs = workloads()
    print(f"{'workload':<22}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, job in jobs.items():
        outs = [job(mods[n]) for n in names]
        for o in outs[1:]:
            assert np.array_equal(outs[0], o), label
        times = []
        for n in names:
            number = 20 if "forward" in label else 200
            t = min(timeit.repeat(lambda: job(mods[n]), number=number, repeat=args.repeat)) / number
            times.append(t * 1e6)
        row = f"{label:<22}" + "".join(f"{t:>12.1f}" for t in times)
        if len(names) > 1:
            row += f"{times[names.index('python')] / times[names.index('cython')]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
