"""Time the compiled and pure-Python kernel backends on the default network.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 8]

Prints per-kernel timings (3x3 conv, depthwise, requantize) and whole-model
inference for real32 and int8, once per available backend, and checks that
int8 outputs are bit-identical across backends.
"""

import argparse
import time

import numpy as np

from tinydrone.mission.scene import make_dataset, to_input
from tinydrone.nn import kernels
from tinydrone.nn.graph import build_mobilenet_v2, run_inference
from tinydrone.pipeline import quantize_classifier
from tinydrone.tensor import QuantParams, Tensor


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    x = Tensor(rng.uniform(-1, 1, (4, 48, 48, 16)))
    w = Tensor(rng.uniform(-0.3, 0.3, (16, 3, 3, 16)))
    dw = Tensor(rng.uniform(-0.3, 0.3, (1, 3, 3, 48)))
    xd = Tensor(rng.uniform(-1, 1, (4, 48, 48, 48)))
    qp = QuantParams(2 / 255, 0)
    qx = Tensor.int8(rng.integers(-128, 128, (4, 48, 48, 16)), qp)
    qxd = Tensor.int8(rng.integers(-128, 128, (4, 48, 48, 48)), qp)
    qw = Tensor.int8(rng.integers(-127, 128, (16, 3, 3, 16)), QuantParams(0.3 / 127, 0))
    qdw = Tensor.int8(rng.integers(-127, 128, (1, 3, 3, 48)), QuantParams(0.3 / 127, 0))
    out = QuantParams(0.05, 3)
    return {
        "conv3x3 f32": lambda: kernels.conv2d(x, w),
        "conv3x3 i8": lambda: kernels.conv2d(qx, qw, np.zeros(16, np.int32), out_qp=out),
        "depthwise f32": lambda: kernels.depthwise_conv2d(xd, dw),
        "depthwise i8": lambda: kernels.depthwise_conv2d(qxd, qdw, np.zeros(48, np.int32), out_qp=out),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    cases = kernel_cases(rng)
    model = build_mobilenet_v2(seed=args.seed)
    images = to_input(make_dataset(args.batch, seed=args.seed)[0])
    qmodel = quantize_classifier(model, n_calib=16, seed=args.seed)
    cases[f"model f32 x{args.batch}"] = lambda: run_inference(model, images)
    cases[f"model i8 x{args.batch}"] = lambda: run_inference(qmodel, images)

    backends = kernels.available_backends()
    results, int8_out = {}, {}
    prev = kernels.backend()
    for b in backends:
        kernels.use_backend(b)
        results[b] = {name: best_of(fn, args.repeat) for name, fn in cases.items()}
        int8_out[b] = run_inference(qmodel, images)
    kernels.use_backend(prev)

    print(f"{'case':<20}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name in cases:
        row = f"{name:<20}" + "".join(f"{results[b][name] * 1e3:>10.2f}ms" for b in backends)
        if "cython" in results and "python" in results:
            row += f"{results['python'][name] / results['cython'][name]:>11.2f}x"
        print(row)
    if len(backends) > 1:
        same = all(np.array_equal(int8_out[backends[0]], int8_out[b]) for b in backends[1:])
        print(f"int8 outputs identical across backends: {same}")


if __name__ == "__main__":
    main()
