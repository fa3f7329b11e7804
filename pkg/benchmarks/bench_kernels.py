"""Compare the compiled and pure-numpy im2col/col2im kernels.

Times the raw kernels on encoder-sized inputs and a full time-encoder
forward+backward pass with each backend, and checks both give the same
numbers.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from duple.diffcore import ParamStore, kernels
from duple.diffcore import _kernels_py
from duple.encoders import FreqEncoder, TimeEncoder


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=21, help="signals per pass (3-way 3-shot 4-query = 21)")
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled kernels are not built; only the numpy backend is available")
        return
    from duple.diffcore import _kernels

    rng = np.random.default_rng(0)
    x1 = np.ascontiguousarray(rng.normal(size=(args.batch, 16, 2048)))
    x2 = np.ascontiguousarray(rng.normal(size=(args.batch, 8, 17, 67)))
    cases = {
        "im2col1d (B,16,2048) k7 s2": lambda m: m.im2col1d(x1, 7, 2, 1021),
        "col2im1d (B,1021,112)": lambda m: m.col2im1d(c1, 16, 2048, 7, 2),
        "im2col2d (B,8,17,67) 3x3 s2": lambda m: m.im2col2d(x2, 3, 3, 2, 8, 33),
        "col2im2d (B,264,72)": lambda m: m.col2im2d(c2, 8, 17, 67, 3, 3, 2, 8, 33),
    }
    c1 = _kernels_py.im2col1d(x1, 7, 2, 1021)
    c2 = _kernels_py.im2col2d(x2, 3, 3, 2, 8, 33)
    print(f"{'kernel':32s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        np.testing.assert_allclose(fn(_kernels), fn(_kernels_py), atol=1e-12)
        tc, tp = best_of(lambda: fn(_kernels), args.repeat), best_of(lambda: fn(_kernels_py), args.repeat)
        print(f"{name:32s} {tc * 1e3:10.2f} {tp * 1e3:10.2f} {tp / tc:8.2f}")

    store = ParamStore(222)
    te, fe = TimeEncoder(store, 4096), FreqEncoder(store, (31, 129))
    xt, xs = rng.normal(size=(args.batch, 4096)), rng.normal(size=(args.batch, 31, 129))

    def encoder_pass():
        out = (te(xt).sum() + fe(xs).sum())
        out.backward()
        return out.item()

    results = {}
    for backend in ("cython", "python"):
        prev = kernels.use(backend)
        try:
            value = encoder_pass()
            results[backend] = (value, best_of(encoder_pass, args.repeat))
        finally:
            kernels.use(prev)
    (vc, tc), (vp, tp) = results["cython"], results["python"]
    assert abs(vc - vp) <= 1e-9 * max(1.0, abs(vp))
    print(f"{'encoders fwd+bwd, batch ' + str(args.batch):32s} {tc * 1e3:10.2f} {tp * 1e3:10.2f} {tp / tc:8.2f}")


if __name__ == "__main__":
    main()
