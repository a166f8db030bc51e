"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from hvfae._kernels import _pykernels

try:
    from hvfae._kernels import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    z = rng.standard_normal((100, 50))
    mean = rng.standard_normal((50, 50))
    sigma = rng.uniform(0.5, 1.5, (50, 50))
    g = rng.standard_normal((100, 50))
    a, b = rng.standard_normal((60, 50)), rng.standard_normal((40, 50))
    x = rng.standard_normal((100, 100)) * 5
    k = _pykernels.rbf_gram(a, b, 50.0)
    g2 = rng.standard_normal((60, 40))
    return {
        "pairwise_gauss_logpdf 100x50x50": ("pairwise_gauss_logpdf", (z, mean, sigma)),
        "pairwise_gauss_logpdf_grad": ("pairwise_gauss_logpdf_grad", (z, mean, sigma, g)),
        "rbf_gram 60x40x50": ("rbf_gram", (a, b, 50.0)),
        "rbf_gram_grad": ("rbf_gram_grad", (a, b, 50.0, k, g2)),
        "softplus_sigmoid 100x100": ("softplus_sigmoid", (x,)),
    }


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args()
    rng = np.random.Generator(np.random.PCG64(0))
    print(f"{'kernel':34s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, (name, inputs) in cases(rng).items():
        t_py = min(timeit.repeat(lambda: getattr(_pykernels, name)(*inputs), number=10,
                                 repeat=args.repeat)) / 10 * 1e3
        if _ckernels is None:
            print(f"{label:34s} {t_py:10.3f} {'n/a':>10s}")
            continue
        t_c = min(timeit.repeat(lambda: getattr(_ckernels, name)(*inputs), number=10,
                                repeat=args.repeat)) / 10 * 1e3
        print(f"{label:34s} {t_py:10.3f} {t_c:10.3f} {t_py / t_c:7.2f}x")


if __name__ == "__main__":
    main()
