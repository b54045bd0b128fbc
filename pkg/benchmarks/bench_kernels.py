"""Compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Times every kernel at a toy size and at the canonical model's largest
temporal convolution, checks the two backends agree, and prints a table.
"""

import argparse
import timeit

import numpy as np

from tagcn._kernels import _reference

try:
    from tagcn._kernels import _ckernels
except ImportError:
    _ckernels = None

SIZES = {
    # batch, channels, frames, joints, kernel, stride
    "toy": (8, 16, 16, 5, 9, 1),
    "canonical": (1, 128, 150, 25, 9, 2),
}


def cases(b, c, t, n, k, stride):
    rng = np.random.default_rng(0)
    pad = (k - 1) // 2
    x = rng.normal(size=(b, c, t, n))
    w = rng.normal(size=(c, c, k))
    g = rng.normal(size=(b, c, (t + 2 * pad - k) // stride + 1, n))
    scores = rng.random((b * 64, t))
    return {
        "conv forward": lambda m: m.temporal_conv_forward(x, w, stride, pad),
        "conv grad weight": lambda m: m.temporal_conv_backward_weight(g, x, k, stride, pad),
        "conv grad input": lambda m: m.temporal_conv_backward_input(g, w, t, stride, pad),
        "top indices": lambda m: m.top_indices(scores, t // 2, True),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _ckernels is None:
        print("compiled kernels are not built; only the numpy fallback is available")
        return
    print(f"{'size':<10}{'kernel':<18}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}")
    for size, dims in SIZES.items():
        for name, fn in cases(*dims).items():
            np.testing.assert_allclose(fn(_ckernels), fn(_reference), atol=1e-9)
            ref = min(timeit.repeat(lambda: fn(_reference), number=1, repeat=args.repeat))
            fast = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
            print(f"{size:<10}{name:<18}{ref * 1e3:>10.2f}{fast * 1e3:>13.2f}"
                  f"{ref / fast:>8.1f}x")


if __name__ == "__main__":
    main()
