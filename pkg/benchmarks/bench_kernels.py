"""Compiled vs pure-numpy timings for the two hot kernels.

    python3 benchmarks/bench_kernels.py [--particles 8192] [--T 500] [--repeat 5]

Both variants are called directly, so SEQPOST_DISABLE_NUMBA does not matter
here. Outputs are compared before timing; the Philox kernels must agree bit for bit.
"""

import argparse
import time

import numpy as np

from seqpost import _accel
from seqpost.models import EgarchModel
from seqpost.models.egarch import egarch_loglik
from seqpost.particles import init_particles
from seqpost.rng import RandomStream, StreamKey, _uniform_blocks_numba, _uniform_blocks_numpy


def best_of(fn, repeat):
    fn()  # warm-up, includes compilation
    times = []
    for _ in range(repeat):
        tic = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tic)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--particles", type=int, default=8192)
    ap.add_argument("--T", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    P = args.particles
    group = np.repeat(np.arange(16, dtype=np.int64), -(-P // 16))[:P]
    particle = np.arange(P, dtype=np.int64) % (-(-P // 16))
    fast = lambda: _uniform_blocks_numba(123, 456, group, particle, 7, 0, 8)
    slow = lambda: _uniform_blocks_numpy(123, 456, group, particle, 7, 0, 8)
    assert np.array_equal(fast(), slow())
    rows = [("philox uniforms", best_of(fast, args.repeat), best_of(slow, args.repeat))]

    model = EgarchModel(2, 3)
    y = model.simulate(model.prior_mean, args.T, RandomStream(StreamKey(1)))
    params = model.transform(init_particles(model, 16, -(-P // 16), 2).flat_theta()[:P])
    fast = lambda: egarch_loglik(params, y, use_numba=True)
    slow = lambda: egarch_loglik(params, y, use_numba=False)
    a, b = fast()[0], slow()[0]
    close = np.isclose(a, b, rtol=1e-12) | ((a == b) & np.isinf(a))
    # explosive prior draws amplify last-bit differences between the two exp/log implementations
    print(f"egarch scan: {close.mean():.2%} of particles agree to 1e-12")
    rows.append((f"egarch(2,3) scan, T={args.T}", best_of(fast, args.repeat), best_of(slow, args.repeat)))

    print(f"{P} particles, best of {args.repeat}")
    print(f"{'kernel':<28}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for name, a, b in rows:
        print(f"{name:<28}{a:>10.4f}{b:>10.4f}{b / a:>9.1f}")


if __name__ == "__main__":
    main()
