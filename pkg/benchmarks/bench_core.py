"""Wall-clock timings of the hot paths: moment estimation, axis search, RL.

    python3 benchmarks/bench_core.py
"""
import time

import numpy as np

from zernsym import psf as P
from zernsym.grid import ImageGrid
from zernsym.imaging import NoiseSpec, TargetSpec, add_noise, eval_target, snr_scale
from zernsym.symmetry import estimate_axis
from zernsym.zernike import PIXEL_INTEGRATED, estimate_moments


def timeit(label, func, repeat=5):
    func()  # warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        func()
        times.append(time.perf_counter() - t0)
    print(f"{label:<42s} {1e3 * min(times):9.2f} ms")


def main():
    for m in (51, 101, 201):
        g = add_noise(snr_scale(eval_target(TargetSpec("f1"), ImageGrid.zeros(m)), 5.0),
                      NoiseSpec(seed=1))
        timeit(f"estimate_moments midpoint m={m} N=7", lambda: estimate_moments(g, 7))
        timeit(f"estimate_moments pixel m={m} N=7",
               lambda: estimate_moments(g, 7, PIXEL_INTEGRATED))
        timeit(f"estimate_axis m={m} N=7", lambda: estimate_axis(g))

    bead = P.BeadSpec()
    k = P.true_psf(bead)
    data = np.random.default_rng(0).poisson(
        np.clip(P.convolve(400 * P.cell_phantom().values, k.kernel).values, 0, None)
    ).astype(float)
    timeit("richardson_lucy 128x128, 100 iters",
           lambda: P.richardson_lucy(data, k, 100, callback=lambda *a: None), repeat=2)


if __name__ == "__main__":
    main()
