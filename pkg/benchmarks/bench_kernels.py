"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Sizes follow the three-target FODC sensing scene on a 1000-point grid.
"""
import argparse
import time

import numpy as np

from fda_isac import kernels


def _crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _cases(rng):
    m = n = 6
    a = _crandn(rng, m * n, m * n)
    qinv = np.linalg.inv(a @ a.conj().T + np.eye(m * n))
    aR = np.exp(2j * np.pi * rng.uniform(size=(1000, m)))
    aT = np.exp(2j * np.pi * rng.uniform(size=(1000, n)))
    ar = np.exp(2j * np.pi * rng.uniform(size=(1000, n)))
    y, h = _crandn(rng, 20000, 2), _crandn(rng, 20000, 2)
    sym = _crandn(rng, 16)
    z = kernels.numpy_backend.z_blocks(qinv, aR, aT)
    z1, aR1, aT1 = z[:1].copy(), aR[:1].copy(), aT[:1].copy()
    return {
        "z_blocks": lambda be: be.z_blocks(qinv, aR, aT),
        "capon_grid": lambda be: be.capon_grid(z, ar),
        "schur_spectrum": lambda be: be.schur_spectrum(z),
        "ml_detect": lambda be: be.ml_detect(y, h, sym),
        # shapes seen in a range scan and in point-wise refinement
        "capon_1xSr": lambda be: be.capon_grid(z1, ar),
        "z_blocks_1": lambda be: be.z_blocks(qinv, aR1, aT1),
        "schur_1": lambda be: be.schur_spectrum(z1),
        "capon_1x1": lambda be: be.capon_grid(z1, ar[:1]),
    }


def _best(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = [("numpy", kernels.numpy_backend)]
    if kernels.numba_backend is not None:
        backends.append(("numba", kernels.numba_backend))
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<16}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for kname, run in cases.items():
        t = [_best(lambda be=be: run(be), args.repeat) for _, be in backends]
        speed = f"{t[0] / t[1]:>9.1f}x" if len(t) > 1 else f"{'n/a':>10}"
        print(f"{kname:<16}" + "".join(f"{x * 1e3:>10.2f}ms" for x in t) + speed)


if __name__ == "__main__":
    main()
