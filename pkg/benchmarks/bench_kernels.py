"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times general-order Matérn evaluation on a 400-site distance matrix and a
block of ICAR Gibbs sweeps on an 11x11 lattice, and checks that the two
backends agree on the results.
"""
import argparse
import sys
import timeit

import numpy as np

from spconf import _pykernels
from spconf.numerics import distance_matrix, graph_laplacian, laplacian_spectrum, rook_adjacency

try:
    from spconf import _ckernels
except ImportError:
    _ckernels = None


def matern_case():
    locs = np.random.default_rng(0).uniform(0, 10, (400, 2))
    d = distance_matrix(locs)

    def run(mod):
        return mod.matern_values(d, 2.5, 1.3)

    return run


def gibbs_case(sweeps=2000):
    q = graph_laplacian(rook_adjacency(11))
    lam, vecs = laplacian_spectrum(q)
    vecs = np.ascontiguousarray(vecs)
    rng = np.random.default_rng(1)
    n = q.shape[0]
    x = rng.standard_normal(n)
    y = 3 * x + 0.2 * rng.standard_normal(n)
    normals = rng.standard_normal((sweeps, n + 1))
    gammas = rng.standard_gamma([0.01 + n / 2, 0.01 + (n - 1) / 2], size=(sweeps, 2))
    init = np.concatenate([[3.0, 0.04, 1.0, 0.0], np.zeros(n)])

    def run(mod):
        state = init.copy()
        out = np.empty((sweeps, 5))
        mod.icar_gibbs(y, x, vecs, lam, state, normals, gammas, (0.01, 0.01), out)
        return out

    return run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; only the numpy backend is available")
        return 1
    for name, run in (("matern 400x400, nu=1.3", matern_case()), ("ICAR Gibbs 2000 sweeps, n=121", gibbs_case())):
        a, b = run(_pykernels), run(_ckernels)
        rel = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300)))
        t_py = min(timeit.repeat(lambda: run(_pykernels), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: run(_ckernels), number=1, repeat=args.repeat))
        print(f"{name:32s} numpy {t_py * 1e3:9.2f} ms  cython {t_c * 1e3:9.2f} ms  "
              f"speed-up {t_py / t_c:6.1f}x  max rel diff {rel:.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
