"""
Cross-checking against brute-force oracles
==========================================

The oracle path recomputes everything with explicit sums and a cyclic
Jacobi eigensolver, sharing no code with the production routines.
"""

import numpy as np

from rrstates.indicators import distance_matrix
from rrstates.spectral import Approach, reduced_rank_pipeline
from rrstates.synth import jacobi_eigh, oracle_distance, oracle_pipeline

a = np.array([[2.0, 1, 0], [1, 2, 1], [0, 1, 2]])
print("Jacobi eigenvalues:", jacobi_eigh(a)[0], "expected", [2 - 2**0.5, 2, 2 + 2**0.5])

rng = np.random.default_rng(0)
worst = 0.0
mats = []
for _ in range(25):
    k = int(rng.integers(3, 15))
    block = rng.standard_normal((k, int(rng.integers(k + 2, 120))))
    for approach in Approach:
        ours = reduced_rank_pipeline(block, approach)
        worst = max(worst, np.abs(ours.matrix - oracle_pipeline(block, approach).matrix).max())

    if k == 8:
        mats.append(reduced_rank_pipeline(block, Approach.COVARIANCE))
print("largest pipeline difference: %.1e" % worst)

if len(mats) > 1:
    err = np.abs(distance_matrix(mats).values - oracle_distance(mats)).max()
    print("largest distance difference over %d matrices: %.1e" % (len(mats), err))
