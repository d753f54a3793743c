"""Regenerate the bundled standard-Gaussian quantizer files.

Randomized Lloyd on a large sample, then exact Lloyd polish (cell
barycenters and masses by quadrature) so the shipped point sets are
stationary for the true Gaussian, not just for the sample.
"""
import sys
import time

from p2hopt.quantization import (lloyd_generate, refine_with_exact_probabilities,
                                 save_quantizer, quantizer_distortion)

SPECS = {50: (1_000_000, 11), 100: (2_000_000, 12), 200: (3_000_000, 13),
         400: (4_000_000, 14)}

for L, (samples, seed) in SPECS.items():
    t0 = time.time()
    q = lloyd_generate(L, samples, seed=seed)
    t1 = time.time()
    q = refine_with_exact_probabilities(q, polish_iters=12)
    t2 = time.time()
    path = f"src/p2hopt/data/quantizer_L{L}.txt"
    save_quantizer(path, q)
    print(f"L={L}: lloyd {t1-t0:.1f}s distortion {q.distortion:.6f} "
          f"polish {t2-t1:.1f}s -> {path}", flush=True)
