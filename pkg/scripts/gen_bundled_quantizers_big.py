"""L=200 and L=400 bundled quantizers: capped sample-Lloyd for a good
initialization, then exact Lloyd polish to stationarity."""
import time

from p2hopt.quantization import (lloyd_generate, refine_with_exact_probabilities,
                                 save_quantizer)

SPECS = {200: (2_000_000, 13, 60, 20), 400: (2_500_000, 14, 60, 20)}

for L, (samples, seed, cap, polish) in SPECS.items():
    t0 = time.time()
    q = lloyd_generate(L, samples, seed=seed, max_iter=cap)
    t1 = time.time()
    q = refine_with_exact_probabilities(q, polish_iters=polish)
    t2 = time.time()
    path = f"src/p2hopt/data/quantizer_L{L}.txt"
    save_quantizer(path, q)
    print(f"L={L}: lloyd {t1-t0:.1f}s polish {t2-t1:.1f}s "
          f"distortion {q.distortion:.6f} -> {path}", flush=True)
