"""
Cost of one alignment step as the feature width grows
=====================================================

TikUDA inverts a regularised Gram matrix through a Cholesky factorisation.
DARE-GRAM needs a full eigendecomposition to build its truncated
pseudo-inverse.  Both are cubic in the feature width ``p`` but the constants
differ a lot.  Here we time loss plus backward on one BLAS thread.

Pass widths on the command line to change the sweep::

    python demos/03_alignment_runtime.py 256 512 1024 2048
"""
import sys

from tikuda import bench

widths = [int(a) for a in sys.argv[1:]] or [64, 256, 512, 1024]

rows = bench.bench_alignment(widths, batch=64, iters=20)
print(f"{'p':>6s} {'method':>10s} {'median ms':>10s} {'p10 ms':>8s} {'p90 ms':>8s}")
for r in rows:
    print(f"{r.p:>6d} {r.method:>10s} {1e3 * r.median_s:>10.2f} {1e3 * r.p10_s:>8.2f} {1e3 * r.p90_s:>8.2f}")

# the speed-up of TikUDA over DARE-GRAM widens with p
for p, ratio in bench.speed_ratios(rows).items():
    print(f"p = {p:>5d}: DARE-GRAM / TikUDA = {ratio:.1f}x")
