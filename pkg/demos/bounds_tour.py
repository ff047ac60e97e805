"""
A tour of the closed-form bounds
================================

Evaluates the tail bounds that control retrieval and sets each next to an
exact value where one is cheap to compute.
"""

import math

from strokemem import bounds

# %%
# Chernoff-type binomial tail: P(Bin(T, p) >= k) <= (e T p / k)^k for k > Tp,
# informative once k exceeds e T p.
for T, p, k in [(10, 0.1, 5), (100, 0.05, 15), (200, 0.05, 30)]:
    print(f"Bin({T}, {p}) >= {k}: exact {bounds.binom_tail_exact(T, p, k):.3e}"
          f"  bound {bounds.binom_tail_bound(T, p, k):.3e}")

# %%
# Overlap between two random concepts.  The exact hypergeometric tail and the
# union bound C(L, t+1) (L / (M - t))^(t+1) agree closely when M is large.
for M in (50, 200, 1000):
    exact = bounds.overlap_tail_exact(4, 4, M, 1)
    bound = bounds.overlap_tail_bound_variable(4, 4, M, 1)
    print(f"M={M:5d}  P(overlap >= 2) exact {exact:.5f}  bound {bound:.5f}")

# %%
# Over P - 1 competitors the bound is multiplied by P - 1.
print("P=20, L=4, M=200, t=1:", bounds.overlap_tail_bound(20, 4, 200, 1))

# %%
# The largest overlap level the margin condition allows.  With no size
# penalty this is the largest t with t + rho < (1 - delta) L.
print("margin threshold L=4, delta=0.25, rho=1:", bounds.margin_threshold(4, 4, 0.25, 1, 1, 0))
print("penalised, window [2, 8], delta=0.1, rho=0, b/a=0.25:",
      bounds.margin_threshold(2, 8, 0.1, 0, 1, 0.25))

# %%
# The good event fails when a target stroke is too light or too many
# non-target strokes cross the threshold.  The plug-in form uses exact
# binomial probabilities; the sparse form uses asymptotic envelopes and
# only becomes small for very large N_f.
for n_f in (1024, 4096, 2**16, 2**20):
    plug = bounds.good_event_bound_plugin(n_f, 200, 4, 0.5, 0.25, 1)
    try:
        sparse = bounds.good_event_bound_sparse(n_f, 200, 4, 0.5, 1, 3 * math.e * 4)
    except bounds.OutOfRegimeError:
        sparse = math.nan
    print(f"N_f={n_f:8d}  plug-in {plug:.4f}  sparse {sparse:.4g}")

# %%
# Polynomial scaling M = N_f^gamma, P = N_f^r: retrieval at overlap level t
# needs gamma > r / (t + 1), or twice that uniformly over all concepts.
print("gamma=0.66, r=0.26, t=1:", bounds.capacity_exponent_check(0.66, 0.26, 1))
print("uniformly:", bounds.capacity_exponent_check(0.66, 0.26, 1, uniform=True))
