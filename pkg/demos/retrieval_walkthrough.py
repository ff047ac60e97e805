"""
Retrieving one concept, step by step
====================================

Builds a small dictionary of sparse strokes, stores a handful of concepts
over it, and follows a clean cue through the stroke layer and the
winner-take-all readout.
"""

import math

import numpy as np

from strokemem.core_model import (
    ModelParams,
    SizeDistribution,
    compose_cue,
    sample_concept_book,
    sample_stroke_dictionary,
)
from strokemem.retrieval import (
    GoodEventParams,
    concept_scores,
    error_counts,
    good_event,
    hits,
    max_overlap,
    overlaps,
    stroke_layer,
    wta_decode,
)

# %%
# A model with 4096 features, 200 strokes and 20 concepts of four strokes.
# Each feature bit is on with probability ln(N_f) / N_f, so a stroke has
# about ln(4096) = 8.3 active features.
params = ModelParams(4096, 200, 20, 0.5, SizeDistribution.fixed(4))
print("sparsity p =", round(params.sparsity, 6), " threshold =", round(params.threshold, 3))

dictionary = sample_stroke_dictionary(params, seed=7)
book = sample_concept_book(params, seed=7)
print("stroke weights (first 10):", dictionary.weights[:10])

# %%
# The cue for concept 0 is the OR of its strokes.  Every stroke in the
# concept overlaps the cue in all of its active features.
target = book.concept(0)
cue = compose_cue(dictionary, target)
ov = overlaps(dictionary, cue)
print("target strokes:", target)
print("their overlaps:", ov[target], " their weights:", dictionary.weights[target])

# %%
# Strokes whose overlap reaches the threshold switch on.  Light strokes in
# the target can miss; heavy strokes that share many features with the cue
# can fire spuriously.
act = stroke_layer(ov, params.threshold)
err = error_counts(act, target)
print("active strokes:", act.active)
print("missed:", err.false_negatives, " spurious:", err.false_positives)

# %%
# The robustness certificate tolerates a quarter of the target missing and
# one spurious stroke.  The decoder counts hits per concept and picks the
# largest, and the closest competitor shares t* strokes with the target.
gp = GoodEventParams(0.25, 1)
h = hits(book, act)
print("good event holds:", good_event(err, gp))
print("hits:", h)
print("t* =", max_overlap(book, 0), " margin needs t* + rho <", (1 - gp.delta) * len(target))
print("decoded concept:", wta_decode(concept_scores(book, act)))

# %%
# Overlap with the cue is only large for the target strokes.
others = np.setdiff1d(np.arange(params.n_strokes), target)
print("largest non-target overlap:", ov[others].max(),
      " expected background:", round(cue.support.size * params.sparsity, 3),
      " ln N_f =", round(math.log(params.n_features), 3))
