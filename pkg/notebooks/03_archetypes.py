"""
Archetypal analysis with a shared generator
===========================================

Archetypes are convex combinations of the (masked) data columns, and each
column is reconstructed as a convex combination of archetypes.
"""

import numpy as np

from cogede import FitConfig, SynthConfig, fit, fit_aa_sgd, synth_dataset

ds = synth_dataset(SynthConfig(n_subjects=2, n_timepoints=30, seed=2))

violations = []


def watch(it, G, S_list):
    violations.append(max(np.abs(M.sum(axis=0) - 1).max() for M in (G, *S_list)))


res = fit_aa_sgd(ds, FitConfig(K=4, seed=0), callback=watch)
print("aa sse", round(res.final_sse, 3), "after", res.iterations, "iterations")
print("largest simplex violation", max(violations))

# %%
# On a single block AA can never beat unregularized sparse PCA.
from cogede import stack_group

g = stack_group(ds)
aa = fit_aa_sgd(g, FitConfig(K=4, seed=0))
spca = fit(g, FitConfig(K=4, engine="qp"))
print("aa", round(aa.final_sse, 3), ">= spca", round(spca.final_sse, 3))
