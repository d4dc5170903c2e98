"""
Annealed grids and the model-order sweep
========================================

For each lambda2 the lambda1 values are visited in ascending order, each fit
warm-started from the previous one. The pair with the lowest validation loss
is selected, and the test loss at that pair is averaged over initializations.
"""

from cogede import GridSpec, SynthConfig, anneal_grid, select_model, synth_dataset
from cogede.selection import sweep_K

ds = synth_dataset(SynthConfig(n_subjects=2, n_timepoints=30, seed=3, heterogeneity=0.5))
grid = GridSpec(lambda1_values=[0, 1e-3, 1e-1], lambda2_values=[0, 1e-1],
                K_values=[2, 3, 4], n_inits=3)

table = anneal_grid(ds, 3, grid, engine="sgd", seeds=[0], init="pca")
for r in table:
    print(f"l2={r.lambda2:<6g} l1={r.lambda1:<6g} train {r.train_sse:9.3f} val {r.val_sse:9.3f}")
print("selected (lambda1, lambda2, seed):", select_model(table, 3))

# %%
# Test loss per formulation and model order: the quantities of a loss-vs-K plot.
_, summary = sweep_K(ds, grid, formulations=("group", "multimodal_multisubject"),
                     max_iters=2000)
for s in summary:
    print(f"{s.formulation:24s} K={s.K}  test {s.mean_test_sse:9.3f} +- {s.sd_test_sse:.3f}")
