"""Coupled generator decomposition: sparse PCA and archetypal analysis across data blocks.

Blocks ``X_b`` (channels x shared axis) are modelled as ``X_b ~ X_tilde_b G S_b``
with one generator ``G`` shared by all blocks and block-specific mixing ``S_b``.
"""

from .aa import fit_aa_sgd, softmax_cols
from .core import (
    DegeneracyWarning,
    Generator,
    LossTrace,
    MixingSet,
    NonSmoothPointError,
    RegPair,
    converged,
    envelope_gradient,
    procrustes_update,
    softplus_map,
    spca_objective,
    sse,
)
from .data import (
    DatasetError,
    ErpBlock,
    FusionDataset,
    SynthConfig,
    as_formulation,
    load_dataset,
    make_tilde_mask,
    save_dataset,
    stack_conditions,
    stack_group,
    stack_multimodal,
    synth_dataset,
)
from .selection import GridSpec, SelectionTable, anneal_grid, heldout_loss, select_model, sweep_K
from .spca import (
    FitConfig,
    FitError,
    FitResult,
    elastic_net_cd,
    fit,
    fit_spca_qp,
    fit_spca_sgd,
    init_pca,
    init_random,
)

__version__ = "0.1.0"
