"""Multigraph signal processing and multigraph convolutional neural networks.

A multigraph carries several edge sets on one vertex set; each edge set gets
its own sparse shift operator. Filters are polynomials in the (generally
non-commuting) shifts, indexed by words over the generator alphabet. On top
of the filter algebra sit trainable multigraph perceptron stacks with
selection sampling and pooling, plus synthetic benchmark tasks and a CLI.
"""

from .multigraph import (
    Multigraph,
    MultigraphError,
    Permutation,
    SparseShift,
    build_multigraph,
    commutator_norm,
    load_multigraph,
    normalize_shift,
    permute_multigraph,
    permute_signal,
    save_multigraph,
    shift_apply,
)
from .words import (
    MonomialBasis,
    check_pruning_bound,
    enumerate_monomials,
    prune_basis,
    unpruned_size,
    word_sort_key,
)
from .filters import MultigraphFilter, apply_filter, filter_adjoint_apply
from .sampling import (
    SamplingMatrices,
    SamplingPlan,
    build_plan,
    compute_centrality,
    multigraph_neighborhood,
    neighborhoods,
    pool,
    sample_shift,
    sample_signal,
)
from .model import (
    MgnnModel,
    PerceptronLayer,
    TrainConfig,
    check_equivariance,
    loss_and_gradients,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Multigraph",
    "MultigraphError",
    "Permutation",
    "SparseShift",
    "build_multigraph",
    "commutator_norm",
    "load_multigraph",
    "normalize_shift",
    "permute_multigraph",
    "permute_signal",
    "save_multigraph",
    "shift_apply",
    "MonomialBasis",
    "check_pruning_bound",
    "enumerate_monomials",
    "prune_basis",
    "unpruned_size",
    "word_sort_key",
    "MultigraphFilter",
    "apply_filter",
    "filter_adjoint_apply",
    "SamplingMatrices",
    "SamplingPlan",
    "build_plan",
    "compute_centrality",
    "multigraph_neighborhood",
    "neighborhoods",
    "pool",
    "sample_shift",
    "sample_signal",
    "MgnnModel",
    "PerceptronLayer",
    "TrainConfig",
    "check_equivariance",
    "loss_and_gradients",
    "train",
]
