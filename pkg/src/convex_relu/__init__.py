"""Convex training of two-layer ReLU and Gated-ReLU networks."""

from .data import (
    ColumnScaler,
    Dataset,
    apply_expanded,
    apply_expanded_adjoint,
    denormalize_weights,
    estimate_operator_norm,
    normalize_columns,
)
from .decomp import CdaConfig, Decomposition, cd_approx, closed_form_decompose, decompose_model
from .fista import GReLUConfig, SolverReport, group_prox, min_norm_subgrad_sq
from .grelu import objective, solve_grelu
from .network import (
    GReLUNetwork,
    ReLUNetwork,
    grelu_to_network,
    load_model,
    nc_objective,
    predict_grelu,
    predict_relu,
    save_model,
)
from .patterns import (
    PatternSet,
    cone_gap,
    enumerate_all_patterns,
    patterns_from_weights,
    sample_gate_patterns,
    signed_matrix_apply,
    strict_feasibility,
    union,
)
from .relu import ALConfig, DualVars, ReLUWeights, relu_objective, relu_to_network, solve_relu
from .synth import synth_realizable

__all__ = [
    "ALConfig", "CdaConfig", "ColumnScaler", "Dataset", "Decomposition", "DualVars",
    "GReLUConfig", "GReLUNetwork", "PatternSet", "ReLUNetwork", "ReLUWeights", "SolverReport",
    "apply_expanded", "apply_expanded_adjoint", "cd_approx", "closed_form_decompose", "cone_gap",
    "decompose_model", "denormalize_weights", "enumerate_all_patterns", "estimate_operator_norm",
    "grelu_to_network", "group_prox", "load_model", "min_norm_subgrad_sq", "nc_objective",
    "normalize_columns", "objective", "patterns_from_weights", "predict_grelu", "predict_relu",
    "relu_objective", "relu_to_network", "sample_gate_patterns", "save_model", "signed_matrix_apply",
    "solve_grelu", "solve_relu", "strict_feasibility", "synth_realizable", "union",
]
