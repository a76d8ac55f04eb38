"""Stitched graphical Gaussian process models for multivariate spatial data."""

from . import errors
from .errors import (
    ConfigError,
    CycleDetectedError,
    DegenerateMismatchError,
    DimensionMismatchError,
    EmptyChainError,
    GpStitchError,
    InsufficientReplicatesError,
    InvalidCrossSpecError,
    MisalignedDataError,
    MissingEdgeParameterError,
    NoConvergenceError,
    NoLegalMoveError,
    NotDecomposableError,
    NotPositiveDefiniteError,
    PriorMisconfiguredError,
)
from .graphs import (
    CliqueSequence,
    Coloring,
    JunctionTree,
    VariableGraph,
    ar_graph,
    count_junction_trees,
    edge_graph,
    graph_from_json,
    graph_to_json,
    greedy_coloring,
    is_decomposable,
    junction_tree,
    lmc_graph,
    moralize,
    perfect_clique_sequence,
    sample_junction_tree,
    strong_product,
    var_graph,
)
from .kernels import (
    CrossSpec,
    MaternMarginal,
    ShiftSpec,
    b_from_sigma,
    cov_block,
    cross_cov_mm,
    matern_corr,
    params_from_json,
    params_to_json,
    shift_cross_cov,
    sigma_from_b,
    validate_cross_spec,
)
from .covsel import (
    ImplicitPrecision,
    SelectedCovariance,
    SelectionProblem,
    SelectionResiduals,
    decomposable_select,
    ips_select,
    verify_selection,
)
from .stitching import (
    KnotSet,
    Realization,
    StitchedModel,
    build,
    cross_cov_stitched,
    model_from_json,
    model_to_json,
    parameter_census,
    realization_to_csv,
    response_model,
    simulate,
)
from .likelihood import (
    LogLikBreakdown,
    analytic_b_score,
    loglik_conditional,
    loglik_knots,
    loglik_knots_batch,
    precision_apply,
    precision_logdet,
    score_mc_test,
    subset_term,
)
from .data import (
    Dataset,
    VarData,
    aligned_arrays,
    choose_knots,
    load_dataset,
    save_dataset,
)
from .errors import ParseError
from .mle import MleConfig, MleResult, fit_mle
from .gibbs import (
    ChainState,
    PosteriorSamples,
    PredictionSummary,
    PriorSpec,
    chains_to_csv,
    chromatic_schedule,
    effective_sample_size,
    gibbs_latent,
    gibbs_response,
    predict,
    summary_json,
)
from .graph_mcmc import (
    GraphSamples,
    edge_prob_csv,
    graph_trace_jsonl,
    run_graph_mcmc,
    tree_adjacency,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "GpStitchError",
    "NotDecomposableError",
    "CycleDetectedError",
    "NotPositiveDefiniteError",
    "InvalidCrossSpecError",
    "MissingEdgeParameterError",
    "DimensionMismatchError",
    "DegenerateMismatchError",
    "MisalignedDataError",
    "NoConvergenceError",
    "InsufficientReplicatesError",
    "EmptyChainError",
    "NoLegalMoveError",
    "PriorMisconfiguredError",
    "ConfigError",
    "VariableGraph",
    "CliqueSequence",
    "JunctionTree",
    "Coloring",
    "is_decomposable",
    "perfect_clique_sequence",
    "strong_product",
    "greedy_coloring",
    "edge_graph",
    "moralize",
    "ar_graph",
    "var_graph",
    "lmc_graph",
    "junction_tree",
    "count_junction_trees",
    "sample_junction_tree",
    "graph_to_json",
    "graph_from_json",
    "MaternMarginal",
    "CrossSpec",
    "ShiftSpec",
    "matern_corr",
    "sigma_from_b",
    "b_from_sigma",
    "cross_cov_mm",
    "validate_cross_spec",
    "shift_cross_cov",
    "cov_block",
    "params_to_json",
    "params_from_json",
    "SelectionProblem",
    "SelectedCovariance",
    "SelectionResiduals",
    "ImplicitPrecision",
    "ips_select",
    "decomposable_select",
    "verify_selection",
    "KnotSet",
    "StitchedModel",
    "Realization",
    "build",
    "cross_cov_stitched",
    "simulate",
    "response_model",
    "parameter_census",
    "realization_to_csv",
    "model_to_json",
    "model_from_json",
    "LogLikBreakdown",
    "loglik_knots",
    "loglik_knots_batch",
    "loglik_conditional",
    "precision_apply",
    "precision_logdet",
    "subset_term",
    "analytic_b_score",
    "score_mc_test",
    "Dataset",
    "VarData",
    "load_dataset",
    "save_dataset",
    "choose_knots",
    "aligned_arrays",
    "ParseError",
    "MleConfig",
    "MleResult",
    "fit_mle",
    "PriorSpec",
    "ChainState",
    "PosteriorSamples",
    "PredictionSummary",
    "chromatic_schedule",
    "gibbs_latent",
    "gibbs_response",
    "predict",
    "effective_sample_size",
    "chains_to_csv",
    "summary_json",
    "GraphSamples",
    "run_graph_mcmc",
    "edge_prob_csv",
    "graph_trace_jsonl",
    "tree_adjacency",
    "__version__",
]
