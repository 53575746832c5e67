"""Objective Bayesian variable selection and decomposable graphical-model
selection for Gaussian regression with missing-at-random covariates."""

from .datamodel import (
    DataError,
    Dataset,
    Mar,
    Mcar,
    MissingnessPattern,
    ModelIndex,
    SimConfig,
    group_patterns,
    load_dataset,
    serialize_dataset,
    simulate_dataset,
)
from .gauss import (
    NiwParams,
    NotSpdError,
    cholesky_logdet,
    conditional_normal,
    niw_posterior,
    sample_inverse_wishart,
    sample_mvn,
    sample_niw,
    wishart_log_normalizer,
)
from .graphs import (
    DecomposableGraph,
    GraphChainConfig,
    ZDataset,
    exact_graph_posterior,
    graph_mcmc_collapsed,
    graph_mcmc_missing,
    hiw_log_marginal,
    induced_regression_check,
    is_decomposable,
    regression_graph,
    sample_hiw,
)
from .impute import (
    ImputationDraw,
    ImputationStream,
    MvnParams,
    StreamConfig,
    da_gibbs_params,
    default_niw_prior,
    draw_x_miss,
    draw_x_miss_given_y,
    make_stream,
)
from .priors import (
    BetaBinomial,
    Classical,
    Imputation,
    InducedFractional,
    Uniform,
    induced_fractional_prior,
    log_marginal_classical,
    log_marginal_imputation,
    log_marginal_induced,
    log_model_prior,
)
from .search import (
    ChainOutput,
    McmcConfig,
    PosteriorSummary,
    RbEstimate,
    enumerate_models,
    estimate_probs,
    gibbs_informed,
    its_two_stage,
    mc3_complete,
    rb_marginal,
    sias_embedded,
    variance_benchmark,
)

__version__ = "0.1.0"
