"""Amortized posterior sampling over cluster assignments for DP Gaussian mixtures."""

from .errors import (
    ConfigError,
    DegenerateProposalError,
    EnumerationLimitError,
    FileFormatError,
    NumericError,
)
from .genmodel import (
    Assignment,
    Dataset,
    GenConfig,
    PartitionDistribution,
    canonicalize_labels,
    crp_log_prob,
    enumerate_assignments,
    exact_conditional,
    exact_posterior,
    joint_log_prob,
    marginal_log_lik,
    sample_crp,
    sample_dataset,
)
from .model import (
    NcpModel,
    SamplerState,
    SampleTrace,
    assign_point,
    build_model,
    conditional_probs,
    encode_points,
    init_state,
    log_prob_of,
    recompute_state,
    sample_assignment,
    sample_many,
    start_step,
)
from .rng import stream
from .training import (
    DiagnosticsRecord,
    TrainConfig,
    TrainState,
    last_point_tv,
    nll_minibatch,
    permutation_variance,
    rb_loss,
    rb_targets,
    train,
)
from .baselines import (
    ExactPosteriorProposal,
    GibbsConfig,
    GibbsRun,
    IsEstimate,
    NcpProposal,
    gibbs_sweep,
    importance_estimate,
    mean_k_experiment,
    run_gibbs,
)

__version__ = "0.1.0"
