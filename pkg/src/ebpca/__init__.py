"""Empirical Bayes PCA: nonparametric prior estimation and AMP refinement of
principal components in spiked signal-plus-noise models."""

from .model import (
    PriorSpec,
    SpikedConfig,
    SpikedInstance,
    alignment,
    generate_instance,
    sample_prior,
    subspace_distance,
)
from .rmt import (
    bulk_edges,
    estimate_signal,
    mp_singular_density,
    normalize,
    predict_observables,
    singular_value_limit,
    top_k_svd,
)
from .npmle import CompoundParams, DiscretePrior, NPMLEReport, build_support, fit_weights, log_marginal_likelihood
from .denoise import denoise_matrix, mmse, posterior_jacobian, posterior_mean
from .amp import (
    AMPState,
    EBPCAResult,
    ebpca_step,
    initialize,
    run_ebpca,
    run_mean_field_vb,
    run_oracle_bayes_amp,
)
from .state_evolution import (
    SEState,
    bayes_matrix_risk,
    q_init,
    q_map,
    se_fixed_point,
    se_init,
    se_recursion,
)

__version__ = "0.1.0"
