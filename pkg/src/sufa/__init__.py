"""Shared and study-specific covariance estimation across studies.

A low-rank factor model ties the studies together: every study shares one
loading matrix, and each study bends the shared factors with a small square
matrix of its own. Inference runs on the marginal likelihood, so only the
per-study Gram matrices are touched after ingestion and the per-iteration
cost does not grow with the number of samples.
"""

__version__ = "0.1.0"

from .datagen import (gen_shared_loading, gen_study_loadings, sample_design,
                      simulate_msfa)
from .dataio import (align_features, center, load_draws, load_study_csv,
                     output_lock, save_draws, write_manifest,
                     write_matrix_csv)
from .errors import (ConfigError, DimensionError, DomainError,
                     IllConditionedError, InputError, NumericError, SufaError)
from .identifiability import (check_dimension_condition,
                              column_space_intersection_dim,
                              detect_information_switching, partial_svd,
                              rank_upper_bound, select_num_factors)
from .likelihood import grad_log_posterior, marginal_loglik
from .model import (ModelDims, ParamSet, StudySummary, correlation_matrix,
                    marginal_covariance, shared_covariance, sufficient_stats,
                    woodbury_inverse, woodbury_logdet)
from .postprocess import (align_parameter_draws, alignment_r2,
                          frobenius_error, sparsify_by_ci,
                          study_specific_loadings, varimax, wbic)
from .priors import (DLState, PriorHyper, default_hyperparameters,
                     gibbs_sweep, log_prior, sample_dl_state)
from .sampler import ChainConfig, HmcTuning, McmcOutput, run_chain

__all__ = [
    "__version__",
    "ChainConfig", "ConfigError", "DLState", "DimensionError", "DomainError",
    "HmcTuning", "IllConditionedError", "InputError", "McmcOutput",
    "ModelDims", "NumericError", "ParamSet", "PriorHyper", "StudySummary",
    "SufaError",
    "align_features", "align_parameter_draws", "alignment_r2", "center",
    "check_dimension_condition", "column_space_intersection_dim",
    "correlation_matrix", "default_hyperparameters",
    "detect_information_switching", "frobenius_error", "gen_shared_loading",
    "gen_study_loadings", "gibbs_sweep", "grad_log_posterior", "load_draws",
    "load_study_csv", "log_prior", "marginal_covariance", "marginal_loglik",
    "output_lock", "partial_svd", "rank_upper_bound", "run_chain",
    "sample_design", "sample_dl_state", "save_draws", "select_num_factors",
    "shared_covariance", "simulate_msfa", "sparsify_by_ci",
    "study_specific_loadings", "sufficient_stats", "varimax", "wbic",
    "woodbury_inverse", "woodbury_logdet", "write_manifest",
    "write_matrix_csv",
]
