"""Joint Bayesian modelling of left-censored MRD trajectories and
drug-sensitivity mixture clustering."""

from .data import (DRUGS, LC50_COLUMNS, PROTOCOLS, Z_LOW, DatasetError,
                   DesignMatrix, PatientRecord, build_design,
                   lc50_matrix, merge_subtypes, standardize_lc50)
from .model import (Day15Params, Day42Params, HorseshoeBlock,
                    LatentResponses, MixtureState, log_prior,
                    loglik_censored, loglik_uncensored, mean_day15,
                    mean_day42, mixture_loglik, total_loglik)
from .sampler import (ChainState, McmcConfig, ModelData, NumericalError,
                      SampleStore, fit, impute_censored, initial_state,
                      relabel_canonical, run_chain, update_allocations,
                      update_horseshoe, update_linear_day15,
                      update_linear_day42, update_mixture_params,
                      update_sigma2)
from .clustering import (ImputedPanel, binder_loss, binder_partition,
                         cluster_summary, kmeans, pearson_by_subtype,
                         select_dataset, similarity_matrix, wss_profile)
from .diagnostics import ParamSummary, ess, split_rhat, summarize, \
    summary_frame
from .simulate import (CovariateSettings, SbcReport, TrueParams,
                       default_truth, draw_true_params, sbc_run,
                       simulate_dataset, simulate_responses)
from .io import (RunConfig, UsageError, ValidationReport, parse_dataset,
                 read_draws, read_panel, write_dataset, write_draws,
                 write_metadata, write_panel)

__version__ = "0.1.0"
