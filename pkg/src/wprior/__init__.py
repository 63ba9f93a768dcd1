"""Bayesian inference with the w-prior: evidence, multiplicity, Gibbs entropy,
parameter-coding information and complexity selection for regular models."""
from .errors import (ConfigError, ConvergenceError, DomainError, MCFailure, NormalizationError,
                     SingularityError, WPriorError)
from .families import (FAMILIES, Dataset, ModelFamily, Parameterization, fisher_information,
                       get_family, kl_divergence, log_likelihood, log_rate_exponential, mle, sample)
from .priors import (Prior, TruncationDomain, flat_prior, gaussian_prior, jeffreys_prior, normalize,
                     parse_prior, perturbed_prior, w_prior_constant, w_prior_regular)
from .evidence import (EvidenceMethod, LogEvidence, free_energy, laplace_log_partition, log_partition,
                       log_predictive, posterior_log_density, posterior_sample)
from .mc import Budgets, Estimate, StreamSpec, mc_mean, nested_mc
from .estimators import (FIVE_POINT, THREE_POINT, TemperSchedule, avg_coding_information,
                         coding_information, gibbs_entropy, multiplicity_cv, multiplicity_direct,
                         performance_post, predictivity, true_prior_optimality)
from .selection import (ComplexityReport, aic, density_of_models, g_k, kl_ball_volume,
                        total_partition)

__version__ = "0.1.0"
