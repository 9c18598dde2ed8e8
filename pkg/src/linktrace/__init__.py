"""Estimation for hidden populations sampled by cluster + link-tracing
designs with heterogeneous link probabilities.

The pieces, bottom up: ``quadrature`` (pattern cell probabilities),
``model`` (link and inclusion probabilities), ``sampling`` (populations
and realized samples), ``likelihood`` (joint and conditional fits),
``estimators`` (HT-type and Hajek-type sizes/totals/means), ``bootstrap``
(variances and confidence intervals), ``simulation`` (synthetic
populations and the Monte Carlo harness), ``fileio``/``cli`` (formats and
the command-line front end).
"""

__version__ = "0.1.0"

from .bootstrap import (BootConfig, BootWorld, CiRecord, RegressionMode,
                        boot_replicate, bootstrap_estimates, build_boot_world,
                        ci_korn_graubard, ci_lognormal_size, ci_wald, huber_scale)
from .errors import (ConfigError, DegenerateWorld, Diverged, InvalidArgument,
                     LinktraceError, NonIdentifiable, UndefinedEstimate)
from .estimators import (BetaPredictor, EstimateRecord, EstimateSet,
                         compute_estimates, hk_mean, hk_total, ht_mean, ht_size,
                         ht_total, inclusion_for_sample, make_beta_predictor,
                         predict_beta)
from .likelihood import (FitOptions, RaschFit, fit_conditional, fit_unconditional,
                         loglik_conditional, loglik_unconditional, tau_update)
from .model import (FrameGeometry, Portion, RaschParams, inclusion_prob_u1,
                    inclusion_prob_u2, link_prob)
from .quadrature import (LinkPattern, QuadratureRule, cell_prob,
                         cell_prob_excluding, make_rule)
from .sampling import (ExplicitLinks, LatentClassLinks, LtsSample, ObservedCounts,
                       PersonRecord, Population, RaschLinks, Stratum,
                       assemble_sample, draw_sample, observed_counts)
from .simulation import (McConfig, McReport, PopulationKind, PopulationSpec,
                         correlation_check, metrics_from_rows, run_monte_carlo,
                         synth_population, true_parameters)

__all__ = [name for name in dir() if not name.startswith("_")]
