"""Pre- and post-publication citation dynamics with a journal citation multiplier.

Submodules
----------
model       decay, rates, expectations, variance and peak-day formulas
simulate    forward simulation and synthetic corpus export
likelihood  dense and sparse likelihoods, priors, log-posterior and gradient
inference   no-U-turn sampling, diagnostics, summaries and MAP
ingest      reference parsing, dates, subjects, impacts and subsets
report      posterior predictive bands and journal tables
cli         the ``citeffect`` command
"""

from .errors import CiteffectError, DomainError, InitializationError, InputError, NumericalError
from .inference import (ChainConfig, FitSummary, PosteriorDraws, diagnostics, map_estimate,
                        sample_posterior, summarize)
from .likelihood import (Priors, SubsetArticle, SubsetData, UnconstrainedParams,
                         log_likelihood_dense, log_likelihood_sparse, log_posterior,
                         log_posterior_gradient)
from .model import (DEFAULT_M, ArticleParams, JournalParams, ModelConfig, decay_cumulative,
                    decay_density, effective_rate, expected_citations_approx,
                    expected_citations_exact, peak_day)
from .simulate import (CitationTrajectory, SyntheticJournal, monte_carlo_mean_curve,
                       simulate_journal, simulate_trajectory)

__version__ = "0.1.0"
