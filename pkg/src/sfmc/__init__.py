"""Matrix completion with a shared factor structure between the data matrix
and the logits of its observation pattern."""

from .errors import (CorrectionInfeasibleError, DegenerateDesignError,
                     DegenerateInformationError, DimensionError, InconsistentRanksError,
                     InputError, MuSelectionError, NonConvergenceError, NonFiniteError,
                     NumericalError, ProxUndefinedError, RankDeficientError, SfmcError)
from .model import (FactorModel, MaskedData, ParamPair, assemble, canonicalize,
                    check_sigma_lower_bound, normalize_factors, shared_coupling_xi)
from .losses import (ExpFamily, FitConfig, Huber, LossSpec, Quadratic, gradient,
                     loss_from_name, objective, second_derivative_diag)
from .report import FitReport
from .oracle import baseline_mcar_fit, fit_known_rank, spectral_init
from .mcp import (McpConfig, firm_threshold, firm_threshold_shrink, fit_mcp, mcp_penalty,
                  mcp_scalar)
from .ranks import RankEstimate, estimate_ranks
from .tuning import (EtaSelection, IcRecord, degrees_of_freedom, dispersion_hat, ic_value,
                     select_eta, select_mu, sigma2_corrected, sigma2_naive)
from .inference import (EntryVariance, InferenceWeights, build_weights, confidence_interval,
                        entry_variance, variance_matrices)
from .pipeline import fit_known_pipeline, fit_pipeline
from .simulation import SimDesign, generate, run_experiment
from .evaluation import (RatingsTriplets, load_triplets, mspe, percentile_rank_bar,
                         predict_clipped, save_triplets, subspace_distance)
from .kernels import BACKEND

__version__ = "0.1.0"
