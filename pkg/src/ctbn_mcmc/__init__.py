"""Posterior trajectory inference for continuous time Bayesian networks.

Reconstructs hidden node trajectories from fully observed nodes using
uniformization-based Metropolis-Hastings kernels inside a Gibbs sweep,
with a likelihood-weighting baseline and a fine-grid smoothing oracle
for verification.
"""

from .markov import (
    IntensityMatrix, SkeletonMatrix, MarkedPath, SamplePath, RegimePartition,
    uniformize, sample_poisson_times, sample_marked_path, log_density_marked,
    log_density_marked_piecewise, collapse, lift, sample_piecewise,
    path_statistics,
)
from .ctbn import (
    CtbnSpec, BayesNetInitial, FullConditionalInitial, CtbnTrajectory,
    SufficientStats, amalgamate, sufficient_stats, log_rho, log_density,
    log_cbi, local_regimes, node_conditional_logdensity,
)
from .moves import (
    KernelState, MoveSchedule, Proposal, MoveDiagnostics, mh_step,
    change_time, change_state, propose_dimension, add_random_point,
    erase_random_point, add_virtual_point, erase_virtual_point, balance_check,
    FlatLikelihood,
)
from .gibbs import (
    Evidence, GibbsConfig, PosteriorEstimate, init_trajectory, gibbs_sweep,
    run,
)
from .baselines import (
    WeightedSample, WeightDiagnostics, likelihood_weighting,
    exact_posterior_grid, weight_degeneracy, DegenerateWeightsError,
)
from .lotka import build_lotka_volterra
from .modelio import (
    parse_model, serialize_model, parse_evidence, serialize_evidence,
    write_result, simulate_evidence, ModelError,
)

__version__ = "0.1.0"
