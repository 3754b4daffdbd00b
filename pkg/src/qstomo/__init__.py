"""Quantum state tomography: linear inversion, eigenvalue repair and maximum likelihood."""

__version__ = "0.1.0"

from .linalg import MemoryBudgetError, hermitian_eig, kron, set_memory_budget, trace_product
from .mle import (
    LikelihoodContext,
    OptimizationReport,
    OptimizerConfig,
    likelihood,
    likelihood_gradient,
    minimize,
    mle_estimate,
)
from .reconstruction import (
    MeasurementRecord,
    beta_matrix,
    expected_counts,
    forced_purity,
    linear_reconstruct,
    quick_and_dirty,
)
from .simulate import (
    ghz_state,
    make_physical,
    mems_state,
    random_density,
    rng_stream,
    simulate_counts,
    tangle_biased_pure,
    trial_mixture,
    werner_state,
)
from .states import (
    STOKES,
    ProjectorBasis,
    cholesky_params_of,
    fidelity,
    gamma_operator,
    linear_entropy,
    projector,
    rho_from_cholesky,
    tangle,
)
