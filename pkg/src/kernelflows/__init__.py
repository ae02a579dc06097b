"""kernelflows: a numerical laboratory for task-driven kernel gradient
flows, their closed-form steady-state spectral laws, optimizer-geometry
variants, and the rank structure of mini-batch gradient noise.
"""

from .linalg import (
    DEFAULT_RANK_TOL,
    EigenDecomposition,
    commutator_norm,
    effective_rank,
    newton_schulz_polar,
    pinv_sqrt,
    polar_direction,
    psd_project,
    subspace_overlap,
    sym_eig,
)
from .tasks import (
    AugmentationGraph,
    LabelSet,
    RegularizationConfig,
    SemiConfig,
    SSLConfig,
    build_laplacian,
    label_gram,
    load_task,
    save_task,
    synth_clustered_task,
)
from .supervised import (
    CoupledState,
    FlowConfig,
    SupervisedFlowState,
    adiabatic_error_sweep,
    coupled_flow,
    default_dt,
    default_initial_kernel,
    effective_loss,
    integrate_kernel_flow,
    kernel_rhs_general,
    kernel_rhs_mse,
    optimal_readout,
    residual_mse,
    resolvent,
    ridge_prediction,
    scalar_flow,
)
from .laws import (
    SpectralProfile,
    fixed_point_residual,
    nuclear_norm_gap,
    pca_ssl_spectrum,
    predict_K_infinity,
    rank_compression_check,
    semi_spectrum,
    ssl_spectrum,
    water_filling_alt,
    water_filling_spectrum,
)
from .sslsemi import (
    SSLFlowState,
    dirichlet_identity_check,
    predict_semi_kernel,
    semi_balance_residual,
    semi_flow,
    ssl_energy,
    ssl_energy_grad,
    ssl_flow,
    ssl_optimal_kernel,
)
from .precondition import (
    MuonConfig,
    PreconditionedModel,
    anisotropic_decay,
    integrate_muon_feature_flow,
    linear_readout_model,
    modulated_ntk,
    muon_feature_rhs,
    muon_kernel_rhs_mse,
    muon_steady_state_check,
    readout_decay_check,
    stationarity_invariance_demo,
    weight_decay_image,
)
from .noise import (
    NoiseSample,
    NoiseStats,
    collect_noise_samples,
    enumerate_batches,
    exhaustive_mean_noise,
    feature_noise_matrix,
    kernel_noise_matrix,
    masked_residual,
    noise_covariance_stats,
    preconditioned_noise_check,
    sample_batches,
)
from .population import (
    PopulationSpectrum,
    effective_dimension,
    flow_vs_static_risk,
    population_flow_surrogate,
    risk_decomposition,
)

__version__ = "0.1.0"
