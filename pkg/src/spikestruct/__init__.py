"""Bayes-optimal limits and TAP iterations for spiked models with structured noise."""

from .ensemble import (
    EmpiricalSpectrum,
    Observation,
    ingest_empirical_spectrum,
    make_observation,
    matrix_function_apply,
    sample_haar_orthogonal,
    sample_noise,
)
from .priors import (
    Prior,
    ScalarChannel,
    build_prior,
    denoiser,
    dmmse,
    gaussian_prior,
    overlap_of_snr,
    rademacher_prior,
    scalar_mmse,
    sparse_rademacher_prior,
    two_point_prior,
)
from .replica import (
    PhaseCurve,
    SaddlePoint,
    free_entropy,
    free_entropy_rs,
    gaussian_surrogate_snr,
    phase_curve,
    select_solution,
    solve_both_inits,
    solve_fixed_point,
)
from .spectra import (
    EffectiveCoupling,
    Potential,
    PushforwardLaw,
    RTransformRangeError,
    SpectralDensity,
    build_builtin,
    build_builtin_density,
    effective_coupling,
    hilbert_pv,
    potential_derivative_from_density,
    pushforward_law,
    r_transform,
    sample_eigenvalues,
    standardize,
    stieltjes_transform,
    transform_potential,
)
from .state_evolution import (
    StateEvolutionPoint,
    phi,
    replica_equivalence_check,
    se_fixed_point,
)
from .tap import (
    TapConfig,
    TapRun,
    informative_init,
    metrics,
    pca_init,
    pca_overlap_theory,
    run_tap,
    spike_location_theory,
)

__version__ = "0.1.0"
