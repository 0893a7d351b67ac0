"""nvzero - simulation and analysis toolkit for the neutral nitrogen-vacancy centre.

Fine-structure model and spectra, optical master-equation dynamics, three-level
charge/spin rate equations, parameter estimation, and Monte-Carlo simulation of the
charge-resonance check and single-shot readout.
"""

__version__ = "0.1.0"

from .caching import ResultCache, cached_result, clear_cache, generate_cache_key, get_cache_stats
from .config import (
    FineStructureParams,
    LindbladConfig,
    ProtocolConfig,
    PulseShape,
    RechargeConfig,
    RunConfig,
    SpectrumConfig,
    StepConfig,
    StrobeConfig,
    load_params_preset,
    load_run_config,
)
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    HermiticityError,
    IntegrationError,
    InvariantViolationError,
    NormalizationError,
    NVSimError,
    UnderdeterminedFitError,
    ValidationError,
)
from .models import CountHistogram, FitResult, RatePopulations, Spectrum, TrajectoryResult
from .nv_model import (
    Polarization,
    build_excited_hamiltonian,
    build_ground_hamiltonian,
    contrasts,
    diagonalize_ground,
    splittings,
    synthesize_spectrum,
    transition_amplitude,
    transition_table,
)
from .dynamics import (
    evolve,
    pump_probe_sweep,
    simulate_pump_probe,
    simulate_pump_trace,
    simulate_recharging,
    steady_state,
)
from .rate_models import (
    MODEL_REGISTRY,
    ThreeLevelRates,
    get_model,
    list_models,
    register_model,
    solve_charge_cycling,
    solve_spin_pumping,
)
from .estimation import (
    extract_contrasts,
    find_peaks,
    fit_charge_cycling,
    fit_spin_pumping,
    fit_voigt_multiplet,
    joint_finestructure_fit,
    nls_fit,
    poisson_error_rates,
    readout_fidelity,
    threshold_classify,
)
from .protocol_sim import (
    run_cr_protocol,
    sample_photon_count,
    simulate_charge_cycling_experiment,
    simulate_readout_fidelity,
    simulate_spin_pumping_experiment,
    simulate_ssro,
)

__all__ = [
    "__version__",
    # Configuration
    "FineStructureParams",
    "LindbladConfig",
    "ProtocolConfig",
    "PulseShape",
    "RechargeConfig",
    "RunConfig",
    "SpectrumConfig",
    "StepConfig",
    "StrobeConfig",
    "load_params_preset",
    "load_run_config",
    # Results
    "CountHistogram",
    "FitResult",
    "RatePopulations",
    "Spectrum",
    "TrajectoryResult",
    # Fine structure
    "Polarization",
    "build_excited_hamiltonian",
    "build_ground_hamiltonian",
    "contrasts",
    "diagonalize_ground",
    "splittings",
    "synthesize_spectrum",
    "transition_amplitude",
    "transition_table",
    # Dynamics
    "evolve",
    "pump_probe_sweep",
    "simulate_pump_probe",
    "simulate_pump_trace",
    "simulate_recharging",
    "steady_state",
    # Rate models
    "MODEL_REGISTRY",
    "ThreeLevelRates",
    "get_model",
    "list_models",
    "register_model",
    "solve_charge_cycling",
    "solve_spin_pumping",
    # Estimation
    "extract_contrasts",
    "find_peaks",
    "fit_charge_cycling",
    "fit_spin_pumping",
    "fit_voigt_multiplet",
    "joint_finestructure_fit",
    "nls_fit",
    "poisson_error_rates",
    "readout_fidelity",
    "threshold_classify",
    # Protocol
    "run_cr_protocol",
    "sample_photon_count",
    "simulate_charge_cycling_experiment",
    "simulate_readout_fidelity",
    "simulate_spin_pumping_experiment",
    "simulate_ssro",
    # Caching
    "ResultCache",
    "cached_result",
    "clear_cache",
    "generate_cache_key",
    "get_cache_stats",
    # Exceptions
    "NVSimError",
    "ConfigurationError",
    "ValidationError",
    "NormalizationError",
    "HermiticityError",
    "IntegrationError",
    "ConvergenceError",
    "UnderdeterminedFitError",
    "InvariantViolationError",
]
