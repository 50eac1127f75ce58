"""Measurement-induced cat states from a product scar in spin chains.

Modules: ``pauli_model`` (Hamiltonians as Pauli strings), ``state_engine``
(state vectors, Krylov and Trotter evolution), ``observables`` (profiles,
effective region, counting statistics, quantumness), ``spectral`` (symmetry
sectors, duality, level statistics), ``analysis`` (fits and verdicts) and
``cli``.
"""

from .analysis import classify_spreading, detect_bimodality, fit_growth, u1_macroscopic_check
from .observables import (
    covariance_matrix,
    delta_sz,
    effective_region,
    fcs,
    magnetization_profile,
    quantumness_dense,
    quantumness_iterative,
)
from .pauli_model import (
    HamiltonianSpec,
    ModelError,
    PauliTerm,
    ScarResidualError,
    build_h0,
    build_h1,
    build_h2,
    build_h_tau,
    scar_action,
    verify_scar,
)
from .spectral import duality_spectrum_check, level_statistics, sector_spectrum
from .state_engine import (
    EvolutionError,
    StateVector,
    apply_y_rotation,
    evolve,
    evolve_krylov,
    evolve_trotter,
    prepare_protocol_state,
    product_state_up,
    protocol_series,
)

__version__ = "0.1.0"

__all__ = [
    "EvolutionError",
    "HamiltonianSpec",
    "ModelError",
    "PauliTerm",
    "ScarResidualError",
    "StateVector",
    "apply_y_rotation",
    "build_h0",
    "build_h1",
    "build_h2",
    "build_h_tau",
    "classify_spreading",
    "covariance_matrix",
    "delta_sz",
    "detect_bimodality",
    "duality_spectrum_check",
    "effective_region",
    "evolve",
    "evolve_krylov",
    "evolve_trotter",
    "fcs",
    "fit_growth",
    "level_statistics",
    "magnetization_profile",
    "prepare_protocol_state",
    "product_state_up",
    "protocol_series",
    "quantumness_dense",
    "quantumness_iterative",
    "scar_action",
    "sector_spectrum",
    "u1_macroscopic_check",
    "verify_scar",
]
