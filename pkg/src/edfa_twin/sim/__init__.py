"""Physics-based EDFA simulator (two-level doped fiber, AGC/APC control)."""

from .amplifier import (
    AmplifierConfig,
    LinearFamilyCheck,
    SimulationResult,
    family_constants,
    output_at_pump,
    run_amplifier,
    run_amplifier_batch,
    verify_linear_family,
)
from .config import (
    amplifier_from_dict,
    default_amplifier_config,
    load_amplifier_config,
    parametric_cross_sections,
)
from .generate import config_fingerprint, generate_dataset
from .edf import EdfStageParams, StageLoss, gain_coefficients, propagate_batch, propagate_stage

__all__ = [
    "AmplifierConfig",
    "EdfStageParams",
    "LinearFamilyCheck",
    "SimulationResult",
    "StageLoss",
    "amplifier_from_dict",
    "default_amplifier_config",
    "family_constants",
    "gain_coefficients",
    "generate_dataset",
    "config_fingerprint",
    "load_amplifier_config",
    "output_at_pump",
    "parametric_cross_sections",
    "propagate_batch",
    "propagate_stage",
    "run_amplifier",
    "run_amplifier_batch",
    "verify_linear_family",
]
