"""Bidomain and cell-resolved cardiac tissue simulation with a
strength-interval experiment pipeline."""

__version__ = "0.1.0"

from .calibration import (CalibrationResult, CVMeasurement, calibrate,
                          calibrate_bidomain, cv_objective, measure_cv)
from .cell_model import CellParams, CellState, reaction_steps, steady_state
from .chi_derivation import ChiReport, compute_chi, mesh_chi
from .cli_io import RunConfig, parse_config, render_config
from .fem import BidomainParams, BidomainSystem, EmiParams, EmiSystem
from .geometry import (BoxSpec, EmiCellLayout, TaggedMesh,
                       build_bidomain_mesh, build_emi_mesh, region_select)
from .protocol import (ProbeSet, PropagationVerdict, S1S2Protocol, SICurve,
                       SICurvePoint, StimulusSpec, build_si_curve,
                       classify_excitation, detect_propagation,
                       find_resting_threshold, find_s2_threshold,
                       normalize_si_curve, rrp_transition)
from .stepping import (BidomainModel, EmiModel, ModelState, SimulationRecord,
                       SteppingConfig, godunov_step, run)

__all__ = [
    "BidomainModel", "BidomainParams", "BidomainSystem", "BoxSpec",
    "CVMeasurement", "CalibrationResult", "CellParams", "CellState",
    "ChiReport", "EmiCellLayout", "EmiModel", "EmiParams", "EmiSystem",
    "ModelState", "ProbeSet", "PropagationVerdict", "RunConfig",
    "S1S2Protocol", "SICurve", "SICurvePoint", "SimulationRecord",
    "SteppingConfig", "StimulusSpec", "TaggedMesh", "build_bidomain_mesh",
    "build_emi_mesh", "build_si_curve", "calibrate", "calibrate_bidomain",
    "classify_excitation", "compute_chi", "cv_objective",
    "detect_propagation", "find_resting_threshold", "find_s2_threshold",
    "godunov_step", "measure_cv", "mesh_chi", "normalize_si_curve",
    "parse_config", "reaction_steps", "region_select", "render_config",
    "rrp_transition", "run", "steady_state",
]
