"""cardiodyn: cardiac cell-model simulation and bifurcation workbench."""

from .bernus import BERNUS_CHAOTIC_IC, BERNUS_IC, BERNUS_PARAMS, bernus_model
from .cable import (
    CableConfig,
    CableError,
    CableField,
    CableRegion,
    ModeAnalysis,
    bernus_cable_scenarios,
    build_region_ic,
    mode_jacobian,
    mode_system_rhs,
    noble_cable_scenarios,
    probe_report,
    simulate_cable,
)
from .model_core import (
    CurrentSpec,
    GateSpec,
    ModelDefinition,
    ModelError,
    clip_gates,
)
from .model_file import dumps, load_model, loads, save_model
from .noble import NOBLE_CHAOTIC_IC, NOBLE_IC, NOBLE_PARAMS, noble_model

__version__ = "0.1.0"

__all__ = [
    "BERNUS_CHAOTIC_IC",
    "BERNUS_IC",
    "BERNUS_PARAMS",
    "CableConfig",
    "CableError",
    "CableField",
    "CableRegion",
    "CurrentSpec",
    "GateSpec",
    "ModeAnalysis",
    "ModelDefinition",
    "ModelError",
    "NOBLE_CHAOTIC_IC",
    "NOBLE_IC",
    "NOBLE_PARAMS",
    "bernus_cable_scenarios",
    "bernus_model",
    "build_region_ic",
    "clip_gates",
    "dumps",
    "load_model",
    "loads",
    "mode_jacobian",
    "mode_system_rhs",
    "noble_cable_scenarios",
    "noble_model",
    "probe_report",
    "save_model",
    "simulate_cable",
]
