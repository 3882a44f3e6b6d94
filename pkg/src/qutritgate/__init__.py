"""Simulation and tomography of a two-step qutrit Walsh-Hadamard gate.

Modules:

* :mod:`qutritgate.core`: matrices, density-matrix checks, device model
* :mod:`qutritgate.decomposer`: diagonal / off-diagonal generator decomposition
* :mod:`qutritgate.pulses` and :mod:`qutritgate.drive`: tones, level shifts,
  shift-compensated carriers
* :mod:`qutritgate.dynamics`: Schrodinger and Lindblad evolution of pulse schedules
* :mod:`qutritgate.tomography`: readout, state/process MLE, calibration
* :mod:`qutritgate.profiles`: device profile files
* :mod:`qutritgate.cli`: command-line front end
"""

from .core import (
    CoherenceShape,
    DecoherenceRates,
    DeviceSpec,
    ReadoutModel,
    ValidationError,
    state_fidelity,
    thermal_state,
    unitary_distance,
    walsh_hadamard,
)
from .decomposer import (
    GateDecomposition,
    reference_decomposition,
    search_decompositions,
    select_decomposition,
)
from .profiles import load_profile, paper_device

__all__ = [
    "CoherenceShape",
    "DecoherenceRates",
    "DeviceSpec",
    "GateDecomposition",
    "ReadoutModel",
    "ValidationError",
    "load_profile",
    "paper_device",
    "reference_decomposition",
    "search_decompositions",
    "select_decomposition",
    "state_fidelity",
    "thermal_state",
    "unitary_distance",
    "walsh_hadamard",
]

__version__ = "0.1.0"
