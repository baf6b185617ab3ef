"""squidstore: charge-qubit storage units on a transmission-line bus.

Submodules
----------
qcore      dense operators/states, evolution, partial trace, fidelity
circuit    capacitances -> charging energies, charge-basis validation
storage    the in-unit swap protocol and its phase bookkeeping
resonator  line mode, coupling constant, exchange/full transfer models
pulse      control-schedule language (parse/validate/serialize/execute)
kernels    time-stepping backends (compiled extension or numpy)
cli        command-line front end
"""

__version__ = "0.1.0"

from .circuit import DeviceParams, derive_energies, load_device
from .qcore import Operator, QuantumState, mixed_state, pure_state
from .resonator import ResonatorGeometry, TransferPlan, load_geometry, run_transfer
from .storage import StorageControls, run_storage, swap_unitary
from .waveform import Segment, Waveform

__all__ = [
    "DeviceParams",
    "Operator",
    "QuantumState",
    "ResonatorGeometry",
    "Segment",
    "StorageControls",
    "TransferPlan",
    "Waveform",
    "derive_energies",
    "load_device",
    "load_geometry",
    "mixed_state",
    "pure_state",
    "run_storage",
    "run_transfer",
    "swap_unitary",
]
