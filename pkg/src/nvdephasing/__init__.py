"""Simulation and fitting of 13C dephasing measurements on a single NV center."""

from .circuits import Circuit, NoiseModel, fid_circuit, hahn_circuit, readout_p0, run_circuit
from .fitting import FitModel, FitResult, extract_segment_amplitudes, fit_dephasing, least_squares
from .protocols import ProtocolConfig, ReadoutConfig, SignalTrace, run_protocol, simulate_protocol
from .relaxation import RateModel, analytic_populations, build_lindblad, evolve_lindblad, numeric_populations
from .spin_model import SpinSystemParams, build_hamiltonian, nuclear_precession_frequency

__version__ = "0.1.0"
