"""Ideal gates and circuits for the FID and Hahn-echo readout of the 13C coherence.

Gates are instantaneous block unitaries on the 6-level space.  The SWAP uses
the logical mapping electron ``|0> -> 0, |-1> -> 1`` and nucleus
``up -> 0, down -> 1``, so it exchanges ``|0 down>`` and ``|-1 up>``.

The 90 degree readout pulse with phase ``phi`` is ``exp(+i pi/4 (cos phi X + sin phi Y))``
on the electron ``{|0>, |-1>}`` pair.  After it the |0> population is
``(a + d)/2 + Im(b exp(i phi))`` where ``b`` is the ``<0|rho|-1>`` coherence.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import qcore, relaxation
from .spin_model import DIM, SpinSystemParams, basis_index, block_slice

ENGINES = ("analytic", "lindblad", "ensemble")


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class HadamardNuclear:
    blocks: tuple = (0,)
    kind: str = field(default="HadamardNuclear", init=False)


@dataclass(frozen=True)
class PiXNuclear:
    blocks: tuple = (0, -1)
    kind: str = field(default="PiXNuclear", init=False)


@dataclass(frozen=True)
class SwapE0M1:
    kind: str = field(default="SwapE0M1", init=False)


@dataclass(frozen=True)
class MWPulse:
    """Electron pulse on the {|0>, |-1>} pair.

    When ``nu_d`` (MHz) is set the phase is ramped with the swept delay:
    ``phase + 2 pi nu_d tau``.
    """

    angle: float = 90.0
    phase: float = 0.0
    nu_d: Optional[float] = None
    kind: str = field(default="MWPulse", init=False)


@dataclass(frozen=True)
class FreeEvolution:
    """Free evolution lasting ``fraction * tau``, or ``duration`` ms if given."""

    fraction: float = 1.0
    duration: Optional[float] = None
    engine: Optional[str] = None
    kind: str = field(default="FreeEvolution", init=False)

    def length(self, tau: float) -> float:
        return self.duration if self.duration is not None else self.fraction * tau


Gate = Union[HadamardNuclear, PiXNuclear, SwapE0M1, MWPulse, FreeEvolution]
_GATE_TYPES = {cls.__name__: cls for cls in (HadamardNuclear, PiXNuclear, SwapE0M1, MWPulse, FreeEvolution)}


@dataclass(frozen=True)
class Circuit:
    gates: tuple
    label: str = "custom"

    def __post_init__(self):
        if self.label not in ("FID", "Hahn", "custom"):
            raise CircuitError(f"unknown circuit label {self.label!r}")

    def to_dict(self) -> dict:
        return {"label": self.label, "gates": [asdict(g) for g in self.gates]}

    @classmethod
    def from_dict(cls, data: dict) -> "Circuit":
        gates = []
        for g in data["gates"]:
            g = dict(g)
            kind = g.pop("kind")
            if kind not in _GATE_TYPES:
                raise CircuitError(f"unknown gate kind {kind!r}")
            if "blocks" in g:
                g["blocks"] = tuple(g["blocks"])
            gates.append(_GATE_TYPES[kind](**g))
        return cls(gates=tuple(gates), label=data.get("label", "custom"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


def _hadamard2() -> np.ndarray:
    return np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


def _pix2() -> np.ndarray:
    return -1j * np.array([[0, 1], [1, 0]], dtype=complex)


def _block_gate(u2: np.ndarray, blocks: Sequence[int]) -> np.ndarray:
    if not blocks:
        raise CircuitError("gate needs a non-empty block set")
    U = np.eye(DIM, dtype=complex)
    for m in blocks:
        s = block_slice(m)
        U[s, s] = u2
    return U


def swap_unitary() -> np.ndarray:
    U = np.eye(DIM, dtype=complex)
    a, b = basis_index(0, nuclear_up=False), basis_index(-1, nuclear_up=True)
    U[[a, b], :] = U[[b, a], :]
    return U


def mw_unitary(angle_deg: float, phase: float) -> np.ndarray:
    half = math.radians(angle_deg) / 2.0
    c, s = math.cos(half), math.sin(half)
    r = np.array(
        [[c, 1j * s * np.exp(-1j * phase)], [1j * s * np.exp(1j * phase), c]],
        dtype=complex,
    )
    U = np.eye(DIM, dtype=complex)
    for nuc_up in (True, False):
        idx = [basis_index(0, nuc_up), basis_index(-1, nuc_up)]
        U[np.ix_(idx, idx)] = r
    return U


def mw90_phase(nu_d: float, tau: float, phi0: float) -> MWPulse:
    """Readout pulse whose phase follows the delay: ``2 pi nu_d tau + phi0``.

    ``nu_d`` in MHz, ``tau`` in ms.
    """
    return MWPulse(angle=90.0, phase=2.0 * math.pi * nu_d * tau * 1e3 + phi0)


def gate_unitary(g: Gate, params: Optional[SpinSystemParams] = None, tau: float = 0.0) -> np.ndarray:
    """6x6 unitary of an instantaneous gate; ``tau`` resolves ramped pulse phases."""
    if isinstance(g, HadamardNuclear):
        return _block_gate(_hadamard2(), g.blocks)
    if isinstance(g, PiXNuclear):
        return _block_gate(_pix2(), g.blocks)
    if isinstance(g, SwapE0M1):
        return swap_unitary()
    if isinstance(g, MWPulse):
        if g.nu_d is not None:
            return mw_unitary(g.angle, mw90_phase(g.nu_d, tau, g.phase).phase)
        return mw_unitary(g.angle, g.phase)
    if isinstance(g, FreeEvolution):
        raise CircuitError("free evolution is not an instantaneous gate")
    raise CircuitError(f"unknown gate {g!r}")


def fid_circuit(nu_d: float = -0.5, phi0: float = 0.0) -> Circuit:
    return Circuit(
        gates=(
            HadamardNuclear((0,)),
            FreeEvolution(1.0),
            SwapE0M1(),
            MWPulse(90.0, phi0, nu_d),
        ),
        label="FID",
    )


def hahn_circuit(nu_d: float = -0.342, phi0: float = 0.0, pi_blocks: tuple = (0, -1)) -> Circuit:
    return Circuit(
        gates=(
            HadamardNuclear((0,)),
            FreeEvolution(0.5),
            PiXNuclear(pi_blocks),
            FreeEvolution(0.5),
            SwapE0M1(),
            MWPulse(90.0, phi0, nu_d),
        ),
        label="Hahn",
    )


@dataclass(frozen=True)
class NoiseModel:
    """Incoherent processes active during free evolution.

    ``kappa`` (1/ms) defaults to the parameter set's value, ``gamma_phi`` (1/ms)
    is nuclear pure dephasing, ``nu_shift`` (MHz) a quasi-static detuning of
    nu_C; an array of shifts runs one ensemble member per entry.
    """

    engine: str = "analytic"
    kappa: Optional[float] = None
    gamma_phi: float = 0.0
    nu_shift: object = 0.0
    method: str = "expm"
    dt: Optional[float] = None

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise CircuitError(f"unknown engine {self.engine!r}")


def initial_state(s1: float) -> np.ndarray:
    """``s1 |0 up><0 up| + (1 - s1) |+1 down><+1 down|``."""
    return qcore.mixture(
        [
            (s1, qcore.pure_state(basis_index(0, True))),
            (1.0 - s1, qcore.pure_state(basis_index(1, False))),
        ]
    )


def _free_evolve(rho, duration, params, noise: NoiseModel, engine: str):
    kappa = params.kappa if noise.kappa is None else noise.kappa
    shift = np.asarray(noise.nu_shift, dtype=float)
    if engine == "lindblad":
        if shift.ndim:
            raise CircuitError("the lindblad engine takes a scalar nu_shift; use the ensemble engine")
        gen = relaxation.build_lindblad(params, noise.gamma_phi, kappa=kappa, nu_shift=float(shift))
        dt = noise.dt
        if noise.method == "rk4" and dt is None:
            dt = relaxation.default_step(params, gen)
        return relaxation.evolve_lindblad(rho, gen, duration, dt=dt, method=noise.method)
    model = relaxation.RateModel(kappa)
    if engine == "ensemble" and shift.ndim:
        rho = np.broadcast_to(rho, shift.shape + (DIM, DIM))
    return relaxation.mixing_evolution(rho, params, duration, model, noise.gamma_phi, shift)


def run_circuit(
    rho0: np.ndarray,
    c: Circuit,
    tau: float,
    params: SpinSystemParams,
    noise: Optional[NoiseModel] = None,
) -> np.ndarray:
    """Apply the gates of ``c`` in order for swept delay ``tau`` (ms)."""
    if tau < 0:
        raise CircuitError(f"tau must be >= 0, got {tau}")
    noise = noise or NoiseModel()
    rho = np.asarray(rho0, dtype=complex)
    for g in c.gates:
        if isinstance(g, FreeEvolution):
            engine = g.engine or noise.engine
            if engine not in ENGINES:
                raise CircuitError(f"unknown engine {engine!r}")
            rho = _free_evolve(rho, g.length(tau), params, noise, engine)
        else:
            rho = qcore.apply_unitary(rho, gate_unitary(g, params, tau))
    return rho


def readout_p0(rho: np.ndarray):
    """Population of electron level |0>, summed over the nucleus."""
    return np.real(np.trace(qcore.ms_block(rho, 0), axis1=-2, axis2=-1))
