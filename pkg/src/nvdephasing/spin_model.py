"""Physical parameters and Hamiltonian of the NV electron / 13C nuclear spin pair.

Basis ordering used throughout the package (electron spin-1 x nuclear spin-1/2)::

    0: |+1 up>   1: |+1 down>
    2: | 0 up>   3: | 0 down>
    4: |-1 up>   5: |-1 down>

Energies are in MHz (H / 2pi), times are in microseconds inside the numerical
kernels and in milliseconds at every public interface.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

MS_VALUES = (1, 0, -1)
DIM = 6

# nu_C given explicitly and via B * gamma_C must agree to this many MHz
NU_C_AGREEMENT_TOL = 1e-6


class ParameterError(ValueError):
    """Raised when a parameter set violates its invariants."""


def block_slice(m_s: int) -> slice:
    """Return the slice of the 6-dim basis spanned by electron level ``m_s``."""
    if m_s not in MS_VALUES:
        raise ParameterError(f"m_S must be one of {MS_VALUES}, got {m_s!r}")
    start = 2 * MS_VALUES.index(m_s)
    return slice(start, start + 2)


def basis_index(m_s: int, nuclear_up: bool) -> int:
    return block_slice(m_s).start + (0 if nuclear_up else 1)


@dataclass(frozen=True)
class SpinSystemParams:
    """Constants of the coupled spin system plus relaxation and preparation values.

    Frequencies are in MHz, the field in gauss, times in ms.  ``gamma_C`` is
    optional; when given together with ``nu_C`` the two must be consistent.
    ``c0_fid`` and ``c0_hahn`` are the coherence prefactors used by the
    closed-form signal generators.
    """

    D: float = 2870.0
    B: float = 148.0
    gamma_e: float = 2.8025
    gamma_C: Optional[float] = None
    nu_C: Optional[float] = 0.158
    A_N: float = -2.16
    A_zz: float = -0.152
    A_zx: float = 0.110
    s1: float = 0.80
    T1e: float = 5.5
    T2star_C: float = 8.66
    T2_C: float = 14.10
    c0_fid: float = 0.80
    c0_hahn: float = 0.76

    def __post_init__(self):
        if self.nu_C is None and self.gamma_C is None:
            raise ParameterError("either nu_C or gamma_C must be given")
        if self.nu_C is not None and self.gamma_C is not None:
            derived = self.B * self.gamma_C
            if abs(derived - self.nu_C) > NU_C_AGREEMENT_TOL:
                raise ParameterError(
                    f"nu_C={self.nu_C} MHz disagrees with B*gamma_C={derived} MHz"
                )
        for name in fields(self):
            value = getattr(self, name.name)
            if value is not None and not math.isfinite(value):
                raise ParameterError(f"{name.name} must be finite")
        if not 0.0 <= self.s1 <= 1.0:
            raise ParameterError(f"s1 must lie in [0, 1], got {self.s1}")
        for name in ("T1e", "T2star_C", "T2_C"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        for name in ("c0_fid", "c0_hahn"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")

    @property
    def nu_c(self) -> float:
        """13C Larmor frequency in MHz, explicit value preferred."""
        if self.nu_C is not None:
            return self.nu_C
        return self.B * self.gamma_C

    @property
    def nu_e(self) -> float:
        return self.gamma_e * self.B

    @property
    def kappa(self) -> float:
        """Electron level hopping rate in 1/ms, from T1e = 1 / (3 kappa)."""
        return 1.0 / (3.0 * self.T1e)

    def replace(self, **changes) -> "SpinSystemParams":
        values = asdict(self)
        values.update(changes)
        return SpinSystemParams(**values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SpinOperatorSet:
    Sz: np.ndarray
    Sz2: np.ndarray
    Ix: np.ndarray
    Iz: np.ndarray


def spin_operators() -> SpinOperatorSet:
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    ix = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
    iz = 0.5 * np.array([[1, 0], [0, -1]], dtype=complex)
    e3 = np.eye(3, dtype=complex)
    e2 = np.eye(2, dtype=complex)
    Sz = np.kron(sz, e2)
    return SpinOperatorSet(Sz=Sz, Sz2=Sz @ Sz, Ix=np.kron(e3, ix), Iz=np.kron(e3, iz))


def _block_hamiltonian(params: SpinSystemParams, m_s: int, nu_shift: float = 0.0) -> np.ndarray:
    hz = -(params.nu_c + nu_shift) + params.A_zz * m_s
    hx = params.A_zx * m_s
    return 0.5 * np.array([[hz, hx], [hx, -hz]], dtype=complex)


def build_hamiltonian(params: SpinSystemParams, secular: bool = False) -> np.ndarray:
    """Hamiltonian H/2pi in MHz on the 6-dim product space.

    With ``secular=True`` the electron zero-field and Zeeman terms are dropped,
    leaving only the m_S-conditional nuclear Hamiltonians.  Those terms are a
    scalar within every m_S block, so they never affect the intra-block
    dynamics that the circuits probe.
    """
    ops = spin_operators()
    H = (
        -params.nu_c * ops.Iz
        + params.A_zz * ops.Sz @ ops.Iz
        + params.A_zx * ops.Sz @ ops.Ix
    )
    if not secular:
        H = H + params.D * ops.Sz2 - (params.nu_e - params.A_N) * ops.Sz
    return H


def secular_hamiltonian(params: SpinSystemParams, nu_shift: float = 0.0) -> np.ndarray:
    """Block-diagonal nuclear Hamiltonian with an optional shift of nu_C (MHz)."""
    H = np.zeros((DIM, DIM), dtype=complex)
    for m_s in MS_VALUES:
        s = block_slice(m_s)
        H[s, s] = _block_hamiltonian(params, m_s, nu_shift)
    return H


def nuclear_precession_frequency(params: SpinSystemParams, m_s: int) -> float:
    """Precession frequency (MHz) of the 13C spin while the electron is in ``m_s``."""
    if m_s not in MS_VALUES:
        raise ParameterError(f"m_S must be one of {MS_VALUES}, got {m_s!r}")
    return math.hypot(m_s * params.A_zx, params.nu_c - m_s * params.A_zz)


def max_nuclear_frequency(params: SpinSystemParams) -> float:
    return max(nuclear_precession_frequency(params, m) for m in MS_VALUES)
