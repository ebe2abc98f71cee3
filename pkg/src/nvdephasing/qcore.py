"""Dense density-matrix kernel for the 6-level electron/nuclear system.

States are plain complex ``ndarray`` objects of shape ``(6, 6)``; most
functions also accept a leading stack axis ``(..., 6, 6)`` so that ensembles
can be propagated in one call.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .spin_model import DIM, block_slice

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
POSITIVITY_FLOOR = -1e-10
UNITARITY_TOL = 1e-12


class StateError(ValueError):
    """A density matrix or operator violates its invariants."""


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def pure_state(index: int) -> np.ndarray:
    """Projector onto basis ket ``index`` (see :mod:`spin_model` for the ordering)."""
    if not 0 <= index < DIM:
        raise StateError(f"basis index must lie in 0..{DIM - 1}, got {index}")
    rho = np.zeros((DIM, DIM), dtype=complex)
    rho[index, index] = 1.0
    return rho


def mixture(weights_and_states) -> np.ndarray:
    """Convex combination ``sum w_i rho_i`` of ``(w_i, rho_i)`` pairs."""
    rho = np.zeros((DIM, DIM), dtype=complex)
    for w, r in weights_and_states:
        rho = rho + w * r
    return rho


def maximally_mixed() -> np.ndarray:
    return np.eye(DIM, dtype=complex) / DIM


def validate(rho: np.ndarray) -> np.ndarray:
    """Check hermiticity, unit trace and positivity; return ``rho`` unchanged."""
    rho = np.asarray(rho)
    if rho.shape[-2:] != (DIM, DIM):
        raise StateError(f"expected trailing shape ({DIM}, {DIM}), got {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise StateError("density matrix has non-finite entries")
    if np.max(np.abs(rho - dagger(rho))) >= HERMITIAN_TOL:
        raise StateError("density matrix is not Hermitian")
    tr = np.trace(rho, axis1=-2, axis2=-1)
    if np.max(np.abs(tr - 1.0)) >= TRACE_TOL:
        raise StateError(f"trace deviates from 1: {tr}")
    if np.min(min_eigenvalue(rho)) <= POSITIVITY_FLOOR:
        raise StateError("density matrix is not positive semidefinite")
    return rho


def min_eigenvalue(rho: np.ndarray):
    herm = 0.5 * (rho + dagger(rho))
    return np.linalg.eigvalsh(herm)[..., 0]


def is_unitary(U: np.ndarray, tol: float = UNITARITY_TOL) -> bool:
    eye = np.eye(U.shape[-1])
    return bool(np.max(np.abs(dagger(U) @ U - eye)) < tol)


def apply_unitary(rho: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Return ``U rho U^dagger``; both arguments broadcast over leading axes."""
    return U @ rho @ dagger(U)


def ms_block(rho: np.ndarray, m_s: int) -> np.ndarray:
    """Unnormalized 2x2 nuclear block of ``rho`` for electron level ``m_s``.

    Its trace is the population of that electron level.
    """
    s = block_slice(m_s)
    return rho[..., s, s]


def block_populations(rho: np.ndarray) -> dict:
    return {m: np.real(np.trace(ms_block(rho, m), axis1=-2, axis2=-1)) for m in (1, 0, -1)}


def matrix_exponential(A: np.ndarray, t: float = 1.0) -> np.ndarray:
    """``exp(A t)`` for a small dense matrix (Pade scaling and squaring)."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise StateError("matrix_exponential expects a square matrix")
    if not (np.all(np.isfinite(A)) and np.isfinite(t)):
        raise StateError("matrix_exponential got non-finite input")
    return scipy.linalg.expm(A * t)


def hermitian_expm(H: np.ndarray, t: float) -> np.ndarray:
    """Propagator ``exp(-i 2 pi H t)`` for Hermitian ``H`` (MHz) and ``t`` (us).

    Uses the eigendecomposition; ``H`` may carry leading stack axes.
    """
    w, v = np.linalg.eigh(H)
    phase = np.exp(-2j * np.pi * w * t)
    return (v * phase[..., None, :]) @ dagger(v)
