"""Electron T1 population dynamics and the open-system evolution of the spin pair.

Three routes to the same physics, used to check one another:

* closed-form populations of the three electron levels,
* the 3x3 rate-matrix exponential of the hopping model,
* the 36x36 Lindblad superoperator acting on the full 6-level state.

Rates are given in 1/ms and times in ms at the interface; the superoperator is
assembled in 1/us because the Hamiltonian is in MHz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import qcore
from .spin_model import DIM, MS_VALUES, SpinSystemParams, block_slice, max_nuclear_frequency, secular_hamiltonian, spin_operators

# largest accepted dt * ||generator|| for the RK4 integrator
MAX_STEP_NORM = 0.1
# default RK4 step as a fraction of the fastest nuclear period; small enough
# that the accumulated phase error stays below 1e-9 over ~1e4 periods
DEFAULT_STEP_FRACTION = 2.5e-4


class RelaxationError(ValueError):
    pass


class StepTooLargeError(RelaxationError):
    pass


class PopulationTriple(NamedTuple):
    P0: float
    Pm1: float
    Pp1: float

    def as_array(self) -> np.ndarray:
        """Populations ordered like :data:`MS_VALUES` (+1, 0, -1)."""
        return np.array([self.Pp1, self.P0, self.Pm1])

    @classmethod
    def from_array(cls, p) -> "PopulationTriple":
        return cls(P0=float(p[1]), Pm1=float(p[2]), Pp1=float(p[0]))


@dataclass(frozen=True)
class RateModel:
    """Hopping rates between the electron levels.

    ``connectivity`` maps an unordered level pair to a multiple of ``kappa``.
    The default couples 0 to both +1 and -1 and leaves +1 <-> -1 closed.
    """

    kappa: float
    connectivity: dict = field(default_factory=lambda: {(0, 1): 1.0, (0, -1): 1.0, (1, -1): 0.0})

    def __post_init__(self):
        if not math.isfinite(self.kappa) or self.kappa < 0:
            raise RelaxationError(f"kappa must be finite and >= 0, got {self.kappa}")
        for pair, mult in self.connectivity.items():
            a, b = pair
            if a not in MS_VALUES or b not in MS_VALUES or a == b:
                raise RelaxationError(f"invalid level pair {pair}")
            if mult < 0:
                raise RelaxationError(f"negative rate multiplier for {pair}")

    def rate(self, a: int, b: int) -> float:
        mult = self.connectivity.get((a, b), self.connectivity.get((b, a), 0.0))
        return self.kappa * mult

    def generator(self) -> np.ndarray:
        """3x3 generator (1/ms) on populations ordered (+1, 0, -1); columns sum to 0."""
        G = np.zeros((3, 3))
        for j, src in enumerate(MS_VALUES):
            for i, dst in enumerate(MS_VALUES):
                if i != j:
                    G[i, j] = self.rate(src, dst)
            G[j, j] = -G[:, j].sum()
        return G

    def out_rate(self, m_s: int) -> float:
        return sum(self.rate(m_s, other) for other in MS_VALUES if other != m_s)


def analytic_populations(s1: float, kappa: float, tau: float) -> PopulationTriple:
    """Closed-form electron populations after a time ``tau`` (ms).

    The system starts with ``s1`` in m_S=0 and ``1 - s1`` in m_S=+1.
    """
    if tau < 0:
        raise RelaxationError(f"tau must be >= 0, got {tau}")
    fast = (1.0 / 6.0 - s1 / 2.0) * math.exp(-3.0 * kappa * tau)
    slow = 0.5 * (1.0 - s1) * math.exp(-kappa * tau)
    return PopulationTriple(
        P0=1.0 / 3.0 - 2.0 * fast,
        Pm1=1.0 / 3.0 + fast - slow,
        Pp1=1.0 / 3.0 + fast + slow,
    )


def analytic_populations_array(s1: float, kappa: float, tau) -> tuple:
    """Vectorized ``(P0, Pm1, Pp1)`` arrays over a grid of ``tau`` values."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise RelaxationError("tau must be >= 0")
    fast = (1.0 / 6.0 - s1 / 2.0) * np.exp(-3.0 * kappa * tau)
    slow = 0.5 * (1.0 - s1) * np.exp(-kappa * tau)
    return 1.0 / 3.0 - 2.0 * fast, 1.0 / 3.0 + fast - slow, 1.0 / 3.0 + fast + slow


def numeric_populations(initial: PopulationTriple, model: RateModel, tau: float) -> PopulationTriple:
    """Populations from the matrix exponential of the rate generator."""
    if tau < 0:
        raise RelaxationError(f"tau must be >= 0, got {tau}")
    G = model.generator()
    if np.max(np.abs(G.sum(axis=0))) > 1e-12:
        raise RelaxationError("rate generator does not conserve probability")
    p = qcore.matrix_exponential(G, tau) @ initial.as_array()
    return PopulationTriple.from_array(p)


@dataclass(frozen=True)
class LindbladGenerator:
    """Hamiltonian (MHz) plus jump operators with rates (1/ms)."""

    hamiltonian: np.ndarray
    jumps: tuple = ()
    sigma_qs: float = 0.0

    def __post_init__(self):
        for _, rate in self.jumps:
            if rate < 0 or not math.isfinite(rate):
                raise RelaxationError(f"jump rate must be finite and >= 0, got {rate}")

    def superoperator(self) -> np.ndarray:
        """36x36 generator in 1/us acting on row-major ``rho.ravel()``."""
        eye = np.eye(DIM)
        H = self.hamiltonian
        L = -2j * np.pi * (np.kron(H, eye) - np.kron(eye, H.T))
        for op, rate in self.jumps:
            if rate == 0:
                continue
            g = rate * 1e-3
            ldl = op.conj().T @ op
            L = L + g * (np.kron(op, op.conj()) - 0.5 * np.kron(ldl, eye) - 0.5 * np.kron(eye, ldl.T))
        return L

    def norm(self) -> float:
        return float(np.linalg.norm(self.superoperator(), 2))

    def max_rate(self) -> float:
        return max((r for _, r in self.jumps), default=0.0)


def hopping_operators(model: RateModel) -> list:
    ops = []
    e2 = np.eye(2)
    for src in MS_VALUES:
        for dst in MS_VALUES:
            if src == dst:
                continue
            rate = model.rate(src, dst)
            if rate == 0:
                continue
            L = np.zeros((DIM, DIM), dtype=complex)
            L[block_slice(dst), block_slice(src)] = e2
            ops.append((L, rate))
    return ops


def nuclear_dephasing_operator() -> np.ndarray:
    """``2 I_z`` on the nucleus; at rate g it damps nuclear coherences as exp(-2 g t)."""
    return np.kron(np.eye(3), np.diag([1.0, -1.0])).astype(complex)


def build_lindblad(
    params: SpinSystemParams,
    gamma_phi: float = 0.0,
    sigma_qs: float = 0.0,
    kappa: Optional[float] = None,
    model: Optional[RateModel] = None,
    nu_shift: float = 0.0,
) -> LindbladGenerator:
    """Generator for the secular Hamiltonian, T1 hopping and nuclear pure dephasing.

    ``kappa`` defaults to ``params.kappa``; ``sigma_qs`` is only carried along
    for the ensemble engine.
    """
    if gamma_phi < 0 or sigma_qs < 0:
        raise RelaxationError("rates must be >= 0")
    if model is None:
        model = RateModel(params.kappa if kappa is None else kappa)
    jumps = hopping_operators(model)
    if gamma_phi > 0:
        jumps.append((nuclear_dephasing_operator(), gamma_phi))
    return LindbladGenerator(
        hamiltonian=secular_hamiltonian(params, nu_shift),
        jumps=tuple(jumps),
        sigma_qs=sigma_qs,
    )


def default_step(params: SpinSystemParams, gen: LindbladGenerator) -> float:
    """Default RK4 step in ms."""
    dt_us = DEFAULT_STEP_FRACTION / max_nuclear_frequency(params)
    kmax = gen.max_rate()
    if kmax > 0:
        dt_us = min(dt_us, 0.01 / (kmax * 1e-3))
    return dt_us * 1e-3


def _rk4_matrix(L: np.ndarray, h: float) -> np.ndarray:
    hL = h * L
    eye = np.eye(L.shape[0])
    term = eye.copy()
    M = eye.copy()
    for k in range(1, 5):
        term = term @ hL / k
        M = M + term
    return M


def propagator(gen: LindbladGenerator, t: float, dt: Optional[float] = None, method: str = "rk4") -> np.ndarray:
    """36x36 map advancing ``rho.ravel()`` by ``t`` ms.

    ``method="rk4"`` composes fixed RK4 steps of size ``dt`` (ms).  Because the
    generator is time independent the ``n`` steps are the ``n``-th power of the
    one-step matrix, evaluated by repeated squaring.  ``method="expm"`` uses
    the exact exponential.
    """
    if t < 0 or not math.isfinite(t):
        raise RelaxationError(f"t must be finite and >= 0, got {t}")
    L = gen.superoperator()
    t_us = t * 1e3
    if method == "expm":
        return qcore.matrix_exponential(L, t_us)
    if method != "rk4":
        raise RelaxationError(f"unknown method {method!r}")
    if dt is None or dt <= 0:
        raise RelaxationError("rk4 needs a positive dt")
    h = dt * 1e3
    if h * np.linalg.norm(L, 2) > MAX_STEP_NORM:
        raise StepTooLargeError(
            f"dt={dt} ms gives dt*||L||={h * np.linalg.norm(L, 2):.3g} > {MAX_STEP_NORM}"
        )
    n = int(math.floor(t_us / h + 1e-9))
    rest = t_us - n * h
    M = np.linalg.matrix_power(_rk4_matrix(L, h), n) if n else np.eye(L.shape[0])
    if rest > 1e-12 * max(h, 1.0):
        M = _rk4_matrix(L, rest) @ M
    return M


def evolve_lindblad(
    rho: np.ndarray,
    gen: LindbladGenerator,
    t: float,
    dt: Optional[float] = None,
    method: str = "rk4",
    params: Optional[SpinSystemParams] = None,
) -> np.ndarray:
    """Evolve ``rho`` for ``t`` ms under the Lindblad generator.

    ``dt`` defaults to :func:`default_step` (``params`` required in that case).
    """
    rho = np.asarray(rho)
    if not np.all(np.isfinite(rho)):
        raise RelaxationError("non-finite state")
    if method == "rk4" and dt is None:
        if params is None:
            raise RelaxationError("pass dt or params to pick the default step")
        dt = default_step(params, gen)
    M = propagator(gen, t, dt, method)
    out = (M @ rho.reshape(*rho.shape[:-2], DIM * DIM)[..., None])[..., 0]
    out = out.reshape(rho.shape)
    if not np.all(np.isfinite(out)):
        raise RelaxationError("evolution produced non-finite state")
    return out


def steady_state(gen: LindbladGenerator) -> np.ndarray:
    """Null vector of the superoperator, normalized to unit trace."""
    L = gen.superoperator()
    w, v = np.linalg.eig(L)
    k = int(np.argmin(np.abs(w)))
    rho = v[:, k].reshape(DIM, DIM)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def mixing_evolution(
    rho: np.ndarray,
    params: SpinSystemParams,
    t: float,
    model: Optional[RateModel] = None,
    gamma_phi: float = 0.0,
    nu_shift=0.0,
) -> np.ndarray:
    """Unitary block evolution followed by memoryless T1 population mixing.

    Each m_S block keeps its coherently evolved content with its survival
    probability; population that hops in arrives with an unpolarized, phase-free
    nuclear state.  Electron populations follow the rate model exactly.  Nuclear
    coherences additionally decay as exp(-2 gamma_phi t).  ``nu_shift`` (MHz,
    scalar or array) detunes nu_C and broadcasts over a stack of states.
    """
    if t < 0:
        raise RelaxationError(f"t must be >= 0, got {t}")
    if model is None:
        model = RateModel(params.kappa)
    shift = np.asarray(nu_shift, dtype=float)
    if shift.ndim == 0:
        H = secular_hamiltonian(params, float(shift))
    else:
        # a detuning of nu_C only adds -shift * Iz
        Iz = spin_operators().Iz
        H = secular_hamiltonian(params) - shift[..., None, None] * Iz
    U = qcore.hermitian_expm(H, t * 1e3)
    rho = qcore.apply_unitary(rho, U)
    if model.kappa == 0 and gamma_phi == 0:
        return rho

    survive = np.array([math.exp(-model.out_rate(m) * t) for m in MS_VALUES])
    surv6 = np.repeat(survive, 2)
    factor = np.sqrt(np.outer(surv6, surv6))
    if gamma_phi > 0:
        nuc = np.tile([0, 1], 3)
        factor = factor * np.where(nuc[:, None] != nuc[None, :], math.exp(-2.0 * gamma_phi * t), 1.0)
    old_pops = np.stack([np.real(np.trace(qcore.ms_block(rho, m), axis1=-2, axis2=-1)) for m in MS_VALUES], -1)
    new_pops = old_pops @ qcore.matrix_exponential(model.generator(), t).T
    out = rho * factor
    for i, m in enumerate(MS_VALUES):
        inflow = new_pops[..., i] - survive[i] * old_pops[..., i]
        s = block_slice(m)
        out[..., s, s] = out[..., s, s] + 0.5 * np.asarray(inflow)[..., None, None] * np.eye(2)
    return out


def evolution_grid_error(populations_fn, taus: Sequence[float], s1: float, kappa: float) -> float:
    """Largest deviation of ``populations_fn(tau)`` from the closed form over ``taus``."""
    worst = 0.0
    for tau in taus:
        ref = np.array(analytic_populations(s1, kappa, tau))
        got = np.array(populations_fn(tau))
        worst = max(worst, float(np.max(np.abs(ref - got))))
    return worst
