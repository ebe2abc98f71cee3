"""FID and Hahn-echo experiments over a delay grid, plus the photon-count readout.

Three engines produce the noiseless signal:

``analytic``
    closed-form readout populations with exponential coherence decay,
``lindblad``
    the circuits of :mod:`circuits` with the full 6-level master equation,
``ensemble``
    the circuits averaged over quasi-static Gaussian detunings of nu_C.

Randomness is drawn from per-point substreams of ``numpy.random.SeedSequence``
so the output does not depend on the order in which points are evaluated.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import circuits, relaxation
from .spin_model import SpinSystemParams

PROTOCOLS = ("FID", "Hahn")
FID_DETUNING = -0.5

# substream tags for SeedSequence spawn keys
_ENSEMBLE_STREAM = 0
_SHOT_STREAM = 1


class ProtocolError(ValueError):
    pass


def segment_grid(centers, n_points: int = 48, periods: float = 4.0, nu: float = 0.342) -> tuple:
    """Delay grid (ms) made of short windows starting at each of ``centers``.

    Each window covers ``periods`` oscillation periods at ``nu`` MHz with
    ``n_points`` samples.
    """
    width = periods / abs(nu) * 1e-3
    step = width / n_points
    taus = []
    for c in centers:
        taus.extend(c + step * np.arange(n_points))
    return tuple(float(t) for t in np.round(taus, 12))


def default_segments() -> list:
    return [float(c) for c in np.arange(0.0, 24.0 + 1e-9, 2.0)]


def segment_windows(centers=None, periods: float = 4.0, nu: float = 0.342) -> list:
    """(start, stop) windows in ms matching :func:`segment_grid`."""
    centers = default_segments() if centers is None else centers
    width = periods / abs(nu) * 1e-3
    return [(float(c), float(c) + width) for c in centers]


@dataclass(frozen=True)
class ReadoutConfig:
    """Mean photons per shot for the bright (|0>) and dark states, and the offset d0."""

    lambda_bright: float = 1.0
    lambda_dark: float = 0.0
    d0: float = 0.0

    def __post_init__(self):
        if not (self.lambda_bright > self.lambda_dark >= 0):
            raise ProtocolError("need lambda_bright > lambda_dark >= 0")


@dataclass(frozen=True)
class ProtocolConfig:
    protocol: str = "FID"
    tau_grid: tuple = field(default_factory=lambda: segment_grid(default_segments()))
    nu_d: Optional[float] = None
    phi0: float = 0.0
    engine: str = "analytic"
    shots: int = 0
    ensemble_size: int = 200
    sigma_qs: float = 0.0
    gamma_phi: float = 0.0
    kappa: Optional[float] = None
    seed: int = 0
    integrator: str = "rk4"
    dt: Optional[float] = None
    workers: int = 1
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ProtocolError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.engine not in circuits.ENGINES:
            raise ProtocolError(f"engine must be one of {circuits.ENGINES}, got {self.engine!r}")
        tau = np.asarray(self.tau_grid, dtype=float)
        if tau.ndim != 1 or tau.size == 0:
            raise ProtocolError("tau_grid must be a non-empty list")
        if np.any(tau < 0) or np.any(np.diff(tau) <= 0):
            raise ProtocolError("tau_grid must be non-negative and strictly increasing")
        if self.shots < 0 or self.ensemble_size < 1 or self.workers < 1:
            raise ProtocolError("shots >= 0, ensemble_size >= 1 and workers >= 1 required")
        if self.sigma_qs < 0 or self.gamma_phi < 0:
            raise ProtocolError("sigma_qs and gamma_phi must be >= 0")
        if self.kappa is not None and self.kappa < 0:
            raise ProtocolError("kappa must be >= 0")
        if self.integrator not in ("rk4", "expm"):
            raise ProtocolError(f"integrator must be rk4 or expm, got {self.integrator!r}")
        if self.dt is not None and not self.dt > 0:
            raise ProtocolError("dt must be > 0 (ms)")

    def detuning(self, params: SpinSystemParams) -> float:
        """Phase-ramp frequency in MHz; the Hahn default keeps the FID signal frequency."""
        if self.nu_d is not None:
            return self.nu_d
        if self.protocol == "FID":
            return FID_DETUNING
        return FID_DETUNING + params.nu_c

    def signal_frequency(self, params: SpinSystemParams) -> float:
        """Signed oscillation frequency (MHz) of the readout signal."""
        if self.protocol == "FID":
            return params.nu_c + self.detuning(params)
        return self.detuning(params)

    def hop_rate(self, params: SpinSystemParams) -> float:
        return params.kappa if self.kappa is None else self.kappa

    def to_dict(self) -> dict:
        """Config echo; ``workers`` is left out because it never changes the output."""
        d = asdict(self)
        d["tau_grid"] = list(self.tau_grid)
        del d["workers"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        d = dict(d)
        if "readout" in d:
            d["readout"] = ReadoutConfig(**d["readout"])
        if "tau_grid" in d:
            d["tau_grid"] = tuple(float(t) for t in d["tau_grid"])
        return cls(**d)


@dataclass
class SignalTrace:
    tau: np.ndarray
    signal: np.ndarray
    stderr: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.stderr is None:
            self.stderr = np.zeros_like(self.signal)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.tau.shape == self.signal.shape == self.stderr.shape):
            raise ProtocolError("tau, signal and stderr must have equal lengths")
        if self.counts is not None:
            self.counts = np.asarray(self.counts)
            if self.counts.shape != self.tau.shape:
                raise ProtocolError("counts must match tau")

    def __len__(self):
        return self.tau.size


def _check(cfg: ProtocolConfig, protocol: str):
    if cfg.protocol != protocol:
        raise ProtocolError(f"config is for {cfg.protocol}, expected {protocol}")


def fid_analytic(cfg: ProtocolConfig, params: SpinSystemParams) -> SignalTrace:
    """Closed-form FID readout population.

    ``p = [P0 + P-1 + P0 c(tau) sin(2 pi nu tau + phi0)] / 2`` with
    ``c(tau) = c0 exp(-tau / T2*)`` and ``nu = nu_C + nu_d``.
    """
    _check(cfg, "FID")
    tau = np.asarray(cfg.tau_grid)
    P0, Pm1, _ = relaxation.analytic_populations_array(params.s1, cfg.hop_rate(params), tau)
    coh = params.c0_fid * np.exp(-tau / params.T2star_C)
    phase = 2 * np.pi * cfg.signal_frequency(params) * tau * 1e3 + cfg.phi0
    p = 0.5 * (P0 + Pm1 + P0 * coh * np.sin(phase))
    return SignalTrace(tau, p, meta={"config": cfg.to_dict()})


def hahn_analytic(cfg: ProtocolConfig, params: SpinSystemParams) -> SignalTrace:
    """Closed-form Hahn-echo readout population.

    ``p = (P0 + P-1)/2 [1 + c(tau) sin(2 pi nu_d tau + phi0)]`` with
    ``c(tau) = c0 exp(-tau / T2)``.
    """
    _check(cfg, "Hahn")
    tau = np.asarray(cfg.tau_grid)
    P0, Pm1, _ = relaxation.analytic_populations_array(params.s1, cfg.hop_rate(params), tau)
    coh = params.c0_hahn * np.exp(-tau / params.T2_C)
    phase = 2 * np.pi * cfg.detuning(params) * tau * 1e3 + cfg.phi0
    p = 0.5 * (P0 + Pm1) * (1.0 + coh * np.sin(phase))
    return SignalTrace(tau, p, meta={"config": cfg.to_dict()})


def fid_envelope(params: SpinSystemParams, tau, kappa: Optional[float] = None):
    kappa = params.kappa if kappa is None else kappa
    P0, _, _ = relaxation.analytic_populations_array(params.s1, kappa, tau)
    return 0.5 * P0 * params.c0_fid * np.exp(-np.asarray(tau) / params.T2star_C)


def hahn_envelope(params: SpinSystemParams, tau, kappa: Optional[float] = None):
    kappa = params.kappa if kappa is None else kappa
    P0, Pm1, _ = relaxation.analytic_populations_array(params.s1, kappa, tau)
    return 0.5 * (P0 + Pm1) * params.c0_hahn * np.exp(-np.asarray(tau) / params.T2_C)


def background(params: SpinSystemParams, tau, kappa: Optional[float] = None, d0: float = 0.0):
    kappa = params.kappa if kappa is None else kappa
    P0, Pm1, _ = relaxation.analytic_populations_array(params.s1, kappa, tau)
    return 0.5 * (P0 + Pm1) - d0


def gaussian_ensemble_amplitude(sigma_qs: float, tau):
    """Ensemble-averaged coherence for Gaussian static detuning (MHz), tau in ms."""
    t_us = np.asarray(tau) * 1e3
    return np.exp(-2.0 * (np.pi * sigma_qs * t_us) ** 2)


def circuit_for(cfg: ProtocolConfig, params: SpinSystemParams) -> circuits.Circuit:
    if cfg.protocol == "FID":
        return circuits.fid_circuit(cfg.detuning(params), cfg.phi0)
    return circuits.hahn_circuit(cfg.detuning(params), cfg.phi0)


def _substream(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag, index)))


def _point(cfg: ProtocolConfig, params: SpinSystemParams, circuit, rho0, index: int) -> float:
    tau = cfg.tau_grid[index]
    kappa = cfg.hop_rate(params)
    if cfg.engine == "lindblad":
        noise = circuits.NoiseModel(
            "lindblad", kappa=kappa, gamma_phi=cfg.gamma_phi, method=cfg.integrator, dt=cfg.dt
        )
        return float(circuits.readout_p0(circuits.run_circuit(rho0, circuit, tau, params, noise)))
    shifts = _substream(cfg.seed, _ENSEMBLE_STREAM, index).normal(0.0, cfg.sigma_qs, cfg.ensemble_size)
    noise = circuits.NoiseModel("ensemble", kappa=kappa, gamma_phi=cfg.gamma_phi, nu_shift=shifts)
    p = circuits.readout_p0(circuits.run_circuit(rho0, circuit, tau, params, noise))
    return float(np.mean(p))


def simulate_protocol(cfg: ProtocolConfig, params: SpinSystemParams) -> SignalTrace:
    """Noiseless readout population from the gate-level circuits.

    Each delay starts from the prepared initial state; the ``ensemble`` engine
    averages ``ensemble_size`` members with detunings drawn from
    Normal(0, sigma_qs).  Points are independent and may run on ``workers``
    threads without changing the result.
    """
    if cfg.engine not in ("lindblad", "ensemble"):
        raise ProtocolError("simulate_protocol needs the lindblad or ensemble engine")
    circuit = circuit_for(cfg, params)
    rho0 = circuits.initial_state(params.s1)
    idx = range(len(cfg.tau_grid))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            p = list(pool.map(lambda i: _point(cfg, params, circuit, rho0, i), idx))
    else:
        p = [_point(cfg, params, circuit, rho0, i) for i in idx]
    return SignalTrace(np.asarray(cfg.tau_grid), np.asarray(p), meta={"config": cfg.to_dict()})


def add_shot_noise(trace: SignalTrace, cfg: ProtocolConfig, rng: Optional[np.random.Generator] = None) -> SignalTrace:
    """Replace each population by a photon-count estimate from ``cfg.shots`` shots.

    A shot yields Poisson(p lb + (1 - p) ld) photons; the sum over shots is drawn
    directly as one Poisson variate.  The estimate
    ``(N/shots - ld) / (lb - ld)`` is unbiased for ``p``.  Without ``rng`` every
    point uses its own substream of ``cfg.seed``.
    """
    if cfg.shots <= 0:
        raise ProtocolError("add_shot_noise needs shots > 0")
    ro = cfg.readout
    p = np.clip(trace.signal, 0.0, 1.0)
    lam = cfg.shots * (p * ro.lambda_bright + (1.0 - p) * ro.lambda_dark)
    if rng is None:
        counts = np.array([_substream(cfg.seed, _SHOT_STREAM, i).poisson(lam[i]) for i in range(lam.size)])
    else:
        counts = rng.poisson(lam)
    contrast = cfg.shots * (ro.lambda_bright - ro.lambda_dark)
    estimate = (counts - cfg.shots * ro.lambda_dark) / contrast
    stderr = np.sqrt(np.maximum(counts, 1)) / contrast
    return SignalTrace(trace.tau, estimate, stderr, counts.astype(np.int64), dict(trace.meta))


def run_protocol(cfg: ProtocolConfig, params: SpinSystemParams) -> SignalTrace:
    """Noiseless signal from the configured engine, optional shot noise, minus d0."""
    if cfg.engine == "analytic":
        trace = fid_analytic(cfg, params) if cfg.protocol == "FID" else hahn_analytic(cfg, params)
    else:
        trace = simulate_protocol(cfg, params)
    if cfg.shots > 0:
        trace = add_shot_noise(trace, cfg)
    trace.signal = trace.signal - cfg.readout.d0
    trace.meta = {"config": cfg.to_dict(), "params": params.to_dict()}
    return trace


def with_overrides(cfg: ProtocolConfig, **changes) -> ProtocolConfig:
    return replace(cfg, **changes)
