"""Oracle-equivalence checks run by ``nvdephasing validate``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import circuits, qcore, relaxation
from .fitting import extract_segment_amplitudes, fit_segment_sinusoid
from .protocols import ProtocolConfig, segment_grid, segment_windows, simulate_protocol
from .spin_model import SpinSystemParams, basis_index, nuclear_precession_frequency


@dataclass
class Check:
    name: str
    value: float
    tolerance: str
    passed: bool
    detail: str = ""


def _frequency_checks(p):
    out = []
    for m_s, ref in ((0, 0.158), (-1, 0.110), (1, 0.329)):
        nu = nuclear_precession_frequency(p, m_s)
        out.append(Check(f"nu({m_s:+d}) [MHz]", nu, f"|nu-{ref}|<5e-4", abs(nu - ref) < 5e-4, f"{nu:.3f} MHz"))
    return out


def _population_checks(p):
    taus = np.linspace(0.0, 10.0 * p.T1e, 1000)
    P0, Pm1, Pp1 = relaxation.analytic_populations_array(p.s1, p.kappa, taus)
    sum_dev = float(np.max(np.abs(P0 + Pm1 + Pp1 - 1.0)))
    model = relaxation.RateModel(p.kappa)
    init = relaxation.PopulationTriple(p.s1, 0.0, 1.0 - p.s1)
    num = np.array([relaxation.numeric_populations(init, model, t) for t in taus])
    oracle_dev = float(np.max(np.abs(num - np.column_stack([P0, Pm1, Pp1]))))
    return [
        Check("population sum", sum_dev, "<1e-12", sum_dev < 1e-12),
        Check("analytic vs rate-matrix populations", oracle_dev, "<1e-10", oracle_dev < 1e-10),
    ]


def _lindblad_checks(p):
    gen = relaxation.build_lindblad(p)
    rho0 = qcore.apply_unitary(circuits.initial_state(p.s1), circuits.gate_unitary(circuits.HadamardNuclear()))
    worst = drift = 0.0
    for tau in (0.5, 2.0, p.T1e, 2 * p.T1e):
        rho = relaxation.evolve_lindblad(rho0, gen, tau, params=p)
        pops = qcore.block_populations(rho)
        ref = relaxation.analytic_populations(p.s1, p.kappa, tau)
        worst = max(worst, abs(pops[0] - ref.P0), abs(pops[-1] - ref.Pm1), abs(pops[1] - ref.Pp1))
        drift = max(drift, abs(np.trace(rho) - 1.0))
    rk4 = relaxation.evolve_lindblad(rho0, gen, p.T1e, params=p)
    exact = relaxation.evolve_lindblad(rho0, gen, p.T1e, method="expm")
    agree = float(np.max(np.abs(rk4 - exact)))
    return [
        Check("lindblad vs analytic populations", worst, "<1e-7", worst < 1e-7),
        Check("lindblad trace drift", drift, "<1e-9", drift < 1e-9),
        Check("rk4 vs superoperator exponential", agree, "<1e-7", agree < 1e-7),
    ]


def _gate_checks(p):
    S = circuits.swap_unitary()
    inv = float(np.max(np.abs(S @ S - np.eye(6))))
    gates = [
        circuits.HadamardNuclear(),
        circuits.PiXNuclear(),
        circuits.SwapE0M1(),
        circuits.MWPulse(90.0, 0.3),
    ]
    unit = max(float(np.max(np.abs(qcore.dagger(U) @ U - np.eye(6)))) for U in (circuits.gate_unitary(g) for g in gates))
    # nuclear coherence in m_S=0 must land on the electron {|0>,|-1>} pair
    rho = qcore.apply_unitary(circuits.initial_state(1.0), circuits.gate_unitary(circuits.HadamardNuclear()))
    out = qcore.apply_unitary(rho, S)
    up0, dn0, upm = (basis_index(0, True), basis_index(0, False), basis_index(-1, True))
    moved = abs(out[up0, upm] - rho[up0, dn0]) + abs(out[up0, dn0])
    return [
        Check("SWAP involution", inv, "<1e-12", inv < 1e-12),
        Check("SWAP coherence transfer", moved, "<1e-12", moved < 1e-12),
        Check("gate unitarity", unit, "<1e-12", unit < 1e-12),
    ]


def _signal_checks(p):
    cfg = ProtocolConfig(
        protocol="FID",
        engine="lindblad",
        kappa=0.0,
        tau_grid=segment_grid([0.0, 1.0]),
    )
    tr = simulate_protocol(cfg, p)
    (start, stop) = segment_windows([1.0])[0]
    sel = (tr.tau >= start) & (tr.tau < stop)
    fit = fit_segment_sinusoid(tr.tau[sel], tr.signal[sel], 0.3)
    nu = abs(fit.params["nu"])
    out = [Check("FID signal frequency [MHz]", nu, "|nu-0.342|<1e-6", abs(nu - 0.342) < 1e-6, f"{nu:.6f} MHz")]

    amps = []
    for shift in (0.0, 0.003, -0.01):
        cfg_h = ProtocolConfig(protocol="Hahn", kappa=0.0, tau_grid=segment_grid([0.0, 5.0]))
        noise = circuits.NoiseModel("analytic", kappa=0.0, nu_shift=shift)
        circ = circuits.hahn_circuit(cfg_h.detuning(p))
        rho0 = circuits.initial_state(p.s1)
        sig = [float(circuits.readout_p0(circuits.run_circuit(rho0, circ, t, p, noise))) for t in cfg_h.tau_grid]
        segs = extract_segment_amplitudes(cfg_h.tau_grid, sig, segment_windows([0.0, 5.0]), cfg_h.signal_frequency(p))
        amps.extend(s.amplitude for s in segs)
    spread = float(np.ptp(amps))
    out.append(Check("echo refocusing (amplitude spread)", spread, "<1e-9", spread < 1e-9))
    return out


def run_validation(params: SpinSystemParams | None = None) -> list:
    p = params or SpinSystemParams()
    checks = []
    for group in (_frequency_checks, _population_checks, _lindblad_checks, _gate_checks, _signal_checks):
        t0 = time.perf_counter()
        group_checks = group(p)
        elapsed = time.perf_counter() - t0
        for c in group_checks:
            c.detail = (c.detail + f" ({elapsed:.2f}s)").strip()
        checks.extend(group_checks)
    return checks


def format_report(checks) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'check':<{width}}  {'value':>12}  {'tolerance':<18} result"]
    for c in checks:
        lines.append(f"{c.name:<{width}}  {c.value:>12.4g}  {c.tolerance:<18} {'PASS' if c.passed else 'FAIL'}  {c.detail}")
    return "\n".join(lines)
