import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from nvdephasing import qcore, relaxation
from nvdephasing.circuits import HadamardNuclear, gate_unitary, initial_state
from nvdephasing.spin_model import SpinSystemParams, basis_index

# Frozen from an independent ODE integration (scipy solve_ivp, rtol=atol=1e-13)
# of the three-level rate equations, s1=0.8, T1e=5.5 ms, at tau=5.5 ms.
POPS_AT_T1 = (0.5050104, 0.1758417, 0.3191479)


def _ode_populations(s1, kappa, tau):
    model = relaxation.RateModel(kappa)
    G = model.generator()
    sol = solve_ivp(lambda t, p: G @ p, (0, tau), [1 - s1, s1, 0.0], rtol=1e-13, atol=1e-13)
    pp1, p0, pm1 = sol.y[:, -1]
    return p0, pm1, pp1


def test_frozen_populations_at_t1():
    p = relaxation.analytic_populations(0.8, 1 / 16.5, 5.5)
    assert np.allclose(tuple(p), POPS_AT_T1, atol=1e-6)
    assert np.allclose(_ode_populations(0.8, 1 / 16.5, 5.5), POPS_AT_T1, atol=1e-6)


def test_quoted_populations_at_t1():
    p = relaxation.analytic_populations(0.8, 1 / 16.5, 5.5)
    assert np.allclose(tuple(p), (0.50501, 0.17584, 0.31914), atol=1e-5)


def test_generator_spectrum():
    G = relaxation.RateModel(0.2).generator()
    assert np.allclose(sorted(np.linalg.eigvals(G).real), [-0.6, -0.2, 0.0], atol=1e-14)
    assert np.allclose(G.sum(axis=0), 0.0)


def test_limits():
    p = relaxation.analytic_populations(0.8, 0.06, 0.0)
    assert tuple(p) == pytest.approx((0.8, 0.0, 0.2), abs=1e-15)
    p = relaxation.analytic_populations(0.8, 0.06, 1e4)
    assert tuple(p) == pytest.approx((1 / 3, 1 / 3, 1 / 3), abs=1e-12)
    p = relaxation.analytic_populations(0.8, 0.0, 3.0)
    assert tuple(p) == pytest.approx((0.8, 0.0, 0.2), abs=1e-15)


def test_negative_tau_rejected():
    with pytest.raises(relaxation.RelaxationError):
        relaxation.analytic_populations(0.8, 0.06, -1.0)


@given(st.floats(0, 1), st.floats(1e-4, 2.0), st.floats(0, 200))
@settings(max_examples=200, deadline=None)
def test_population_invariants(s1, kappa, tau):
    p = np.array(relaxation.analytic_populations(s1, kappa, tau))
    assert abs(p.sum() - 1) < 1e-12
    assert np.all(p >= -1e-15) and np.all(p <= 1 + 1e-15)


@given(st.floats(0, 1), st.floats(1e-3, 1.0), st.floats(0, 50))
@settings(max_examples=50, deadline=None)
def test_closed_form_matches_rate_matrix(s1, kappa, tau):
    init = relaxation.PopulationTriple(s1, 0.0, 1 - s1)
    num = relaxation.numeric_populations(init, relaxation.RateModel(kappa), tau)
    ref = relaxation.analytic_populations(s1, kappa, tau)
    assert np.max(np.abs(np.array(num) - np.array(ref))) < 1e-10


def _hadamard_state(s1=0.8):
    return qcore.apply_unitary(initial_state(s1), gate_unitary(HadamardNuclear()))


def test_lindblad_populations_match_closed_form(params):
    gen = relaxation.build_lindblad(params)
    rho0 = _hadamard_state()
    for tau in (0.3, 5.5, 20.0):
        rho = relaxation.evolve_lindblad(rho0, gen, tau, params=params)
        pops = qcore.block_populations(rho)
        ref = relaxation.analytic_populations(params.s1, params.kappa, tau)
        assert abs(pops[0] - ref.P0) < 1e-7
        assert abs(pops[-1] - ref.Pm1) < 1e-7
        assert abs(pops[1] - ref.Pp1) < 1e-7


def test_pure_dephasing_oracle(params):
    # kappa=0: coherence of |0,+> decays as exp(-2 gamma t) and rotates at nu_C
    gamma = 0.2
    gen = relaxation.build_lindblad(params, gamma_phi=gamma, kappa=0.0)
    rho0 = _hadamard_state(1.0)
    i_up, i_dn = basis_index(0, True), basis_index(0, False)
    for tau in (0.01, 1.0, 3.0):
        rho = relaxation.evolve_lindblad(rho0, gen, tau, method="expm")
        expected = 0.5 * np.exp(2j * np.pi * params.nu_c * tau * 1e3) * math.exp(-2 * gamma * tau)
        assert abs(rho[i_up, i_dn] - expected) < 1e-10


def test_rk4_converges_to_expm(params):
    gen = relaxation.build_lindblad(params, gamma_phi=0.05)
    rho0 = _hadamard_state()
    exact = relaxation.evolve_lindblad(rho0, gen, 3.0, method="expm")
    coarse = relaxation.evolve_lindblad(rho0, gen, 3.0, dt=4e-5)
    fine = relaxation.evolve_lindblad(rho0, gen, 3.0, dt=2e-5)
    e1, e2 = np.abs(coarse - exact).max(), np.abs(fine - exact).max()
    assert e2 < e1
    # fourth order: halving dt cuts the error by ~16
    assert e1 / e2 > 8


def test_step_refusal(params):
    gen = relaxation.build_lindblad(params)
    with pytest.raises(relaxation.StepTooLargeError):
        relaxation.evolve_lindblad(_hadamard_state(), gen, 1.0, dt=0.1)


def test_steady_state_is_mixed_without_coherence(params):
    ss = relaxation.steady_state(relaxation.build_lindblad(params, gamma_phi=0.1))
    pops = qcore.block_populations(ss)
    for m in (1, 0, -1):
        assert abs(pops[m] - 1 / 3) < 1e-10
    off = ss - np.diag(np.diag(ss))
    assert np.abs(off).max() < 1e-10


def test_mixing_evolution_populations(params):
    rho0 = _hadamard_state()
    for tau in (0.0, 2.0, 11.0):
        rho = relaxation.mixing_evolution(rho0, params, tau)
        pops = qcore.block_populations(rho)
        ref = relaxation.analytic_populations(params.s1, params.kappa, tau)
        assert abs(pops[0] - ref.P0) < 1e-13
        qcore.validate(rho)


def test_mixing_vs_lindblad_close(params):
    # the mixing engine forgets the nuclear state of population that hops in;
    # block populations agree exactly and the m_S=0 coherence nearly so
    gen = relaxation.build_lindblad(params)
    rho0 = _hadamard_state()
    a = relaxation.evolve_lindblad(rho0, gen, 4.0, method="expm")
    b = relaxation.mixing_evolution(rho0, params, 4.0)
    pa, pb = qcore.block_populations(a), qcore.block_populations(b)
    assert max(abs(pa[m] - pb[m]) for m in (1, 0, -1)) < 1e-12
    i, j = basis_index(0, True), basis_index(0, False)
    assert abs(a[i, j] - b[i, j]) < 5e-4


@given(st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0, 20))
@settings(max_examples=40, deadline=None)
def test_lindblad_keeps_state_physical(s1, kappa, gamma, tau):
    p = SpinSystemParams(s1=s1)
    gen = relaxation.build_lindblad(p, gamma_phi=gamma, kappa=kappa)
    rho = relaxation.evolve_lindblad(_hadamard_state(s1), gen, tau, method="expm")
    assert abs(np.trace(rho) - 1) < 1e-9
    assert qcore.min_eigenvalue(rho) > -1e-10
    assert np.abs(rho - rho.conj().T).max() < 1e-10


def test_rate_model_connectivity():
    model = relaxation.RateModel(0.1)
    assert model.rate(1, -1) == 0.0
    assert model.rate(0, 1) == 0.1
    assert model.out_rate(0) == pytest.approx(0.2)
    assert model.out_rate(1) == pytest.approx(0.1)


def test_step_halving_at_two_t1(params):
    gen = relaxation.build_lindblad(params, gamma_phi=1 / (2 * params.T2star_C))
    rho0 = _hadamard_state()
    dt = relaxation.default_step(params, gen)
    a = relaxation.evolve_lindblad(rho0, gen, 2 * params.T1e, dt=dt)
    b = relaxation.evolve_lindblad(rho0, gen, 2 * params.T1e, dt=dt / 2)
    assert np.abs(a - b).max() < 1e-8
    exact = relaxation.evolve_lindblad(rho0, gen, 2 * params.T1e, method="expm")
    assert np.abs(a - exact).max() < 1e-7
