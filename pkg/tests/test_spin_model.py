import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvdephasing.spin_model import (
    ParameterError,
    SpinSystemParams,
    block_slice,
    build_hamiltonian,
    nuclear_precession_frequency,
    secular_hamiltonian,
    spin_operators,
)


def test_operator_spectra():
    ops = spin_operators()
    assert np.allclose(sorted(np.linalg.eigvalsh(ops.Sz)), [-1, -1, 0, 0, 1, 1])
    assert np.allclose(sorted(np.linalg.eigvalsh(ops.Iz)), [-0.5] * 3 + [0.5] * 3)
    for op in (ops.Sz, ops.Sz2, ops.Ix, ops.Iz):
        assert np.allclose(op, op.conj().T)
    assert np.allclose(ops.Sz @ ops.Iz, ops.Iz @ ops.Sz)


def test_ms0_block_is_bare_larmor(params):
    H = build_hamiltonian(params)
    s = block_slice(0)
    assert np.allclose(H[s, s], np.diag([-0.079, 0.079]), atol=1e-15)


def test_ms_minus1_block_by_hand(params):
    # Sz = -1: D + (nu_e - A_N) on the diagonal plus (-nu_C - A_zz) Iz - A_zx Ix
    H = build_hamiltonian(params)
    s = block_slice(-1)
    offset = params.D + params.nu_e - params.A_N
    block = H[s, s] - offset * np.eye(2)
    assert np.allclose(block, [[-0.003, -0.055], [-0.055, 0.003]], atol=1e-12)


def test_uncoupled_limit(params):
    p = params.replace(A_zx=0.0, A_zz=0.0, A_N=0.0)
    ops = spin_operators()
    expected = p.D * ops.Sz2 - p.nu_e * ops.Sz - p.nu_c * ops.Iz
    assert np.array_equal(build_hamiltonian(p), expected)


def test_hamiltonian_hermitian_and_block_diagonal(params):
    H = build_hamiltonian(params)
    assert np.max(np.abs(H - H.conj().T)) < 1e-15
    ops = spin_operators()
    assert np.max(np.abs(H @ ops.Sz - ops.Sz @ H)) < 1e-14


def test_no_tilt_gives_diagonal_hamiltonian(params):
    H = build_hamiltonian(params.replace(A_zx=0.0))
    assert np.count_nonzero(H - np.diag(np.diag(H))) == 0


@pytest.mark.parametrize("m_s, expected", [(0, 0.158), (-1, 0.110), (1, 0.329)])
def test_precession_frequencies_match_quoted_values(params, m_s, expected):
    assert abs(nuclear_precession_frequency(params, m_s) - expected) < 5e-4


def test_ms0_frequency_is_larmor(params):
    assert nuclear_precession_frequency(params, 0) == params.nu_c


def test_bad_ms_raises(params):
    with pytest.raises(ParameterError):
        nuclear_precession_frequency(params, 2)


valid_params = st.builds(
    SpinSystemParams,
    nu_C=st.floats(0.01, 2.0),
    A_zz=st.floats(-1.0, 1.0),
    A_zx=st.floats(-1.0, 1.0),
    B=st.floats(1.0, 1000.0),
)


@given(valid_params, st.sampled_from([-1, 0, 1]))
@settings(max_examples=200, deadline=None)
def test_frequency_equals_block_eigen_gap(p, m_s):
    H = secular_hamiltonian(p)
    s = block_slice(m_s)
    w = np.linalg.eigvalsh(H[s, s])
    nu = nuclear_precession_frequency(p, m_s)
    assert abs((w[1] - w[0]) - nu) <= 1e-10 * max(nu, 1e-12) + 1e-14


@given(valid_params)
@settings(max_examples=50, deadline=None)
def test_full_hamiltonian_commutes_with_sz(p):
    H = build_hamiltonian(p)
    Sz = spin_operators().Sz
    assert np.max(np.abs(H @ Sz - Sz @ H)) < 1e-14 * max(1.0, np.abs(H).max())


def test_nu_c_consistency_with_gamma():
    SpinSystemParams(nu_C=0.158, gamma_C=0.158 / 148.0)
    with pytest.raises(ParameterError):
        SpinSystemParams(nu_C=0.158, gamma_C=0.0010708)
    p = SpinSystemParams(nu_C=None, gamma_C=0.0010708)
    assert math.isclose(p.nu_c, 148.0 * 0.0010708)


@pytest.mark.parametrize(
    "changes",
    [{"s1": 1.2}, {"s1": -0.1}, {"T1e": 0.0}, {"T2star_C": -1.0}, {"T2_C": 0.0}, {"D": float("nan")}],
)
def test_invalid_parameters_rejected(changes):
    with pytest.raises(ParameterError):
        SpinSystemParams(**changes)


def test_kappa_from_t1(params):
    assert math.isclose(params.kappa, 1.0 / (3 * 5.5))


def test_frequency_is_fast(params):
    t0 = time.perf_counter()
    for _ in range(1000):
        nuclear_precession_frequency(params, -1)
    assert (time.perf_counter() - t0) / 1000 < 1e-3
