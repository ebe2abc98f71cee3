import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvdephasing import fitting
from nvdephasing.fitting import (
    FitError,
    FitModel,
    analyze_trace,
    extract_segment_amplitudes,
    fit_dephasing,
    fit_global,
    fit_segment_sinusoid,
    parse_mask,
)
from nvdephasing.protocols import ProtocolConfig, ReadoutConfig, run_protocol, segment_windows


@given(
    st.floats(0.05, 0.3),
    st.floats(0.01, 0.4),
    st.floats(-math.pi, math.pi),
    st.floats(0.0, 20.0),
)
@settings(max_examples=100, deadline=None)
def test_linear_segment_recovers_exact_sinusoid(b, a, phi, start):
    nu = 0.342
    tau = start + np.arange(48) * (4 / nu * 1e-3) / 48
    y = b + a * np.sin(2 * np.pi * nu * tau * 1e3 + phi)
    (seg,) = extract_segment_amplitudes(tau, y, [(start, start + 4 / nu * 1e-3)], nu)
    assert abs(seg.amplitude - a) < 1e-9
    assert abs(seg.background - b) < 1e-9
    assert abs(math.remainder(seg.phase - phi, 2 * math.pi)) < 1e-7


def test_nonlinear_segment_fit_agrees_with_linear():
    nu = 0.342
    tau = 3.0 + np.linspace(0, 4 / nu * 1e-3, 48, endpoint=False)
    y = 0.4 + 0.12 * np.sin(2 * np.pi * 0.3425 * tau * 1e3 + 0.3)
    res = fit_segment_sinusoid(tau, y, 0.34)
    assert res.converged
    assert abs(res.params["nu"] - 0.3425) < 1e-8
    assert abs(res.params["a"] - 0.12) < 1e-8


def test_window_checks():
    tau = np.linspace(0, 1e-3, 100)
    y = np.zeros_like(tau)
    with pytest.raises(FitError):
        extract_segment_amplitudes(tau, y, [(0.0, 1e-6)], 0.342)
    with pytest.raises(FitError):
        extract_segment_amplitudes(tau, y, [(0.5, 0.6)], 0.342)


def test_parse_mask():
    assert parse_mask(["kappa=fixed:0.0606", "d0=fixed:0"]) == {"kappa": 0.0606, "d0": 0.0}
    for bad in (["kappa=free"], ["=fixed:1"], ["kappa=fixed:"]):
        with pytest.raises(FitError):
            parse_mask(bad)


def test_fit_dephasing_rejects_unknown_fixed(params):
    pts = [(t, 0.1) for t in range(5)]
    with pytest.raises(FitError):
        fit_dephasing("FID", pts, pts, params, {"s1": 0.8})
    with pytest.raises(FitError):
        fit_dephasing("Ramsey", pts, pts, params)


@pytest.mark.parametrize("protocol, c0, t2", [("FID", 0.80, 8.66), ("Hahn", 0.76, 14.10)])
def test_noiseless_round_trip(params, protocol, c0, t2):
    cfg = ProtocolConfig(protocol=protocol, readout=ReadoutConfig(d0=0.086))
    tr = run_protocol(cfg, params)
    nu = cfg.signal_frequency(params)
    _, res = analyze_trace(tr.tau, tr.signal, protocol, params, segment_windows(nu=nu), nu)
    assert res.converged
    assert abs(res.params["c0"] / c0 - 1) < 2e-3
    assert abs(res.params["T2"] / t2 - 1) < 2e-3
    # window-averaged backgrounds carry a small curvature bias
    assert abs(res.params["T1e"] / 5.5 - 1) < 1e-3
    assert abs(res.params["d0"] - 0.086) < 1e-4


@pytest.mark.parametrize("protocol", ["FID", "Hahn"])
def test_two_stage_and_global_fits_agree(params, protocol):
    cfg = ProtocolConfig(protocol=protocol, shots=10_000, seed=7, readout=ReadoutConfig(d0=0.086))
    tr = run_protocol(cfg, params)
    nu = cfg.signal_frequency(params)
    _, two = analyze_trace(tr.tau, tr.signal, protocol, params, segment_windows(nu=nu), nu)
    one = fit_global(tr.tau, tr.signal, protocol, params, nu)
    assert two.converged and one.converged
    for name in ("c0", "T2"):
        tol = 4 * math.hypot(two.stderr[name], one.stderr[name])
        assert abs(two.params[name] - one.params[name]) < tol


def test_fixed_parameters_are_held(params):
    cfg = ProtocolConfig(protocol="FID")
    tr = run_protocol(cfg, params)
    nu = cfg.signal_frequency(params)
    _, res = analyze_trace(tr.tau, tr.signal, "FID", params, segment_windows(nu=nu), nu, {"kappa": 0.05})
    assert res.params["kappa"] == 0.05
    assert res.stderr["kappa"] == 0.0


def test_constant_trace_reports_non_convergence(params):
    tau = np.asarray(ProtocolConfig().tau_grid)
    y = np.full_like(tau, 0.4)
    _, res = analyze_trace(tau, y, "FID", params, segment_windows(), 0.342)
    assert not res.converged
    assert all(math.isnan(v) for v in res.stderr.values())
    d = res.to_dict()
    assert d["stderr"]["c0"] is None


def test_least_squares_stderr_scales_with_noise():
    rng = np.random.default_rng(0)
    tau = np.linspace(0, 20, 200)
    spreads = []
    for sigma in (1e-3, 1e-2):
        y = fitting._background(tau, 0.06, 0.05, s1=0.8) + rng.normal(0, sigma, tau.size)
        res = fitting.least_squares(FitModel("background", s1=0.8), tau, y, {"kappa": 0.1, "d0": 0.0})
        spreads.append(res.stderr["kappa"])
    assert 5 < spreads[1] / spreads[0] < 20


def test_fit_model_validation():
    with pytest.raises(FitError):
        FitModel("polynomial")
    with pytest.raises(FitError):
        FitModel("background", fixed={"T2": 1.0})
