"""Two-stage recovery of dephasing parameters from readout traces.

Stage one fits a sinusoid of known frequency inside short delay windows and
returns one amplitude and one background per window.  Stage two fits the
background to the T1 population model and the amplitudes to the exponential
coherence envelope.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize

from .relaxation import analytic_populations_array
from .spin_model import SpinSystemParams

MAX_ITERATIONS = 500
STEP_TOL = 1e-8
GRAD_TOL = 1e-10


class FitError(ValueError):
    pass


def _pops(s1, kappa, tau):
    return analytic_populations_array(s1, max(kappa, 0.0), tau)


def _sinusoid(tau, b, a, nu, phi):
    return b + a * np.sin(2 * np.pi * nu * np.asarray(tau) * 1e3 + phi)


def _fid_envelope(tau, c0, T2, kappa, *, s1):
    P0, _, _ = _pops(s1, kappa, tau)
    return 0.5 * P0 * c0 * np.exp(-np.asarray(tau) / T2)


def _hahn_envelope(tau, c0, T2, kappa, *, s1):
    P0, Pm1, _ = _pops(s1, kappa, tau)
    return 0.5 * (P0 + Pm1) * c0 * np.exp(-np.asarray(tau) / T2)


def _background(tau, kappa, d0, *, s1):
    P0, Pm1, _ = _pops(s1, kappa, tau)
    return 0.5 * (P0 + Pm1) - d0


def _global_fid(tau, kappa, d0, c0, T2, phi0, *, s1, nu):
    P0, Pm1, _ = _pops(s1, kappa, tau)
    osc = np.sin(2 * np.pi * nu * np.asarray(tau) * 1e3 + phi0)
    return 0.5 * (P0 + Pm1 + P0 * c0 * np.exp(-np.asarray(tau) / T2) * osc) - d0


def _global_hahn(tau, kappa, d0, c0, T2, phi0, *, s1, nu):
    P0, Pm1, _ = _pops(s1, kappa, tau)
    osc = np.sin(2 * np.pi * nu * np.asarray(tau) * 1e3 + phi0)
    return 0.5 * (P0 + Pm1) * (1.0 + c0 * np.exp(-np.asarray(tau) / T2) * osc) - d0


_MODELS = {
    "segment_sinusoid": (_sinusoid, ("b", "a", "nu", "phi")),
    "fid_envelope": (_fid_envelope, ("c0", "T2", "kappa")),
    "hahn_envelope": (_hahn_envelope, ("c0", "T2", "kappa")),
    "background": (_background, ("kappa", "d0")),
    "fid_global": (_global_fid, ("kappa", "d0", "c0", "T2", "phi0")),
    "hahn_global": (_global_hahn, ("kappa", "d0", "c0", "T2", "phi0")),
}


@dataclass(frozen=True)
class FitModel:
    """A model family plus the parameters held fixed during the fit.

    ``s1`` is shared by all population-based models; ``nu`` (MHz) is used by
    the global models.
    """

    kind: str
    fixed: dict = field(default_factory=dict)
    s1: float = 0.80
    nu: float = -0.342

    def __post_init__(self):
        if self.kind not in _MODELS:
            raise FitError(f"unknown model {self.kind!r}")
        unknown = set(self.fixed) - set(self.names)
        if unknown:
            raise FitError(f"cannot fix unknown parameters {sorted(unknown)}")

    @property
    def names(self) -> tuple:
        return _MODELS[self.kind][1]

    def function(self) -> Callable:
        fn = _MODELS[self.kind][0]
        if self.kind in ("segment_sinusoid",):
            return fn
        if self.kind.endswith("_global"):
            return lambda tau, *p: fn(tau, *p, s1=self.s1, nu=self.nu)
        return lambda tau, *p: fn(tau, *p, s1=self.s1)

    def evaluate(self, tau, values: dict):
        return self.function()(tau, *(values[n] for n in self.names))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    kind: str
    params: dict
    stderr: dict
    fixed: dict
    rss: float
    converged: bool
    iterations: int
    message: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            return v if (isinstance(v, float) and math.isfinite(v)) or not isinstance(v, float) else None

        d = asdict(self)
        d["stderr"] = {k: clean(v) for k, v in self.stderr.items()}
        d["params"] = {k: clean(v) for k, v in self.params.items()}
        return d


def least_squares(model: FitModel, tau, y, init: dict) -> FitResult:
    """Minimize the sum of squared residuals over the free parameters.

    Levenberg-Marquardt with forward-difference Jacobians.  Uncertainties come
    from ``s^2 (J^T J)^-1``; they are reported only for a converged fit with a
    non-singular Jacobian, otherwise they are NaN and ``converged`` is False.
    """
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(y, dtype=float)
    free = [n for n in model.names if n not in model.fixed]
    if not free:
        raise FitError("no free parameters")
    if tau.size < len(free):
        raise FitError(f"{tau.size} points cannot determine {len(free)} parameters")
    x0 = np.array([float(init[n]) for n in free])
    if not np.all(np.isfinite(x0)):
        raise FitError("non-finite initial guess")
    fn = model.function()

    def unpack(x):
        vals = dict(model.fixed)
        vals.update(zip(free, x))
        return [vals[n] for n in model.names]

    def residual(x):
        return fn(tau, *unpack(x)) - y

    with np.errstate(all="ignore"):
        sol = optimize.least_squares(
            residual,
            x0,
            method="lm",
            xtol=STEP_TOL,
            gtol=GRAD_TOL,
            ftol=1e-15,
            max_nfev=MAX_ITERATIONS * (len(free) + 1),
        )
    rss = float(np.sum(sol.fun**2))
    converged = bool(sol.success and np.all(np.isfinite(sol.x)))
    stderr = {n: float("nan") for n in free}
    message = sol.message
    if converged:
        J = sol.jac
        jtj = J.T @ J
        dof = max(tau.size - len(free), 1)
        s2 = rss / dof
        try:
            if np.linalg.cond(jtj) > 1e14:
                raise np.linalg.LinAlgError("singular Jacobian")
            cov = np.linalg.inv(jtj) * s2
            stderr = {n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(free)}
        except np.linalg.LinAlgError as exc:
            converged = False
            message = f"{message}; {exc}"
    params = dict(model.fixed)
    params.update(zip(free, (float(v) for v in sol.x)))
    for n in model.fixed:
        stderr[n] = 0.0
    return FitResult(
        kind=model.kind,
        params={n: float(params[n]) for n in model.names},
        stderr=stderr,
        fixed=dict(model.fixed),
        rss=rss,
        converged=converged,
        iterations=int(sol.nfev),
        message=message,
    )


class SegmentAmplitude(NamedTuple):
    tau_center: float
    amplitude: float
    background: float
    phase: float


def fit_segment_sinusoid(tau, y, nu: float, free_nu: bool = True) -> FitResult:
    """Sinusoid fit of one window; ``nu`` (MHz) is the start value or held fixed."""
    tau = np.asarray(tau, dtype=float)
    t0 = float(tau[0])
    lin = _linear_sinusoid(tau - t0, np.asarray(y, float), nu)
    init = {"b": lin.background, "a": max(lin.amplitude, 1e-12), "nu": nu, "phi": lin.phase}
    fixed = {} if free_nu else {"nu": nu}
    res = least_squares(FitModel("segment_sinusoid", fixed=fixed), tau - t0, y, init)
    p = res.params
    if p["a"] < 0:
        p["a"] = -p["a"]
        p["phi"] += math.pi
    p["phi"] = math.remainder(p["phi"] - 2 * math.pi * p["nu"] * t0 * 1e3, 2 * math.pi)
    return res


def _linear_sinusoid(t, y, nu) -> SegmentAmplitude:
    w = 2 * np.pi * nu * np.asarray(t) * 1e3
    X = np.column_stack([np.ones_like(w), np.sin(w), np.cos(w)])
    (b, alpha, beta), *_ = np.linalg.lstsq(X, y, rcond=None)
    return SegmentAmplitude(float(np.mean(t)), float(math.hypot(alpha, beta)), float(b), float(math.atan2(beta, alpha)))


def extract_segment_amplitudes(tau, y, segments: Sequence, nu: float) -> list:
    """Amplitude and background of a fixed-frequency sinusoid in each window.

    ``segments`` holds ``(start, stop)`` delays in ms; each window must cover
    at least two periods of ``nu`` (MHz).  With the frequency fixed the model
    is linear, so each window is solved exactly by linear least squares.  The
    amplitude sign is folded into the phase.
    """
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(y, dtype=float)
    period = 1e-3 / abs(nu)
    out = []
    for start, stop in segments:
        if stop - start < 2 * period * (1 - 1e-9):
            raise FitError(f"window ({start}, {stop}) ms is shorter than two periods")
        sel = (tau >= start) & (tau < stop)
        if np.count_nonzero(sel) < 4:
            raise FitError(f"window ({start}, {stop}) ms has fewer than 4 samples")
        t = tau[sel]
        seg = _linear_sinusoid(t - start, y[sel], nu)
        phase = math.remainder(seg.phase - 2 * math.pi * nu * start * 1e3, 2 * math.pi)
        out.append(SegmentAmplitude(float(np.mean(t)), seg.amplitude, seg.background, phase))
    return out


def _loglinear_init(tau, amp, weight):
    """c0, T2 from a straight-line fit of log(amp / weight) against tau."""
    tau = np.asarray(tau)
    ratio = np.asarray(amp) / np.asarray(weight)
    ok = ratio > 0
    if np.count_nonzero(ok) < 2:
        return None
    slope, intercept = np.polyfit(tau[ok], np.log(ratio[ok]), 1)
    if slope >= 0:
        return None
    return math.exp(intercept), -1.0 / slope


def parse_mask(items: Sequence[str]) -> dict:
    """Turn ``["kappa=fixed:0.0606"]`` into ``{"kappa": 0.0606}``."""
    fixed = {}
    for item in items:
        name, _, spec = item.partition("=")
        kind, _, value = spec.partition(":")
        if kind != "fixed" or not name or not value:
            raise FitError(f"mask entries look like name=fixed:value, got {item!r}")
        fixed[name.strip()] = float(value)
    return fixed


def fit_dephasing(
    protocol: str,
    amplitudes: Sequence,
    backgrounds: Sequence,
    params: SpinSystemParams,
    fixed: Optional[dict] = None,
) -> FitResult:
    """Fit background then coherence envelope.

    ``amplitudes`` and ``backgrounds`` are ``(tau, value)`` pairs.  The
    background fit determines ``kappa`` and ``d0``; the envelope fit then
    determines ``c0`` and ``T2`` (T2* for the FID) with that ``kappa``.
    ``fixed`` may pin any of ``kappa``, ``d0``, ``c0``, ``T2``.
    """
    if protocol not in ("FID", "Hahn"):
        raise FitError(f"unknown protocol {protocol!r}")
    fixed = dict(fixed or {})
    unknown = set(fixed) - {"kappa", "d0", "c0", "T2"}
    if unknown:
        raise FitError(f"cannot fix {sorted(unknown)}")
    if len(amplitudes) < 4 or len(backgrounds) < 4:
        raise FitError("need at least 4 envelope points")
    tb, yb = (np.asarray(v, float) for v in zip(*backgrounds))
    ta, ya = (np.asarray(v, float) for v in zip(*amplitudes))

    bg_fixed = {k: fixed[k] for k in ("kappa", "d0") if k in fixed}
    if len(bg_fixed) == 2:
        bg = FitResult("background", dict(bg_fixed), {k: 0.0 for k in bg_fixed}, bg_fixed, 0.0, True, 0)
    else:
        bg = least_squares(
            FitModel("background", fixed=bg_fixed, s1=params.s1),
            tb,
            yb,
            {"kappa": params.kappa, "d0": float(np.mean(background_start(params, tb) - yb))},
        )
    kappa = bg.params["kappa"]

    kind = "fid_envelope" if protocol == "FID" else "hahn_envelope"
    P0, Pm1, _ = _pops(params.s1, kappa, ta)
    weight = 0.5 * P0 if protocol == "FID" else 0.5 * (P0 + Pm1)
    guess = _loglinear_init(ta, ya, weight)
    t2_default = params.T2star_C if protocol == "FID" else params.T2_C
    c0_init, t2_init = guess if guess else (max(float(ya[0] / weight[0]), 1e-3), t2_default)
    env_fixed = {"kappa": kappa}
    env_fixed.update({k: fixed[k] for k in ("c0", "T2") if k in fixed})
    env = least_squares(
        FitModel(kind, fixed=env_fixed, s1=params.s1), ta, ya, {"c0": c0_init, "T2": t2_init}
    )
    converged = bg.converged and env.converged and env.params["T2"] > 0
    values = {
        "c0": env.params["c0"],
        "T2": env.params["T2"],
        "kappa": kappa,
        "d0": bg.params["d0"],
        "T1e": 1.0 / (3.0 * kappa) if kappa > 0 else float("inf"),
    }
    errs = {
        "c0": env.stderr.get("c0", 0.0),
        "T2": env.stderr.get("T2", 0.0),
        "kappa": bg.stderr.get("kappa", 0.0),
        "d0": bg.stderr.get("d0", 0.0),
    }
    k_err = errs["kappa"]
    errs["T1e"] = k_err / (3.0 * kappa**2) if kappa > 0 and math.isfinite(k_err) else float("nan")
    if not converged:
        errs = {k: float("nan") for k in errs}
    return FitResult(
        kind=protocol,
        params=values,
        stderr=errs,
        fixed=fixed,
        rss=bg.rss + env.rss,
        converged=converged,
        iterations=bg.iterations + env.iterations,
        message=f"background: {bg.message} | envelope: {env.message}",
    )


def background_start(params: SpinSystemParams, tau):
    P0, Pm1, _ = _pops(params.s1, params.kappa, tau)
    return 0.5 * (P0 + Pm1)


def analyze_trace(
    tau,
    y,
    protocol: str,
    params: SpinSystemParams,
    segments: Sequence,
    nu: float,
    fixed: Optional[dict] = None,
):
    """Segment amplitudes followed by :func:`fit_dephasing`; returns ``(segments, result)``."""
    segs = extract_segment_amplitudes(tau, y, segments, nu)
    amps = [(s.tau_center, s.amplitude) for s in segs]
    bgs = [(s.tau_center, s.background) for s in segs]
    return segs, fit_dephasing(protocol, amps, bgs, params, fixed)


def fit_global(tau, y, protocol: str, params: SpinSystemParams, nu: float, phi0: float = 0.0, fixed=None) -> FitResult:
    """One-shot fit of the whole trace, for cross-checking the two-stage route."""
    kind = "fid_global" if protocol == "FID" else "hahn_global"
    c0 = params.c0_fid if protocol == "FID" else params.c0_hahn
    t2 = params.T2star_C if protocol == "FID" else params.T2_C
    init = {"kappa": params.kappa, "d0": 0.0, "c0": c0, "T2": t2, "phi0": phi0}
    return least_squares(FitModel(kind, fixed=dict(fixed or {}), s1=params.s1, nu=nu), tau, y, init)
