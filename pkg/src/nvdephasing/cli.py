"""Command-line front end: ``nvdephasing simulate | fit | validate | plot``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import fitting, svgplot, traceio, validation
from .protocols import ProtocolConfig, ProtocolError, SignalTrace, run_protocol
from .relaxation import RelaxationError
from .spin_model import ParameterError

log = logging.getLogger("nvdephasing")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- simulate


def _simulate_overrides(args) -> list:
    out = list(args.set or [])
    for flag in ("protocol", "engine", "shots", "seed", "workers"):
        value = getattr(args, flag)
        if value is not None:
            out.append(f"protocol.{flag}={json.dumps(value)}")
    if args.out:
        out.append(f"output.directory={json.dumps(args.out)}")
    return out


def cmd_simulate(args) -> int:
    try:
        raw = cfgmod.apply_overrides(cfgmod.load(args.config), _simulate_overrides(args))
        run = cfgmod.from_dict(raw)
        outdir = run.output.path()
        cfgmod.ensure_writable(outdir)
    except (cfgmod.ConfigError, ParameterError, ProtocolError) as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG)
    try:
        trace = run_protocol(run.protocol, run.spin)
    except RelaxationError as exc:
        raise CliError(f"numerical refusal: {exc}", EXIT_NUMERIC)
    echo = run.to_dict()
    stem = outdir / f"{run.protocol.protocol.lower()}_{run.protocol.engine}"
    written = []
    if "csv" in run.output.formats:
        written.append(traceio.write_text(stem.with_suffix(".csv"), traceio.trace_to_csv(trace)))
    if "json" in run.output.formats:
        written.append(traceio.write_text(stem.with_suffix(".json"), traceio.dumps(traceio.trace_to_dict(trace, echo))))
    if "svg" in run.output.formats:
        nu = run.protocol.signal_frequency(run.spin)
        try:
            segs = fitting.extract_segment_amplitudes(trace.tau, trace.signal, run.segments.windows(nu), nu)
        except fitting.FitError as exc:
            log.warning("skipping plots: %s", exc)
        else:
            written.extend(_write_plots(trace, segs, None, nu, stem))
    for path in written:
        print(path)
    return EXIT_OK


# --------------------------------------------------------------------- fit


def detect_windows(tau) -> list:
    """Group a segmented delay grid into ``(start, stop)`` windows at large gaps."""
    tau = np.asarray(tau, float)
    if tau.size < 2:
        raise CliError("trace too short to fit", EXIT_CONFIG)
    steps = np.diff(tau)
    base = float(np.median(steps))
    cuts = np.flatnonzero(steps > 10 * base)
    starts = np.concatenate([[0], cuts + 1])
    stops = np.concatenate([cuts, [tau.size - 1]])
    return [(float(tau[a]), float(tau[b]) + base) for a, b in zip(starts, stops)]


def _fit_context(args, doc):
    raw = {}
    if doc is not None and doc.get("run_config"):
        raw = doc["run_config"]
    elif args.config:
        raw = cfgmod.load(args.config)
    raw = cfgmod.apply_overrides(raw, args.set or [])
    if args.protocol:
        raw.setdefault("protocol", {})["protocol"] = args.protocol
    run = cfgmod.from_dict(raw)
    return run


def _analyze(trace, proto: ProtocolConfig, params, windows, fixed):
    nu = proto.signal_frequency(params)
    return fitting.analyze_trace(trace.tau, trace.signal, proto.protocol, params, windows, nu, fixed)


def summary_table(result: fitting.FitResult) -> str:
    p, e = result.params, result.stderr
    star = "*" if result.kind == "FID" else ""
    label = "FID" if result.kind == "FID" else "Hahn-echo"

    def pm(name, digits):
        err = e.get(name)
        tail = f" +/- {err:.{digits}f}" if err is not None and math.isfinite(err) else ""
        return f"{p[name]:.{digits}f}{tail}"

    rows = [
        (f"13C, {label}", f"c0,{result.kind} = {pm('c0', 3)}", f"T2{star}C = {pm('T2', 2)} ms"),
        ("background", f"d0 = {pm('d0', 4)}", f"T1e = {pm('T1e', 2)} ms"),
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    rule = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [rule]
    for r in rows:
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |")
        lines.append(rule)
    if not result.converged:
        lines.append("WARNING: fit did not converge")
    return "\n".join(lines)


def cmd_fit(args) -> int:
    try:
        trace, doc = traceio.read_trace(args.trace)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read trace: {exc}", EXIT_CONFIG)
    try:
        run = _fit_context(args, doc)
        fixed = dict(run.fit.mask)
        fixed.update(fitting.parse_mask(args.mask or []))
        nu = run.protocol.signal_frequency(run.spin)
        if doc is not None and doc.get("run_config"):
            windows = run.segments.windows(nu)
        else:
            windows = detect_windows(trace.tau)
        segs, result = _analyze(trace, run.protocol, run.spin, windows, fixed)
    except (cfgmod.ConfigError, ParameterError, ProtocolError, fitting.FitError) as exc:
        raise CliError(f"fit error: {exc}", EXIT_CONFIG)
    report = {
        "schema_version": traceio.SCHEMA_VERSION,
        "kind": "fit",
        "protocol": run.protocol.protocol,
        "model": {
            "envelope": "fid_envelope" if run.protocol.protocol == "FID" else "hahn_envelope",
            "background": "background",
            "s1": run.spin.s1,
            "nu_MHz": nu,
            "mask": fixed,
            "windows": [list(w) for w in windows],
        },
        "result": result.to_dict(),
        "segments": [s._asdict() for s in segs],
        "run_config": run.to_dict(),
    }
    if run.fit.global_fit or args.global_fit:
        g = fitting.fit_global(trace.tau, trace.signal, run.protocol.protocol, run.spin, nu, run.protocol.phi0, fixed)
        report["global"] = g.to_dict()
    out = Path(args.out) if args.out else Path(args.trace).with_name(Path(args.trace).stem + "_fit.json")
    traceio.write_text(out, traceio.dumps(report))
    print(summary_table(result))
    if not result.converged:
        log.warning("fit did not converge: %s", result.message)
    print(out)
    return EXIT_OK


# -------------------------------------------------------------------- plot


def _write_plots(trace: SignalTrace, segs, result, nu, stem: Path, params=None) -> list:
    if len(trace) == 0 or not segs:
        raise CliError("empty trace, nothing to plot", EXIT_CONFIG)
    width = max(1e-9, 4.0 / abs(nu) * 1e-3)
    picks = [segs[0], segs[len(segs) // 2]] if len(segs) > 1 else [segs[0]]
    panels = []
    for s in picks:
        half = 0.5 * width
        sel = (trace.tau >= s.tau_center - half) & (trace.tau <= s.tau_center + half)
        t = trace.tau[sel]
        tt = np.linspace(t.min(), t.max(), 200) if t.size else t
        fitcurve = s.background + s.amplitude * np.sin(2 * np.pi * nu * tt * 1e3 + s.phase)
        panels.append(
            svgplot.Panel(
                series=[
                    svgplot.Series((t - t.min()) * 1e3, trace.signal[sel], "data", "points"),
                    svgplot.Series((tt - t.min()) * 1e3, fitcurve, "fit"),
                ],
                title=f"segment at {s.tau_center:.2f} ms",
                xlabel="tau - tau_start (us)",
                ylabel="signal",
            )
        )
    seg_svg = svgplot.render(panels, ncols=len(panels))

    tc = np.array([s.tau_center for s in segs])
    bg = [svgplot.Series(tc, [s.background for s in segs], "background", "points")]
    amp = [svgplot.Series(tc, [s.amplitude for s in segs], "amplitude", "points")]
    if result is not None and params is not None and result.get("converged"):
        r = result["params"]
        grid = np.linspace(0.0, tc.max(), 200)
        P0, Pm1, _ = fitting.analytic_populations_array(params.s1, r["kappa"], grid)
        bg.append(svgplot.Series(grid, 0.5 * (P0 + Pm1) - r["d0"], "fit"))
        weight = 0.5 * P0 if result["kind"] == "FID" else 0.5 * (P0 + Pm1)
        amp.append(svgplot.Series(grid, weight * r["c0"] * np.exp(-grid / r["T2"]), "fit"))
    env_svg = svgplot.render(
        [
            svgplot.Panel(bg, "background", "tau (ms)", "signal"),
            svgplot.Panel(amp, "oscillation amplitude", "tau (ms)", "amplitude", logy=True),
        ]
    )
    return [
        traceio.write_text(Path(f"{stem}_segments.svg"), seg_svg),
        traceio.write_text(Path(f"{stem}_envelope.svg"), env_svg),
    ]


def cmd_plot(args) -> int:
    try:
        trace, doc = traceio.read_trace(args.trace)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read trace: {exc}", EXIT_CONFIG)
    if len(trace) == 0:
        raise CliError("empty trace, nothing to plot", EXIT_CONFIG)
    run = _fit_context(args, doc)
    nu = run.protocol.signal_frequency(run.spin)
    result = None
    if args.fit:
        fit_doc = json.loads(Path(args.fit).read_text())
        result = fit_doc["result"]
        segs = [fitting.SegmentAmplitude(**s) for s in fit_doc["segments"]]
    else:
        windows = run.segments.windows(nu) if doc is not None and doc.get("run_config") else detect_windows(trace.tau)
        segs = fitting.extract_segment_amplitudes(trace.tau, trace.signal, windows, nu)
    outdir = Path(args.out) if args.out else Path(args.trace).parent
    stem = outdir / Path(args.trace).stem
    for path in _write_plots(trace, segs, result, nu, stem, run.spin):
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    checks = validation.run_validation()
    print(validation.format_report(checks))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvdephasing", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a FID or Hahn-echo trace")
    s.add_argument("--config", help="JSON run config, or a trace JSON to re-run from its echo")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, e.g. spin.T1e=5.5")
    s.add_argument("--protocol", choices=["fid", "hahn", "FID", "Hahn"])
    s.add_argument("--engine", choices=["analytic", "lindblad", "ensemble"])
    s.add_argument("--shots", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", help="output directory (default: $%s)" % cfgmod.OUTPUT_ENV)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a trace and print a parameter table")
    f.add_argument("trace")
    f.add_argument("--config")
    f.add_argument("--set", action="append", metavar="KEY=VALUE")
    f.add_argument("--protocol", choices=["fid", "hahn", "FID", "Hahn"])
    f.add_argument("--mask", action="append", metavar="NAME=fixed:VALUE")
    f.add_argument("--global", dest="global_fit", action="store_true", help="also run the one-shot global fit")
    f.add_argument("--out", help="fit JSON path")
    f.set_defaults(func=cmd_fit)

    v = sub.add_parser("validate", help="run the oracle-equivalence checks")
    v.set_defaults(func=cmd_validate)

    p = sub.add_parser("plot", help="SVG plots of a trace and optional fit")
    p.add_argument("trace")
    p.add_argument("--fit")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--protocol", choices=["fid", "hahn", "FID", "Hahn"])
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
