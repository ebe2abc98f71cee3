"""Strict run configuration: JSON documents plus dotted-key overrides.

Unknown keys are rejected at every level so that a mistyped physics
parameter can never be silently ignored.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .protocols import ProtocolConfig, ReadoutConfig, segment_grid
from .spin_model import SpinSystemParams

OUTPUT_ENV = "NVDEPHASING_OUTPUT_DIR"
FORMATS = ("csv", "json", "svg")


class ConfigError(ValueError):
    pass


def _strict(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be an object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")


@dataclass(frozen=True)
class SegmentSpec:
    """Window layout: one window of ``periods`` signal periods per center (ms)."""

    centers: tuple = tuple(float(c) for c in np.arange(0.0, 24.0 + 1e-9, 2.0))
    points: int = 48
    periods: float = 4.0

    def windows(self, nu: float) -> list:
        width = self.periods / abs(nu) * 1e-3
        return [(c, c + width) for c in self.centers]

    def grid(self, nu: float) -> tuple:
        return segment_grid(self.centers, self.points, self.periods, nu)


@dataclass(frozen=True)
class FitOptions:
    mask: dict = field(default_factory=dict)
    global_fit: bool = False


@dataclass(frozen=True)
class OutputOptions:
    directory: str = ""
    formats: tuple = FORMATS

    def path(self) -> Path:
        return Path(self.directory or os.environ.get(OUTPUT_ENV, "nvdephasing_out"))


@dataclass(frozen=True)
class RunConfig:
    spin: SpinSystemParams = field(default_factory=SpinSystemParams)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    segments: SegmentSpec = field(default_factory=SegmentSpec)
    fit: FitOptions = field(default_factory=FitOptions)
    output: OutputOptions = field(default_factory=OutputOptions)

    def to_dict(self) -> dict:
        """Echo of everything that shapes the result; the output directory is left out."""
        return {
            "spin": self.spin.to_dict(),
            "protocol": self.protocol.to_dict(),
            "segments": {
                "centers": list(self.segments.centers),
                "points": self.segments.points,
                "periods": self.segments.periods,
            },
            "fit": {"mask": dict(self.fit.mask), "global_fit": self.fit.global_fit},
            "output": {"formats": list(self.output.formats)},
        }


def _names(cls) -> list:
    return [f.name for f in fields(cls) if f.init]


def from_dict(data: dict) -> RunConfig:
    """Build a :class:`RunConfig`; a missing ``protocol.tau_grid`` is generated from ``segments``."""
    data = copy.deepcopy(data)
    _strict("root", data, _names(RunConfig))
    try:
        spin_d = data.get("spin", {})
        _strict("spin", spin_d, _names(SpinSystemParams))
        spin = SpinSystemParams(**spin_d)

        seg_d = data.get("segments", {})
        _strict("segments", seg_d, _names(SegmentSpec))
        if "centers" in seg_d:
            seg_d["centers"] = tuple(float(c) for c in seg_d["centers"])
        segments = SegmentSpec(**seg_d)

        proto_d = data.get("protocol", {})
        _strict("protocol", proto_d, _names(ProtocolConfig))
        if "readout" in proto_d:
            _strict("protocol.readout", proto_d["readout"], _names(ReadoutConfig))
        if "protocol" in proto_d:
            proto_d["protocol"] = {"fid": "FID", "hahn": "Hahn"}.get(str(proto_d["protocol"]).lower(), proto_d["protocol"])
        if "tau_grid" not in proto_d:
            probe = ProtocolConfig.from_dict({k: v for k, v in proto_d.items() if k != "readout"})
            proto_d["tau_grid"] = list(segments.grid(probe.signal_frequency(spin)))
        protocol = ProtocolConfig.from_dict(proto_d)

        fit_d = data.get("fit", {})
        _strict("fit", fit_d, _names(FitOptions))
        fit = FitOptions(mask={k: float(v) for k, v in fit_d.get("mask", {}).items()}, global_fit=bool(fit_d.get("global_fit", False)))

        out_d = data.get("output", {})
        _strict("output", out_d, _names(OutputOptions))
        formats = tuple(out_d.get("formats", FORMATS))
        bad = set(formats) - set(FORMATS)
        if bad:
            raise ConfigError(f"[output] unknown formats {sorted(bad)}")
        output = OutputOptions(directory=str(out_d.get("directory", "")), formats=formats)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(spin, protocol, segments, fit, output)


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; intermediate objects are created as needed."""
    data = copy.deepcopy(data)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like a.b=value, got {item!r}")
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = parse_value(value)
    return data


def load(path: Optional[str]) -> dict:
    """Raw config dict from a config file or from the echo inside a trace JSON."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if isinstance(doc, dict) and doc.get("kind") in ("trace", "fit") and "run_config" in doc:
        return doc["run_config"]
    return doc


def ensure_writable(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {directory} is not writable: {exc}") from exc
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"output directory {directory} is not writable")
