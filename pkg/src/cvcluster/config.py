"""Experiment configuration: JSON schema, defaults, hashing and conversion helpers."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import FormatError, InvalidParameter
from .physics import OpoParams, SpectrumGrid, WavePacket, effective_squeezing_r
from .pipeline import PipelineConfig

DEFAULTS_NAME = "paper_defaults.json"
THREADS_ENV = "CVCLUSTER_THREADS"

_OPO = {
    "type": "object",
    "properties": {
        "T": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "L": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "xi": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "omega0_hz": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["T", "L", "xi", "omega0_hz"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"type": "integer", "minimum": 1},
        "N": {"type": "integer", "minimum": 2},
        "dt_s": {"type": "number", "exclusiveMinimum": 0},
        "K": {"type": "integer", "minimum": 1},
        "opos": {"type": "array", "items": _OPO, "minItems": 4, "maxItems": 4},
        "eta": {
            "oneOf": [
                {"type": "number", "minimum": 0, "maximum": 1},
                {"type": "object",
                 "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}},
            ]
        },
        "dtau2_s": {"type": "number"},
        "frames": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "grid": {
            "type": "object",
            "properties": {
                "points": {"type": "integer", "minimum": 16},
                "dt_fraction": {"type": "number", "exclusiveMinimum": 0},
                "spectrum_max_hz": {"type": "number", "exclusiveMinimum": 0},
                "spectrum_points": {"type": "integer", "minimum": 16},
            },
            "additionalProperties": False,
        },
        "wave_packet": {
            "type": "object",
            "properties": {
                "gamma_hz": {"type": "number", "exclusiveMinimum": 0},
                "tc_s": {"type": "number"},
                "sample_rate_hz": {"type": "number", "exclusiveMinimum": 0},
                "offset_s": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "mbqc_r": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "outputs": {
            "type": "object",
            "properties": {"dir": {"type": "string"}},
            "additionalProperties": {"type": "string"},
        },
    },
    "required": ["N", "dt_s", "K", "opos", "eta", "dtau2_s", "frames", "seed"],
    "additionalProperties": False,
}


def load_defaults() -> dict:
    text = resources.files("cvcluster").joinpath(DEFAULTS_NAME).read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration document (``doc``) with typed accessors."""

    doc: dict

    def __post_init__(self):
        try:
            jsonschema.validate(self.doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise FormatError(f"config invalid at {where}: {exc.message}") from None
        if self.doc["K"] <= 2 * self.doc["N"]:
            raise FormatError("K must exceed 2N so that interior macronodes exist")
        try:
            self.wave_packet.samples_per_mode
        except InvalidParameter as exc:
            raise FormatError(f"config invalid: {exc}") from None

    @classmethod
    def from_dict(cls, doc: dict, defaults: bool = True) -> "ExperimentConfig":
        return cls(_merge(load_defaults(), doc) if defaults else copy.deepcopy(doc))

    @classmethod
    def load(cls, path=None) -> "ExperimentConfig":
        """Read ``path`` (missing keys fall back to the shipped defaults), or the defaults."""
        if path is None:
            return cls(load_defaults())
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise FormatError("config must be a JSON object")
        return cls.from_dict(doc)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig(_merge(self.doc, {k: v for k, v in kw.items() if v is not None}))

    # -- accessors ---------------------------------------------------------------

    def canonical_json(self) -> str:
        return json.dumps(self.doc, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @property
    def N(self) -> int:
        return int(self.doc["N"])

    @property
    def K(self) -> int:
        return int(self.doc["K"])

    @property
    def frames(self) -> int:
        return int(self.doc["frames"])

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def eta(self):
        return self.doc["eta"]

    @property
    def global_eta(self) -> float:
        """Single efficiency used by the spectral models (mean of a per-path map)."""
        eta = self.doc["eta"]
        if isinstance(eta, dict):
            return sum(eta.values()) / len(eta) if eta else 1.0
        return float(eta)

    @property
    def dtau2(self) -> float:
        return float(self.doc["dtau2_s"])

    @property
    def opos(self) -> list:
        return [OpoParams(o["T"], o["L"], o["xi"], 2 * math.pi * o["omega0_hz"])
                for o in self.doc["opos"]]

    @property
    def wave_packet(self) -> WavePacket:
        wp = self.doc.get("wave_packet", {})
        kw = {"dt": float(self.doc["dt_s"])}
        if "gamma_hz" in wp:
            kw["gamma"] = 2 * math.pi * wp["gamma_hz"]
        if "tc_s" in wp:
            kw["tc"] = wp["tc_s"]
        if "sample_rate_hz" in wp:
            kw["sample_rate"] = wp["sample_rate_hz"]
        if "offset_s" in wp:
            kw["offset"] = wp["offset_s"]
        return WavePacket(**kw)

    @property
    def grid(self) -> SpectrumGrid:
        gd = self.doc.get("grid", {})
        return SpectrumGrid(gd.get("points", SpectrumGrid.points),
                            gd.get("dt_fraction", SpectrumGrid.dt_fraction))

    @property
    def spectrum_axis(self) -> tuple:
        gd = self.doc.get("grid", {})
        return float(gd.get("spectrum_max_hz", 100e6)), int(gd.get("spectrum_points", 20001))

    @property
    def tau1(self) -> float:
        return float(self.doc["dt_s"])

    @property
    def tau2(self) -> float:
        return self.N * float(self.doc["dt_s"]) + self.dtau2

    def source_r(self) -> dict:
        """Per-rail lossless squeezing parameter matching each OPO's filtered spectrum."""
        wp, grid = self.wave_packet, self.grid
        return {rail: effective_squeezing_r(p, wp, 1.0, grid) for rail, p in zip("ABCD", self.opos)}

    def resource_r(self) -> float:
        """Squeezing of the MBQC ancillas: ``mbqc_r`` or the lossy effective value of OPO A."""
        val = self.doc.get("mbqc_r")
        if val is not None:
            return float(val)
        return effective_squeezing_r(self.opos[0], self.wave_packet, self.global_eta, self.grid)

    def pipeline_config(self) -> PipelineConfig:
        eta = self.doc["eta"]
        if isinstance(eta, dict):
            eta = dict(eta)
        return PipelineConfig(N=self.N, r=self.source_r(), eta=eta, dtau2=self.dtau2,
                              seed=self.seed)

    def output_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        return Path(self.doc.get("outputs", {}).get("dir", "."))


def worker_count() -> int:
    """Worker cap from ``CVCLUSTER_THREADS`` (default: CPU count)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise FormatError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise FormatError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n
