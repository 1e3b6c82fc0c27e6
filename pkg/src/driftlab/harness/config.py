"""
Experiment configuration: YAML text validated against a published JSON schema.

Every default tolerance lives in :data:`TOLERANCES`; a config may override
entries under ``tolerances``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import yaml

from ..bounds import Variant
from ..fields import CATALOG_NAMES
from ..norms_scaling import MixedNormSpec, NormSpecError

SUITES = ("conservation", "duality", "tilted_energy", "envelopes", "cone", "nash", "riccati", "regularity")

# suites that need the forward kernel run of the first source
NEEDS_KERNEL = {"conservation", "envelopes", "cone", "regularity"}

COEFFICIENT_NAMES = ("identity", "isotropic", "diagonal", "oscillating", "rotated")

TOLERANCES = {
    "mass_drift": 1e-13,
    "skew_residual": 1e-12,
    "divergence": 1e-12,
    "max_principle": 1e-10,
    "duality": 1e-8,
    "nonexpansive": 1e-12,
    "tilted_refinement_drift": 0.20,
    "envelope_refinement_drift": 0.25,
    "cone_delta": 0.5,
    "nash_floor_mass": 0.01,
    "nash_sign": 0.0,
    "riccati_violations": 0,
    "riccati_samples": 1000,
    "product_constant": 1e-12,
    "oscillation_slack": 0.10,
    "holder_drift": 0.1,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "driftlab experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["grid", "coefficients", "drift", "norm", "sources", "horizon"],
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "cells", "L"],
            "properties": {
                "n": {"type": "integer", "minimum": 1, "maximum": 3},
                "cells": {"type": "integer", "minimum": 8},
                "L": {"type": "number", "exclusiveMinimum": 0},
                "center": {"type": "array", "items": {"type": "number"}},
            },
        },
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {"name": {"enum": list(COEFFICIENT_NAMES)}, "params": {"type": "object"}},
        },
        "drift": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {"name": {"enum": list(CATALOG_NAMES)}, "params": {"type": "object"}},
        },
        "norm": {
            "type": "object",
            "additionalProperties": False,
            "required": ["l", "q", "n"],
            "properties": {
                "l": {"type": ["number", "string"]},
                "q": {"type": ["number", "string"]},
                "n": {"type": "integer", "minimum": 1, "maximum": 3},
            },
        },
        "sources": {"type": "array", "minItems": 1, "items": {"type": "array", "items": {"type": "number"}}},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "times": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "envelopes": {"type": "array", "items": {"enum": [v.value for v in Variant]}},
        "suites": {"type": "array", "items": {"enum": list(SUITES)}, "uniqueItems": True},
        "output_dir": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "nash_r": {"type": "number", "exclusiveMinimum": 0},
        "refine": {"type": "integer", "minimum": 2},
        "workers": {"type": "integer", "minimum": 1},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in TOLERANCES},
        },
    },
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit code 2)."""


@dataclass
class ExperimentConfig:
    grid: dict
    coefficients: dict
    drift: dict
    norm: MixedNormSpec
    sources: list
    horizon: float
    times: list | None = None
    envelopes: list = field(default_factory=list)
    suites: list = field(default_factory=lambda: list(SUITES))
    output_dir: str = "driftlab-out"
    seed: int = 0
    nash_r: float = 1.0
    refine: int | None = None
    workers: int = 1
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCES))

    def to_dict(self) -> dict:
        out = {
            "grid": self.grid,
            "coefficients": self.coefficients,
            "drift": self.drift,
            "norm": self.norm.to_dict(),
            "sources": self.sources,
            "horizon": self.horizon,
            "envelopes": list(self.envelopes),
            "suites": list(self.suites),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "nash_r": self.nash_r,
            "workers": self.workers,
            "tolerances": dict(sorted(self.tolerances.items())),
        }
        if self.times is not None:
            out["times"] = list(self.times)
        if self.refine is not None:
            out["refine"] = self.refine
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output directory and worker count excluded)."""
        data = self.to_dict()
        data.pop("output_dir")
        data.pop("workers")
        raw = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _ordered_suites(names) -> list:
    return [s for s in SUITES if s in set(names)]


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a mapping and build the config; raises :class:`ConfigError`."""
    data = copy.deepcopy(data)
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    try:
        norm = MixedNormSpec.from_dict(data["norm"])
    except (NormSpecError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"norm: {exc}") from None
    n = data["grid"]["n"]
    if norm.n != n:
        raise ConfigError("norm: dimension differs from the grid")
    for i, src in enumerate(data["sources"]):
        if len(src) != n:
            raise ConfigError(f"sources/{i}: expected {n} coordinates")
    suites = _ordered_suites(data.get("suites", SUITES))
    if "duality" in suites and len(data["sources"]) < 2:
        raise ConfigError("suites: duality needs two source points")
    tol = dict(TOLERANCES)
    tol.update(data.get("tolerances", {}))
    times = data.get("times")
    if times is not None and max(times) > data["horizon"] * (1 + 1e-12):
        raise ConfigError("times: samples beyond the horizon")
    if not math.isfinite(data["horizon"]):
        raise ConfigError("horizon: must be finite")
    return ExperimentConfig(
        grid=dict(data["grid"]),
        coefficients={"name": data["coefficients"]["name"], "params": data["coefficients"].get("params", {})},
        drift={"name": data["drift"]["name"], "params": data["drift"].get("params", {})},
        norm=norm,
        sources=[list(map(float, s)) for s in data["sources"]],
        horizon=float(data["horizon"]),
        times=None if times is None else sorted(float(t) for t in times),
        envelopes=list(data.get("envelopes", [])),
        suites=suites,
        output_dir=data.get("output_dir", "driftlab-out"),
        seed=int(data.get("seed", 0)),
        nash_r=float(data.get("nash_r", 1.0)),
        refine=data.get("refine"),
        workers=int(data.get("workers", 1)),
        tolerances=tol,
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return config_from_dict(data)


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True)
