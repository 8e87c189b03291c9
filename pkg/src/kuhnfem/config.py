"""Experiment configuration: JSON schema, semantic checks and canonical hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .mosco import DEFAULT_EXPERIMENT, PROFILES

__all__ = ["ConfigError", "ExperimentConfig", "SCHEMA", "load_config", "validate", "config_hash"]

_pos = {"type": "number", "exclusiveMinimum": 0}
_pos_int = {"type": "integer", "minimum": 1}
_num_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}

_bv = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["zero", "constant", "step", "staircase", "clip", "pieces"]},
        "value": {"type": "number"},
        "at": {"type": "number"},
        "height": {"type": "number"},
        "closed": {"type": "boolean"},
        "breaks": {"type": "array", "items": {"type": "number"}},
        "jumps": {"type": "array", "items": {"type": "number"}},
        "base": {"type": "number"},
        "width": _pos,
        "slopes": {"type": "array", "items": {"type": "number"}},
        "intercepts": {"type": "array", "items": {"type": "number"}},
        "point_values": {"type": "array", "items": {"type": "number"}},
    },
    "additionalProperties": False,
}

_density = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["gaussian", "uniform", "product", "bv_perturbed", "tabulated"]},
        "d": _pos_int,
        "mean": _num_list,
        "var": {"type": "array", "items": _pos, "minItems": 1},
        "tail": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "lower": _num_list,
        "upper": _num_list,
        "factors": {"type": "array", "items": {"$ref": "#/$defs/density"}, "minItems": 1},
        "base": {"$ref": "#/$defs/density"},
        "f": {"$ref": "#/$defs/bv"},
        "weights": {"oneOf": [{"type": "number", "minimum": 0}, {"type": "array", "items": {"type": "number", "minimum": 0}}]},
        "Z": _pos,
        "axes": {"type": "array", "items": _num_list},
        "values": {"type": "array"},
        "method": {"enum": ["linear", "nearest"]},
    },
    "additionalProperties": False,
}

_test_function = {
    "type": "object",
    "required": ["name", "profile"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "profile": {"enum": sorted(PROFILES)},
        "scale": {"type": "number"},
        "shift": {"type": "number"},
        "relative": {"type": "boolean"},
    },
    "additionalProperties": False,
}

_m_schedule = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"density": _density, "bv": _bv},
    "type": "object",
    "required": ["version", "seed"],
    "properties": {
        "version": {"const": "1"},
        "seed": {"type": "integer", "minimum": 0},
        "description": {"type": "string"},
        "grid": {
            "type": "object",
            "properties": {
                "d": {"oneOf": [_pos_int, {"type": "array", "items": _pos_int, "minItems": 1}]},
                "r": {"oneOf": [_pos, {"type": "array", "items": _pos, "minItems": 1}]},
                "half_width": _pos,
                "samples": _pos_int,
                "volume_samples": _pos_int,
            },
            "additionalProperties": False,
        },
        "measure": {"$ref": "#/$defs/density"},
        "bv": {
            "type": "object",
            "properties": {
                "f": {"$ref": "#/$defs/bv"},
                "m_schedule": _m_schedule,
                "points": _pos_int,
                "window": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
            "additionalProperties": False,
        },
        "diagnostics": {
            "type": "object",
            "properties": {
                "alpha": {"type": "array", "items": _pos, "minItems": 1},
                "t": {"type": "array", "items": _pos, "minItems": 1},
                "m_schedule": _m_schedule,
                "kappa": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {"kind": {"enum": ["one", "zero", "cutoff"]}, "L": _pos},
                    "additionalProperties": False,
                },
                "f": {"type": "object", "properties": {"name": {"enum": ["one", "coordinate", "bump", "cosine"]},
                                                       "axis": {"type": "integer", "minimum": 0}},
                      "required": ["name"], "additionalProperties": False},
                "lump": {"type": "boolean"},
                "order": _pos_int,
                "steps": _pos_int,
                "markov_trials": _pos_int,
                "tolerances": {"type": "object", "additionalProperties": _pos},
            },
            "additionalProperties": False,
        },
        "mosco": {
            "type": "object",
            "properties": {
                "D": _pos_int,
                "sigma2": {"oneOf": [{"const": "bridge"}, {"type": "array", "items": _pos, "minItems": 1}]},
                "lambda": {"oneOf": [{"const": "uniform"}, {"type": "array", "items": {"type": "number", "minimum": 0}}]},
                "f": {"$ref": "#/$defs/bv"},
                "N_max": _pos_int,
                "alpha": _pos,
                "grid": {
                    "type": "object",
                    "required": ["points_per_sigma"],
                    "properties": {"points_per_sigma": {"type": "array", "items": _pos_int, "minItems": 1},
                                   "reference_factor": {"type": "integer", "minimum": 2}},
                    "additionalProperties": False,
                },
                "test_functions": {"type": "array", "items": _test_function, "minItems": 1},
                "pairing_source": {"type": "string"},
                "pairing_tests": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "energy_tests": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "m1_source": {"type": "string"},
                "mc": {"type": "object", "properties": {"samples": {"type": "integer", "minimum": 2},
                                                        "oracle_samples": {"type": "integer", "minimum": 2}},
                       "additionalProperties": False},
                "m_schedule": _m_schedule,
                "envelope_m": _m_schedule,
                "tolerances": {"type": "object", "additionalProperties": _pos},
            },
            "additionalProperties": False,
        },
        "output": {"type": "object", "properties": {"dir": {"type": "string"}}, "additionalProperties": False},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Schema or semantic violations; each message starts with a JSON pointer."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("\n".join(problems))


def _pointer(path) -> str:
    parts = [str(p).replace("~", "~0").replace("/", "~1") for p in path]
    return "/" + "/".join(parts) if parts else "/"


def _semantic(doc: Mapping) -> list[str]:
    out = []
    mos = doc.get("mosco")
    if mos is not None:
        merged = {**DEFAULT_EXPERIMENT, **mos}
        names = {t["name"] for t in merged["test_functions"]}
        for key in ("pairing_source", "m1_source"):
            if merged[key] not in names:
                out.append(f"{_pointer(['mosco', key])}: unknown test function {merged[key]!r}")
        for key in ("pairing_tests", "energy_tests"):
            for i, n in enumerate(merged[key]):
                if n not in names:
                    out.append(f"{_pointer(['mosco', key, i])}: unknown test function {n!r}")
        D, N = int(merged["D"]), int(merged["N_max"])
        if N > D:
            out.append(f"{_pointer(['mosco', 'N_max'])}: N_max={N} exceeds D={D}")
        for key in ("sigma2", "lambda"):
            v = merged[key]
            if isinstance(v, list) and len(v) != D:
                out.append(f"{_pointer(['mosco', key])}: expected {D} entries, got {len(v)}")
    meas = doc.get("measure")
    if meas is not None and meas.get("kind") == "gaussian":
        mean, var = meas.get("mean"), meas.get("var")
        if mean is not None and var is not None and len(mean) != len(var):
            out.append(f"{_pointer(['measure', 'var'])}: length {len(var)} differs from mean length {len(mean)}")
    if meas is not None and meas.get("kind") == "uniform":
        lo, hi = meas.get("lower", []), meas.get("upper", [])
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            out.append(f"{_pointer(['measure'])}: uniform box needs lower < upper componentwise")
    return out


def validate(doc: Any) -> None:
    """Raise :class:`ConfigError` listing every schema and semantic problem."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    problems = []
    for e in errors:
        # for oneOf/anyOf, report the deepest failing branch so the pointer names the bad entry
        while e.context:
            e = max(e.context, key=lambda c: len(c.absolute_path))
        problems.append(f"{_pointer(e.absolute_path)}: {e.message}")
    if not problems:
        problems = _semantic(doc)
    if problems:
        raise ConfigError(problems)


def config_hash(doc: Mapping) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated configuration document with its canonical hash."""

    doc: dict
    sha256: str

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    def section(self, name: str) -> dict:
        return copy.deepcopy(self.doc.get(name, {}))

    @classmethod
    def from_dict(cls, doc: Mapping, seed: int | None = None) -> "ExperimentConfig":
        doc = copy.deepcopy(dict(doc))
        if seed is not None:
            doc["seed"] = int(seed)
        validate(doc)
        return cls(doc, config_hash(doc))


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"/: invalid JSON ({exc.msg} at line {exc.lineno})"]) from exc
    return ExperimentConfig.from_dict(doc, seed)
