"""JSON schemas for the reports, and a converter to plain JSON values."""
from __future__ import annotations

import json
import math

import numpy as np

_NUM = {"type": ["number", "null"]}
_VEC = {"type": ["array", "null"], "items": _NUM}

CERT_REPORT_SCHEMA = {
    "type": "object",
    "required": ["condition", "margin", "verdict", "witness", "samples_used", "constants"],
    "properties": {
        "condition": {"type": "string"},
        "hypothesis": {"type": "string"},
        "margin": _NUM,
        "verdict": {"enum": ["holds-strictly", "holds-weakly", "fails"]},
        "witness": {
            "type": "object",
            "required": ["x", "z", "p", "dirs"],
            "properties": {
                "x": _VEC,
                "z": _NUM,
                "p": _VEC,
                "dirs": {"type": "array", "items": _VEC},
            },
        },
        "samples_used": {"type": "integer", "minimum": 0},
        "constants": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _NUM for k in ("delta0", "mu0", "beta0", "sigma0", "gamma0", "gamma1")},
        },
        "details": {"type": "object"},
    },
}

SOLVE_REPORT_SCHEMA = {
    "type": "object",
    "required": ["converged", "t_path", "iters", "res_inf", "margin_min", "M2", "failure"],
    "properties": {
        "converged": {"type": "boolean"},
        "t_path": {"type": "array", "items": {"type": "number"}},
        "iters": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "res_inf": _NUM,
        "margin_min": _NUM,
        "M2": _NUM,
        "failure": {"type": ["string", "null"]},
    },
}

RUN_REPORT_SCHEMA = {
    "type": "object",
    "required": ["command", "exit_code"],
    "properties": {
        "command": {"enum": ["check", "solve", "mms", "compare", "balance"]},
        "exit_code": {"enum": [0, 2, 3, 4]},
        "checks": {"type": "array", "items": CERT_REPORT_SCHEMA},
        "solve": SOLVE_REPORT_SCHEMA,
    },
}


def to_jsonable(obj):
    """Recursively convert numpy values to JSON types; NaN and infinities become None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation)."""
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def validate(instance, schema) -> None:
    """Raise ``jsonschema.ValidationError`` if ``instance`` does not match ``schema``."""
    import jsonschema

    jsonschema.validate(to_jsonable(instance), schema)
