"""JSON configuration schema and validation for experiment runs."""

import json
from pathlib import Path

import jsonschema

from .experiments import KINDS

_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM = {"type": "number"}
_POS_LIST = {"type": "array", "items": _POS, "minItems": 1}
_TOL = {"type": "object", "additionalProperties": _POS}

_MODE_TERM = {
    "type": "object",
    "additionalProperties": False,
    "required": ["k"],
    "properties": {
        "k": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 3},
        "kind": {"enum": ["cos", "sin"]},
        "amplitude": _NUM,
    },
}

_INITIAL = {
    "type": "object",
    "oneOf": [
        {"additionalProperties": False, "required": ["type"], "properties": {"type": {"const": "white_noise"}}},
        {"additionalProperties": False, "required": ["type", "terms"],
         "properties": {"type": {"const": "modes"}, "terms": {"type": "array", "items": _MODE_TERM, "minItems": 1}}},
    ],
}

_TORUS_FAMILY = {
    "type": "object",
    "oneOf": [
        {"additionalProperties": False, "required": ["name", "N_cut"],
         "properties": {"name": {"const": "cutoff"}, "N_cut": _POS_INT, "normalize": {"type": "boolean"}}},
        {"additionalProperties": False, "required": ["name", "h"],
         "properties": {"name": {"const": "mollified"}, "h": _POS}},
        {"additionalProperties": False, "required": ["name"], "properties": {"name": {"const": "none"}}},
    ],
}

_SPHERE_FAMILY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "l_min", "l_max"],
    "properties": {"name": {"const": "band"}, "l_min": _POS_INT, "l_max": _POS_INT, "normalize": {"type": "boolean"}},
}

_GEOMETRY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["d", "M"],
    "properties": {"d": {"enum": [2, 3]}, "M": {"type": "integer", "minimum": 4}},
}

_SOLVER = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dt", "T"],
    "properties": {
        "dt": _POS,
        "T": _POS,
        "scheme": {"enum": ["frozen_flow", "exp_euler"]},
        "snapshots": _POS_INT,
        "background_diffusivity": {"type": "array", "items": {"type": "array", "items": _NUM}},
    },
}


def _params(required, properties):
    return {"type": "object", "additionalProperties": False, "required": required, "properties": properties}


_SWEEP_PARAMS = {
    "noise-diagnostics": _params(["quantity", "h_grid"], {
        "quantity": {"const": "noise-diagnostics"}, "h_grid": _POS_LIST, "tolerances": _TOL,
        "asymptotic": _params(["h_grid", "M"], {"h_grid": _POS_LIST, "M": _POS_INT})}),
    "l2-rate": _params(["quantity", "h_grid", "T"], {
        "quantity": {"const": "l2-rate"}, "h_grid": _POS_LIST, "T": _POS, "kappa": _POS, "dt_factor": _POS,
        "tolerances": _TOL}),
    "weak-bound": _params(["quantity", "specs", "t", "u0", "phi"], {
        "quantity": {"const": "weak-bound"}, "specs": {"type": "array", "items": _TORUS_FAMILY, "minItems": 1},
        "t": _POS, "u0": _INITIAL, "phi": _INITIAL, "dt_factor": _POS, "tolerances": _TOL}),
    "time-regularity": _params(["quantity", "lag_exponents", "dt"], {
        "quantity": {"const": "time-regularity"}, "lag_exponents": {"type": "array", "items": _POS_INT, "minItems": 4},
        "dt": _POS, "T": _POS, "kappa": _POS, "tolerances": _TOL}),
}

_KIND_RULES = {
    "simulate": (["geometry", "family", "solver", "initial"], None),
    "sweep-rate": (["geometry", "params"], None),
    "she-compare": (["geometry", "params", "replicas"], _params(["levels", "T", "snapshot_dt", "lag_steps"], {
        "levels": {"type": "array", "minItems": 2, "items": _params(["N_cut", "M", "dt"], {
            "N_cut": _POS_INT, "M": {"type": "integer", "minimum": 4}, "dt": _POS})},
        "T": _POS, "snapshot_dt": _POS, "lag_steps": {"type": "array", "items": _POS_INT, "minItems": 1},
        "mode": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 3}})),
    "flow-check": (["geometry", "family", "params"], _params(["u0", "phi", "T", "dt", "particles", "seeds"], {
        "u0": _INITIAL, "phi": _INITIAL, "T": _POS, "dt": _POS, "particles": {"type": "integer", "minimum": 1000},
        "seeds": _POS_INT, "tolerances": _TOL})),
    "chaos-pair": (["geometry", "params"], _params(["phi", "h_grid", "samples"], {
        "phi": _INITIAL, "h_grid": _POS_LIST, "samples": {"type": "integer", "minimum": 2}, "tolerances": _TOL})),
    "sphere-check": (["family", "params"], _params(["samples", "particles", "dt", "T"], {
        "samples": {"type": "integer", "minimum": 2}, "particles": {"type": "integer", "minimum": 100},
        "dt": _POS, "T": _POS, "n_points": _POS_INT, "kernel_angles": {"type": "array", "items": _NUM},
        "uniformity_lmax": _POS_INT, "diffusivity_steps": _POS_INT, "diffusivity_replicas": {"type": "integer", "minimum": 2},
        "scaling_bands": {"type": "array", "items": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2}}})),
    "leray-diagonal": (["params"], _params(["dims", "h_grid", "M"], {
        "dims": {"type": "array", "items": {"enum": [2, 3]}, "minItems": 1},
        "h_grid": _POS_LIST, "degenerate_h": _POS_LIST, "tolerances": _TOL,
        "M": {"oneOf": [_POS_INT, {"type": "object", "additionalProperties": _POS_INT}]}})),
}


def _kind_clause(kind):
    required, params = _KIND_RULES[kind]
    then = {"required": required}
    props = {}
    if params is not None:
        props["params"] = params
    if kind == "sweep-rate":
        props["params"] = {
            "type": "object", "required": ["quantity"],
            "properties": {"quantity": {"enum": list(_SWEEP_PARAMS)}},
            "allOf": [{"if": {"properties": {"quantity": {"const": q}}}, "then": sch}
                      for q, sch in _SWEEP_PARAMS.items()],
        }
    props["family"] = _SPHERE_FAMILY if kind == "sphere-check" else _TORUS_FAMILY
    then["properties"] = props
    return {"if": {"properties": {"kind": {"const": kind}}}, "then": then}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "seed"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "description": {"type": "string"},
        "geometry": _GEOMETRY,
        "family": {"type": "object"},
        "solver": _SOLVER,
        "initial": _INITIAL,
        "replicas": _POS_INT,
        "params": {"type": "object"},
        "tolerances": _TOL,
        "store_trajectory": {"type": "boolean"},
    },
    "allOf": [_kind_clause(k) for k in KINDS],
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is a JSON pointer to the offending value."""

    def __init__(self, path, message):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path or "/"
        self.message = message


def _pointer(parts):
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def validate_config(cfg):
    """Raise :class:`ConfigError` at the deepest failing location, else return ``cfg``."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = list(validator.iter_errors(cfg))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_pointer(err.absolute_path), err.message)
    _semantic_checks(cfg)
    return cfg


def _semantic_checks(cfg):
    geo = cfg.get("geometry")
    if geo is not None:
        for name in ("initial",):
            for i, term in enumerate(cfg.get(name, {}).get("terms", [])):
                if len(term["k"]) != geo["d"]:
                    raise ConfigError(f"/{name}/terms/{i}/k", f"wave vector must have {geo['d']} components")
    fam = cfg.get("family", {})
    if fam.get("name") == "band" and fam["l_max"] < fam["l_min"]:
        raise ConfigError("/family/l_max", "l_max must be at least l_min")
    sol = cfg.get("solver")
    if sol is not None and sol["dt"] > sol["T"]:
        raise ConfigError("/solver/dt", "dt must not exceed T")
    if cfg["kind"] == "she-compare":
        p = cfg["params"]
        if not _is_multiple(p["T"], p["snapshot_dt"]):
            raise ConfigError("/params/T", "T must be a multiple of snapshot_dt")
        for i, lev in enumerate(p["levels"]):
            if not _is_multiple(p["snapshot_dt"], lev["dt"]):
                raise ConfigError(f"/params/levels/{i}/dt", "snapshot_dt must be a multiple of every level dt")


def _is_multiple(a, b):
    n = a / b
    return abs(n - round(n)) <= 1e-6 * max(1.0, n)


def load_config(path):
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("/", f"invalid JSON: {exc}") from exc
    return validate_config(cfg)
