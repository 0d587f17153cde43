"""Run configuration: JSON schema, defaults and conversion to scenario objects."""

import copy
import json

import jsonschema

from .disturbance import DisturbanceSpec
from .dynamics import CwParams
from .reference import Mission
from .sim import Scenario


class ConfigError(ValueError):
    pass


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

SCHEMA = _obj(
    {
        "params": _obj(
            {
                "omega_radps": _nonneg,
                "thrust_ratio_r_mps2": _pos,
                "f_max_N": _pos,
                "isp_s": _pos,
            }
        ),
        "scenario": _obj(
            {
                "failed_index": {"type": "integer", "minimum": 1, "maximum": 5},
                "tau_s": _nonneg,
                "dt_s": _pos,
                "duration_s": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "x0_offset_m_mps": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                "success_threshold_m": _pos,
                "predictor": {"enum": ["zoh", "trapezoid"]},
                "predictor_input": {"enum": ["applied", "commanded"]},
            }
        ),
        "disturbance": _obj(
            {
                "kind": {"enum": ["lipschitz", "bangbang", "constant", "none"]},
                "lip_L_per_s": _nonneg,
                "w_max": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "min_dwell_s": _pos,
                "mean_dwell_s": _pos,
                "segment_s": _pos,
            }
        ),
        "gains": _obj({"mode": {"enum": ["explicit", "auto"]}, "k": _pos}),
        "mission": _obj(
            {
                "waypoints_m": {"type": "array", "items": _pair, "minItems": 2},
                "transfer_time_s": _pos,
                "initial_hold_s": _nonneg,
                "kos_radius_m": _pos,
                "kos_margin_m": _nonneg,
                "rest_at_waypoints": {"type": "boolean"},
                "waypoint_velocities_mps": {"type": ["array", "null"], "items": _pair},
            }
        ),
        "reference": _obj({"dt_s": _pos}),
        "pareto": _obj(
            {
                "tau_grid_s": {"type": "array", "items": _nonneg, "minItems": 1},
                "wmax_grid": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "minItems": 1,
                },
                "seeds_per_cell": {"type": "integer", "minimum": 1},
            }
        ),
        "outputs": _obj(
            {
                "trace_csv": {"type": "string"},
                "metrics_json": {"type": "string"},
                "report_json": {"type": "string"},
                "reference_csv": {"type": "string"},
                "front_csv": {"type": "string"},
                "sweep_json": {"type": "string"},
            }
        ),
    }
)

DEFAULTS = {
    "params": {"omega_radps": 0.00106, "thrust_ratio_r_mps2": 1.5e-4, "f_max_N": 0.09, "isp_s": 1650.0},
    "scenario": {
        "failed_index": 4,
        "tau_s": 0.2,
        "dt_s": 0.1,
        "duration_s": None,
        "x0_offset_m_mps": [0.0, 0.0, 0.0, 0.0],
        "success_threshold_m": 0.8,
        "predictor": "zoh",
        "predictor_input": "applied",
    },
    "disturbance": {
        "kind": "lipschitz",
        "lip_L_per_s": 0.1,
        "w_max": 0.01,
        "seed": 0,
        "min_dwell_s": 60.0,
        "mean_dwell_s": 600.0,
        "segment_s": 10.0,
    },
    "gains": {"mode": "explicit", "k": 472.0},
    "mission": {
        "waypoints_m": [[0.0, 80.0], [-80.0, 0.0], [0.0, -80.0], [80.0, 0.0], [0.0, 80.0]],
        "transfer_time_s": 5400.0,
        "initial_hold_s": 5400.0,
        "kos_radius_m": 50.0,
        "kos_margin_m": 5.0,
        "rest_at_waypoints": False,
        "waypoint_velocities_mps": None,
    },
    "reference": {"dt_s": 1.0},
    "pareto": {"tau_grid_s": [0.2, 1.0, 2.0, 3.0, 8.0, 10.0], "wmax_grid": [0.01, 0.1, 0.5, 1.0], "seeds_per_cell": 3},
    "outputs": {
        "trace_csv": "trace.csv",
        "metrics_json": "metrics.json",
        "report_json": "report.json",
        "reference_csv": "reference.csv",
        "front_csv": "front.csv",
        "sweep_json": "sweep.json",
    },
}


def load_config(path=None, seed=None):
    """Read, validate and complete a configuration.

    Parameters
    ----------
    path : str or None
        JSON file; None gives the defaults.
    seed : int, optional
        Overrides the disturbance seed.

    Raises
    ------
    ConfigError
        On unreadable files, invalid JSON or schema violations.
    """
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}") from e
    try:
        jsonschema.validate(user, SCHEMA)
    except jsonschema.ValidationError as e:
        loc = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {loc}: {e.message}") from e
    cfg = copy.deepcopy(DEFAULTS)
    for block, vals in user.items():
        cfg[block].update(vals)
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        cfg["disturbance"]["seed"] = int(seed)
    return cfg


def params_of(cfg):
    p = cfg["params"]
    try:
        return CwParams(p["omega_radps"], p["thrust_ratio_r_mps2"], p["f_max_N"], p["isp_s"])
    except ValueError as e:
        raise ConfigError(str(e)) from e


def mission_of(cfg):
    m = cfg["mission"]
    try:
        return Mission(
            waypoints=tuple(tuple(w) for w in m["waypoints_m"]),
            transfer_time=m["transfer_time_s"],
            kos_radius=m["kos_radius_m"],
            initial_hold=m["initial_hold_s"],
            rest_at_waypoints=m["rest_at_waypoints"],
            kos_margin=m["kos_margin_m"],
            waypoint_velocities=m["waypoint_velocities_mps"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def disturbance_of(cfg):
    d = cfg["disturbance"]
    if d["kind"] == "none":
        return None
    try:
        return DisturbanceSpec(
            d["kind"], d["lip_L_per_s"], d["w_max"], d["seed"], d["min_dwell_s"], d["mean_dwell_s"], d["segment_s"]
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def scenario_of(cfg):
    s = cfg["scenario"]
    g = cfg["gains"]
    try:
        return Scenario(
            params=params_of(cfg),
            failed_index=s["failed_index"],
            tau=s["tau_s"],
            disturbance=disturbance_of(cfg),
            k=g["k"] if g["mode"] == "explicit" else None,
            dt=s["dt_s"],
            duration=s["duration_s"],
            x0_offset=tuple(s["x0_offset_m_mps"]),
            success_threshold_m=s["success_threshold_m"],
            predictor=s["predictor"],
            predictor_input=s["predictor_input"],
            mission=mission_of(cfg),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
