"""Scenario files: JSON schema, defaults, validation with key paths, run manifests."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .control import CostModel
from .engine import Scenario, ScheduleEvent, SimConfig
from .network import GridParams, NetworkTopology
from .system import CONTROLLERS, Plant
from .units import DfigParams, GovernorParams, WindParams


class ConfigError(ValueError):
    """Invalid scenario file; ``key_path`` locates the offending entry."""

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path or '<root>'}: {message}")
        self.key_path = key_path


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec = {"type": "array", "items": _num}
_pair = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2}

_AREA_COMMON = ["kind", "B_self", "tau_v", "X_d", "X_d_prime", "E_f", "tau_p", "psi", "tau_delta"]
_AREA_POSITIVE = {"tau_v", "tau_p", "psi", "tau_delta", "E_f"}
_DFIG_POSITIVE = {"R_s", "R_r", "H", "rotor_radius", "f_b", "C_Q", "air_density", "torque_base"}

SCHEMA = {
    "type": "object",
    "required": ["topology", "areas", "cost", "load_schedule"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "topology": {
            "type": "object",
            "required": ["edges", "line_susceptance"],
            "properties": {
                "edges": {"type": "array", "items": _pair},
                "line_susceptance": {"type": "array", "items": _pos},
                "comm_edges": {"type": ["array", "null"], "items": _pair},
            },
            "additionalProperties": False,
        },
        "areas": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": _AREA_COMMON,
                "properties": {
                    "kind": {"enum": ["conventional", "wind"]},
                    **{k: _pos if k in _AREA_POSITIVE else _num for k in _AREA_COMMON[1:]},
                    "tau_c": _pos,
                    "xi": _pos,
                    "f_r_bar": _pos,
                    "dfig": {
                        "type": "object",
                        "required": ["R_s", "R_r", "X_s", "X_r", "X_m", "H", "rotor_radius"],
                        "properties": {
                            k: _pos if k in _DFIG_POSITIVE else _num
                            for k in ("R_s", "R_r", "X_s", "X_r", "X_m", "H", "rotor_radius", "f_b", "V_t",
                                      "C_Q", "air_density", "gamma_bar", "torque_base")
                        },
                        "additionalProperties": False,
                    },
                    "wind": {
                        "type": "object",
                        "required": ["mu_w", "sigma_w"],
                        "properties": {"mu_w": _pos, "sigma_w": _nonneg, "v_pred": _num},
                        "additionalProperties": False,
                    },
                },
                "additionalProperties": False,
                "if": {"properties": {"kind": {"const": "wind"}}},
                "then": {"required": ["dfig", "wind"]},
                "else": {"required": ["tau_c", "xi"]},
            },
        },
        "cost": {
            "type": "object",
            "required": ["q"],
            "properties": {"q": {"type": "array", "items": _pos}, "z": _vec, "c": _vec},
            "additionalProperties": False,
        },
        "load_schedule": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["time", "P_load"],
                "properties": {"time": _nonneg, "P_load": _vec, "wind_deviation": _vec},
                "additionalProperties": False,
            },
        },
        "controller": {
            "type": "object",
            "properties": {
                "dfig": {"enum": list(CONTROLLERS)},
                "epsilon_guard": _pos,
                "damping_gain": _nonneg,
            },
            "additionalProperties": False,
        },
        "simulation": {
            "type": "object",
            "properties": {
                "dt": _pos,
                "horizon": _pos,
                "seed": {"type": "integer", "minimum": 0},
                "paths": {"type": "integer", "minimum": 1},
                "record_stride": {"type": "integer", "minimum": 1},
                "scheme": {"enum": ["em", "milstein"]},
            },
            "additionalProperties": False,
        },
        "output": {"type": "object", "properties": {"dir": {"type": "string"}}, "additionalProperties": False},
    },
    "additionalProperties": False,
}

DFIG_DEFAULTS = {"C_Q": 0.4, "air_density": 1.225, "V_t": 1.0, "gamma_bar": 1.2}
WIND_DEFAULTS = {"v_pred": 0.6}
CONTROLLER_DEFAULTS = {"dfig": "passive", "epsilon_guard": 1e-4, "damping_gain": 0.005}
SIMULATION_DEFAULTS = {"dt": 1e-3, "horizon": 30.0, "seed": 0, "paths": 64, "record_stride": 100, "scheme": "em"}


def _key_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def apply_defaults(raw: dict) -> dict:
    d = copy.deepcopy(raw)
    n = len(d.get("areas", []))
    for area in d.get("areas", []):
        if area.get("kind") == "wind":
            area["dfig"] = {**DFIG_DEFAULTS, **area.get("dfig", {})}
            area["wind"] = {**WIND_DEFAULTS, **area.get("wind", {})}
            area.setdefault("f_r_bar", 1.0)
    cost = d.setdefault("cost", {})
    cost.setdefault("z", [0.0] * n)
    cost.setdefault("c", [0.0] * n)
    topo = d.setdefault("topology", {})
    if topo.get("comm_edges") is None:
        topo["comm_edges"] = copy.deepcopy(topo.get("edges", []))
    d["controller"] = {**CONTROLLER_DEFAULTS, **d.get("controller", {})}
    d["simulation"] = {**SIMULATION_DEFAULTS, **d.get("simulation", {})}
    d.setdefault("output", {})
    d["output"].setdefault("dir", "olfc_out")
    d.setdefault("name", "scenario")
    return d


def config_hash(normalized: dict) -> str:
    """SHA-256 of the canonical JSON form; insensitive to key order."""
    blob = json.dumps(normalized, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ScenarioConfig:
    data: dict  # defaults applied
    plant: Plant
    schedule: list[ScheduleEvent]
    simulation: SimConfig
    output_dir: Path
    source: str | None = None

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    def scenario(self) -> Scenario:
        return Scenario(self.plant, self.schedule)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        """Rebuild with simulation/output overrides (``seed``, ``paths``, ``dt``, ``horizon``, ``out``)."""
        d = copy.deepcopy(self.data)
        sim = d["simulation"]
        for key in ("seed", "paths", "dt", "horizon", "record_stride"):
            if kw.get(key) is not None:
                sim[key] = kw[key]
        if kw.get("out") is not None:
            d["output"]["dir"] = str(kw["out"])
        return config_from_dict(d, self.source)


def _vector(d: dict, key: str, n: int, path: str) -> np.ndarray:
    v = np.asarray(d[key], dtype=float)
    if v.shape != (n,):
        raise ConfigError(f"{path}.{key}", f"expected {n} entries, got {v.size}")
    return v


def config_from_dict(raw: dict, source: str | None = None) -> ScenarioConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        errors = jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw)
        err = max(errors, key=lambda e: len(e.absolute_path), default=exc)
        raise ConfigError(_key_path(err.absolute_path), err.message) from None
    d = apply_defaults(raw)
    areas = d["areas"]
    n = len(areas)
    kinds = [a["kind"] for a in areas]
    nc = kinds.count("conventional")
    if kinds != ["conventional"] * nc + ["wind"] * (n - nc):
        raise ConfigError("areas", "conventional areas must be listed before wind areas")

    topo = d["topology"]
    if len(topo["line_susceptance"]) != len(topo["edges"]):
        raise ConfigError("topology.line_susceptance", f"expected {len(topo['edges'])} entries, one per edge")
    for key in ("edges", "comm_edges"):
        for k, (i, j) in enumerate(topo[key]):
            if i > n or j > n:
                raise ConfigError(f"topology.{key}[{k}]", f"area {max(i, j)} does not exist (n = {n})")
    try:
        topology = NetworkTopology(
            n_conventional=nc,
            n_wind=n - nc,
            edges=tuple((i - 1, j - 1) for i, j in topo["edges"]),
            B_line=np.asarray(topo["line_susceptance"], dtype=float),
            B_self=np.array([a["B_self"] for a in areas]),
            comm_edges=tuple((i - 1, j - 1) for i, j in topo["comm_edges"]),
        )
    except ValueError as exc:
        raise ConfigError("topology", str(exc)) from None

    chi_d = np.array([a["X_d"] - a["X_d_prime"] for a in areas])
    for i in np.flatnonzero(chi_d <= 0):
        raise ConfigError(f"areas[{i}].X_d_prime", "must be smaller than X_d")
    schedule_raw = d["load_schedule"]
    P0 = _vector(schedule_raw[0], "P_load", n, "load_schedule[0]")
    try:
        grid = GridParams(
            tau_p=[a["tau_p"] for a in areas],
            tau_v=[a["tau_v"] for a in areas],
            psi=[a["psi"] for a in areas],
            chi_d=chi_d,
            E_f=[a["E_f"] for a in areas],
            P_load=P0,
        )
    except ValueError as exc:
        raise ConfigError("areas", str(exc)) from None

    governors, dfigs, winds = [], [], []
    for i, a in enumerate(areas):
        try:
            if a["kind"] == "conventional":
                governors.append(GovernorParams(a["tau_c"], a["xi"]))
            else:
                dfigs.append(DfigParams(**a["dfig"]))
                winds.append(WindParams(**a["wind"]))
        except ValueError as exc:
            raise ConfigError(f"areas[{i}]", str(exc)) from None

    cost = d["cost"]
    try:
        model = CostModel.from_units(
            _vector(cost, "q", n, "cost"), _vector(cost, "z", n, "cost"), _vector(cost, "c", n, "cost"), nc
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("cost.q", str(exc)) from None

    ctrl = d["controller"]
    plant = Plant(
        topology=topology,
        grid=grid,
        governors=tuple(governors),
        dfigs=tuple(dfigs),
        winds=tuple(winds),
        cost=model,
        tau_delta=np.array([a["tau_delta"] for a in areas]),
        f_r_bar=np.array([a["f_r_bar"] for a in areas if a["kind"] == "wind"]),
        controller=ctrl["dfig"],
        epsilon_guard=ctrl["epsilon_guard"],
        damping_gain=ctrl["damping_gain"],
    )

    schedule, last = [], None
    for k, e in enumerate(schedule_raw):
        path = f"load_schedule[{k}]"
        if k == 0 and e["time"] != 0:
            raise ConfigError(f"{path}.time", "the schedule must start at t = 0")
        if last is not None and e["time"] <= last:
            raise ConfigError(f"{path}.time", "schedule times must be strictly increasing")
        last = e["time"]
        dev = None
        if "wind_deviation" in e:
            dev = _vector(e, "wind_deviation", n - nc, path)
        schedule.append(ScheduleEvent(float(e["time"]), _vector(e, "P_load", n, path), dev))

    s = d["simulation"]
    try:
        sim = SimConfig(
            dt=float(s["dt"]),
            horizon=float(s["horizon"]),
            master_seed=int(s["seed"]),
            n_paths=int(s["paths"]),
            record_stride=int(s["record_stride"]),
            scheme=s["scheme"],
        )
    except ValueError as exc:
        raise ConfigError("simulation", str(exc)) from None
    return ScenarioConfig(d, plant, schedule, sim, Path(d["output"]["dir"]), source)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("", f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw, str(path))


def bundled_config_path(name: str = "four_area.json") -> Path:
    return Path(str(resources.files("olfc") / "data" / name))


def load_bundled(name: str = "four_area.json") -> ScenarioConfig:
    return load_config(bundled_config_path(name))


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    tool_version: str
    started: str
    finished: str
    outputs: list[str]
    command: str
    config_source: str | None = None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)

    def write(self, directory: Path) -> Path:
        path = Path(directory) / "manifest.json"
        path.write_text(self.to_json() + "\n")
        return path


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def make_manifest(cfg: ScenarioConfig, command: str, started: str, outputs) -> RunManifest:
    return RunManifest(
        config_hash=cfg.hash,
        seed=int(cfg.data["simulation"]["seed"]),
        tool_version=__version__,
        started=started,
        finished=utc_now(),
        outputs=sorted(str(o) for o in outputs),
        command=command,
        config_source=cfg.source,
    )


__all__ = [
    "ConfigError",
    "RunManifest",
    "SCHEMA",
    "ScenarioConfig",
    "apply_defaults",
    "bundled_config_path",
    "config_from_dict",
    "config_hash",
    "load_bundled",
    "load_config",
    "make_manifest",
]
