"""Experiment configuration: JSON schema, defaults and conversion to domain objects.

Config files use the lab's units: frequencies in linear MHz, times in
microseconds (steps in nanoseconds). Everything is converted to rad/s and
seconds here, once.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .model import MHZ, ControlledSystem, NVParams, NVPhysicalParams, custom_system, nv_params_from_physical, nv_system
from .optimizer import OptimizationSpec
from .propagator import PropagationSpec
from .pulse import PulseSamplingSpec
from .quantum import basis_state, check_density_matrix, matrix_from_json
from .tomography import NoiseSpec, Protocol, SolverOptions

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_matrix = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dim", "re"],
    "properties": {"dim": _posint, "re": {"type": "array"}, "im": {"type": "array"}},
}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required)}


_NV_KEYS = ("omega1_mhz", "omega2_mhz", "Omega1_mhz", "Omega2_mhz", "gz_mhz", "gx_mhz")
_PHYS_KEYS = (
    "D_mhz", "gamma_e_mhz_per_g", "gamma_c_mhz_per_g", "B_gauss", "A_N_mhz", "A_zz_mhz", "A_zx_mhz", "omega_mw_mhz",
)

CONFIG_SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_dir": {"type": "string"},
        "system": {
            "oneOf": [
                _obj({"nv": _obj({k: _num for k in _NV_KEYS}, _NV_KEYS)}, ["nv"]),
                _obj(
                    {"physical": _obj({**{k: _num for k in _PHYS_KEYS}, "Omega1_mhz": _num}, (*_PHYS_KEYS, "Omega1_mhz"))},
                    ["physical"],
                ),
                _obj({"custom": _obj({"h0": _matrix, "hc": _matrix, "observable": _matrix}, ["h0", "hc", "observable"])},
                     ["custom"]),
            ]
        },
        "pulse": _obj(
            {"k": _posint, "freq_range_mhz": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}}
        ),
        "protocol": _obj(
            {
                "num_pulses": _posint,
                "duration_us": _pos,
                "sample_spacing_us": _pos,
                "last_k": _posint,
                "step_ns": _pos,
            }
        ),
        "noise": _obj(
            {
                "kind": {"enum": ["none", "gaussian", "shots"]},
                "sigma": {"type": "number", "minimum": 0},
                "shots": _posint,
            }
        ),
        "solver": _obj({"gtol": _pos, "max_iters": _posint}),
        "state": {
            "oneOf": [
                _obj({"basis": {"type": "string", "pattern": "^[01]+$"}}, ["basis"]),
                _obj({"matrix": _matrix}, ["matrix"]),
            ]
        },
        "conditioning": _obj(
            {"durations_us": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
             "realizations": _posint}
        ),
        "optimize": _obj(
            {
                "objective": {"enum": ["max-concurrence", "min-inverse-norm"]},
                "k": _posint,
                "duration_us": _pos,
                "restarts": _posint,
                "max_evals": _posint,
            }
        ),
    },
    ["schema_version"],
)


class ConfigError(ValueError):
    pass


def load_config_text(text: str, source: str = "<config>") -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "(root)"
            lines.append(f"  {where}: {e.message}")
        raise ConfigError(f"{source}: config does not match schema v{SCHEMA_VERSION}:\n" + "\n".join(lines))
    return raw


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return load_config_text(text, str(path))


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical config; ``output_dir`` is excluded since it never affects numbers."""
    content = {k: v for k, v in raw.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(content, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    seed: int
    output_dir: Path
    system: ControlledSystem
    pulse_spec: PulseSamplingSpec
    protocol: Protocol
    noise: NoiseSpec
    solver: SolverOptions
    state: np.ndarray
    durations: tuple
    realizations: int
    optimization: OptimizationSpec

    @property
    def digest(self) -> str:
        return config_hash(self.raw)

    @property
    def provenance(self) -> dict:
        return {"config_sha256": self.digest, "seed": self.seed, "schema_version": SCHEMA_VERSION}


def _system(raw: dict | None) -> ControlledSystem:
    if raw is None:
        return nv_system(NVParams.published())
    if "nv" in raw:
        return nv_system(NVParams.from_json(raw["nv"]))
    if "physical" in raw:
        p = raw["physical"]
        phys = NVPhysicalParams.from_mhz(
            p["D_mhz"], p["gamma_e_mhz_per_g"], p["gamma_c_mhz_per_g"], p["B_gauss"],
            p["A_N_mhz"], p["A_zz_mhz"], p["A_zx_mhz"], p["omega_mw_mhz"],
        )
        return nv_system(nv_params_from_physical(phys, p["Omega1_mhz"] * MHZ))
    c = raw["custom"]
    return custom_system(matrix_from_json(c["h0"]), matrix_from_json(c["hc"]), matrix_from_json(c["observable"]))


def _state(raw: dict | None, d: int) -> np.ndarray:
    if raw is None:
        return basis_state("0" * int(round(np.log2(d))))
    if "basis" in raw:
        rho = basis_state(raw["basis"])
    else:
        rho = matrix_from_json(raw["matrix"])
    if rho.shape != (d, d):
        raise ConfigError(f"state has dimension {rho.shape[0]}, system has {d}")
    return check_density_matrix(rho)


def build_config(raw: dict, seed_override: int | None = None, out_override: str | None = None) -> ExperimentConfig:
    """Turn a validated raw config into domain objects (the seed override is folded into the hash)."""
    raw = json.loads(json.dumps(raw))
    if seed_override is not None:
        raw["seed"] = seed_override
    if out_override is not None:
        raw["output_dir"] = out_override
    seed = int(raw.get("seed", 0))
    try:
        system = _system(raw.get("system"))
        pr = raw.get("pulse", {})
        lo, hi = pr.get("freq_range_mhz", [0.0, 4.0])
        pulse_spec = PulseSamplingSpec(pr.get("k", 10), lo * MHZ, hi * MHZ, seed=seed)
        pc = raw.get("protocol", {})
        protocol = Protocol(
            pc.get("num_pulses"),
            pc.get("duration_us", 0.7) * 1e-6,
            pc.get("sample_spacing_us", 0.02) * 1e-6,
            pc.get("last_k", 10),
            PropagationSpec(pc.get("step_ns", 1.0) * 1e-9),
        )
        protocol.design_times()
        nc = raw.get("noise", {})
        noise = NoiseSpec(nc.get("kind", "none"), nc.get("sigma", 0.0), nc.get("shots", 0), seed)
        sc = raw.get("solver", {})
        solver = SolverOptions(gtol=sc.get("gtol", 1e-9), max_iters=sc.get("max_iters", 20000))
        cc = raw.get("conditioning", {})
        durations = tuple(t * 1e-6 for t in cc.get("durations_us", [round(0.1 * i, 1) for i in range(1, 15)]))
        oc = raw.get("optimize", {})
        optimization = OptimizationSpec(
            objective=oc.get("objective", "max-concurrence"),
            k=oc.get("k", 10),
            duration=oc.get("duration_us", 1.8) * 1e-6,
            restarts=oc.get("restarts", 20),
            max_evals=oc.get("max_evals", 2000),
            seed=seed,
            freq_lo=lo * MHZ,
            freq_hi=hi * MHZ,
        )
        state = _state(raw.get("state"), system.dim)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(
        raw, seed, Path(raw.get("output_dir", "out")), system, pulse_spec, protocol, noise, solver, state,
        durations, cc.get("realizations", 100), optimization,
    )
