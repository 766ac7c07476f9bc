"""Scenario configuration: defaults, JSON loading and environment overrides.

Two default sets exist. ``desk`` keeps every experiment inside a CI budget
(small arrays, few seeds); ``full`` carries the full-size simulation
constants. A JSON document and ``RISVCOM_<KEY>`` environment variables are
applied on top, in that order. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields

from .exceptions import ConfigError

ENV_PREFIX = "RISVCOM_"

__all__ = ["ScenarioConfig", "load_config", "config_hash", "ENV_PREFIX", "json_schema"]


@dataclass(frozen=True)
class ScenarioConfig:
    # geometry and propagation
    N_t: int = 4
    N_r: int = 4
    M: int = 16
    d_BR: float = 1500.0
    d_RV: float = 2.0
    alpha_BR: float = 2.2
    alpha_RV: float = 2.8
    P0_dB: float = -30.0
    rician_K_dB: float = 5.0
    N0_dBm_per_Hz: float = -174.0
    f_c: float = 3.5e9
    # narrowband link
    B_nb: float = 1e6
    P_u_dBm: float = 30.0
    P_t_dBm: float = 20.0
    I: int = 16
    T: int | None = None
    los_intervals: int = 10
    los_ratio: float = 50.0
    slot: float | None = None
    phase_bits: int = 2
    nb_max_outer: int = 10
    passive: str = "auto"
    # broadband link
    B_bb: float = 1e7
    K: int = 2
    N: int = 8
    distances: tuple = (800.0, 1000.0, 1500.0)
    velocity: float = 27.78
    P_max_dBm: float = 20.0
    P_tot_dBm: float = 30.0
    C_min: float = 3e7
    tau_rms: float = 1e-6
    rounds: int = 3
    # sweeps
    seeds: int = 20
    seed_offset: int = 0
    I_list: tuple = (1, 2, 4, 8, 16)
    speeds_kmh: tuple = (10.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0)
    I_fixed: int = 8
    M_small: int = 8
    N_list: tuple = (32, 64, 128)
    K_list: tuple = (2,)
    workers: int = 1

    def __post_init__(self):
        for name in ("distances", "I_list", "speeds_kmh", "N_list", "K_list"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    # defaults ----------------------------------------------------------------
    @classmethod
    def full_scale(cls, **overrides) -> "ScenarioConfig":
        """Published constants: 16x25 MIMO, 100 elements, 20 blocks, 3 VUEs on 32 carriers."""
        base = dict(
            N_t=16, N_r=25, M=100, I=20, K=3, N=32, seeds=20, rounds=10,
            I_list=(1, 5, 10, 20, 50, 100), I_fixed=20, M_small=20,
            speeds_kmh=(10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 150.0),
            K_list=(2, 3, 4, 5, 6),
        )
        base.update(overrides)
        return cls(**base)

    # validation --------------------------------------------------------------
    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                raise ConfigError(f"{f.name} must not be a boolean")
        ints = ("N_t", "N_r", "M", "I", "los_intervals", "nb_max_outer", "K", "N", "rounds", "seeds", "I_fixed", "M_small", "workers")
        for name in ints:
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1, f"{name} must be a positive integer")
        need(isinstance(self.seed_offset, int) and self.seed_offset >= 0, "seed_offset must be a non-negative integer")
        need(isinstance(self.phase_bits, int) and 0 <= self.phase_bits <= 16, "phase_bits must be in [0, 16]")
        need(self.T is None or (isinstance(self.T, int) and self.T >= self.N_t), "T must be >= N_t")
        need(self.I <= self.M, "I must not exceed M")
        need(self.I_fixed <= self.M, "I_fixed must not exceed M")
        need(all(isinstance(i, int) and 1 <= i <= self.M for i in self.I_list), "I_list entries must lie in [1, M]")
        need(all(isinstance(n, int) and n >= 1 for n in self.N_list), "N_list entries must be positive integers")
        need(all(isinstance(k, int) and k >= 1 for k in self.K_list), "K_list entries must be positive integers")
        need(len(self.distances) >= 1 and all(float(d) > 0 for d in self.distances), "distances must be positive")
        need(all(float(v) > 0 for v in self.speeds_kmh), "speeds must be positive")
        for name in ("d_BR", "d_RV", "f_c", "B_nb", "B_bb", "los_ratio", "tau_rms", "velocity"):
            need(_is_real(getattr(self, name)) and getattr(self, name) > 0, f"{name} must be positive")
        need(self.slot is None or (_is_real(self.slot) and self.slot > 0), "slot must be positive")
        need(_is_real(self.C_min) and self.C_min >= 0, "C_min must be non-negative")
        need(self.los_ratio >= 1, "los_ratio must be >= 1")
        need(self.passive in ("auto", "closed", "gradient", "exhaustive"), "unknown passive method")

    # derived -----------------------------------------------------------------
    @property
    def pilot_T(self) -> int:
        return self.N_t if self.T is None else self.T

    @property
    def slot_nb(self) -> float:
        """Symbol slot; one over the narrowband bandwidth unless overridden."""
        return 1.0 / self.B_nb if self.slot is None else self.slot

    def to_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


def _is_real(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}


def _coerce(name: str, value):
    """Match JSON values to the declared field types (ints stay ints)."""
    default = getattr(ScenarioConfig, name, None)
    if isinstance(default, tuple) or isinstance(value, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name} must be a list")
        return tuple(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _parse_env(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path=None, full_scale: bool = False, env=None, **overrides) -> ScenarioConfig:
    """Build a config from defaults, an optional JSON file, the environment and keyword overrides.

    Parameters
    ----------
    path : str or Path, optional
        JSON object with any subset of the config keys.
    full_scale : bool
        Start from the full-scale constants instead of the desk-scale ones.
    env : mapping, optional
        Environment to read ``RISVCOM_*`` overrides from (default ``os.environ``).

    Raises
    ------
    ConfigError
        Unreadable file, malformed JSON, unknown key or invalid value.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        values.update(doc)
    env = os.environ if env is None else env
    for key, raw in env.items():
        if key.startswith(ENV_PREFIX):
            values[key[len(ENV_PREFIX):]] = _parse_env(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: _coerce(k, v) for k, v in values.items()}
    try:
        return ScenarioConfig.full_scale(**values) if full_scale else ScenarioConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


def json_schema() -> dict:
    """JSON schema of the config document (all keys optional, none extra)."""
    kinds = {int: "integer", float: "number", str: "string"}
    props = {}
    for f in fields(ScenarioConfig):
        default = f.default
        if isinstance(default, tuple):
            props[f.name] = {"type": "array", "items": {"type": "number"}}
        elif default is None:
            props[f.name] = {"type": ["number", "null"]}
        else:
            props[f.name] = {"type": kinds[type(default)]}
    return {"type": "object", "properties": props, "additionalProperties": False}
