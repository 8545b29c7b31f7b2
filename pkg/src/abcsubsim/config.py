"""Experiment configuration: a single JSON document validated against a
published schema, plus the shipped preset files."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .core import ContractViolation, ModelClass, RandomStream
from .models import Ma2Model, OscillatorModel, ToyUniformModel, make_white_noise_force
from .subsim import AdaptSettings, SubSimConfig

__all__ = [
    "ALGORITHMS",
    "ConfigError",
    "Dataset",
    "ExperimentConfig",
    "parse_real",
    "MODELS",
    "build_model",
    "canonical_json",
    "config_hash",
    "generate_dataset",
    "list_presets",
    "load_config",
    "load_preset",
    "parse_config",
    "schema",
]

MODELS = ("ma2", "oscillator", "toy")
ALGORITHMS = ("subsim", "standard-abc", "abc-mcmc", "evidence-rejection")

_MODEL_PARAMS = {
    "ma2": {"n_obs"},
    "oscillator": {"n_obs", "mass", "dt", "S_f", "sigma_e2", "sigma_m2", "s0", "theta_max"},
    "toy": set(),
}
_DEFAULT_THETA_TRUE = {"ma2": [0.6, 0.2], "oscillator": [1.0, 1.0], "toy": [0.0]}
_OSC_DEFAULTS = {"n_obs": 300, "mass": 3.0, "dt": 0.01, "S_f": 0.0048, "sigma_e2": 1e-2,
                 "sigma_m2": 1e-6, "s0": [0.01, 0.03], "theta_max": 3.0}


class ConfigError(ValueError):
    """Configuration rejected before any sampling."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(message)
        self.path = path

    def report(self) -> dict:
        return {"error": "config", "message": str(self), "path": self.path}


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config.schema.json").read_text())


def list_presets() -> list[str]:
    folder = resources.files(__package__).joinpath("presets")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def parse_real(value, where: str) -> float:
    """Config reals; the strings "inf" and "Infinity" stand for +infinity."""
    if isinstance(value, str):
        if value.lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise ConfigError(f"expected a number or 'inf', got {value!r}", where)
    return float(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; ``raw`` is the normalized JSON document."""

    raw: dict
    model_name: str
    model_params: dict
    theta_true: tuple[float, ...]
    data_seed: int
    dataset_path: str | None
    algorithm: str
    subsim: SubSimConfig
    seed: int
    reps: int
    out: str
    store_x: str

    @property
    def name(self) -> str:
        return self.raw.get("name", self.model_name)

    def section(self, key: str) -> dict:
        return self.raw.get(key, {})

    def with_overrides(self, seed=None, reps=None, out=None) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = seed
        if reps is not None:
            raw["reps"] = reps
        if out is not None:
            raw["out"] = str(out)
        return parse_config(raw)


def _subsim_config(section: dict) -> SubSimConfig:
    adapt = dict(section.get("adapt", {}))
    if "band" in adapt:
        adapt["band"] = tuple(adapt["band"])
    target = section.get("epsilon_target")
    sched = section.get("sigma_schedule")
    try:
        return SubSimConfig(
            N=section.get("N", 1000),
            P0=section.get("P0", 0.2),
            m_max=section.get("m_max", 10),
            epsilon_target=None if target is None else parse_real(target, "subsim.epsilon_target"),
            sigma0=section.get("sigma0", 0.4),
            adapt=AdaptSettings(**adapt),
            sigma_schedule=None if sched is None else tuple(sched),
        )
    except ContractViolation as exc:
        raise ConfigError(str(exc), "subsim") from exc


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a configuration document.

    Raises
    ------
    ConfigError
        Schema violations, unknown names, non-integral N*P0 or 1/P0, and
        model parameters the chosen model does not take.
    """
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path))
        raise ConfigError(exc.message, where) from exc
    raw = copy.deepcopy(raw)
    model = raw["model"]
    name = model["name"]
    params = dict(model.get("params", {}))
    unknown = set(params) - _MODEL_PARAMS[name]
    if unknown:
        raise ConfigError(f"unknown parameters for model {name!r}: {sorted(unknown)}", "model/params")
    theta_true = tuple(float(t) for t in model.get("theta_true", _DEFAULT_THETA_TRUE[name]))
    expected_dim = 1 if name == "toy" else 2
    if len(theta_true) != expected_dim:
        raise ConfigError(f"theta_true must have {expected_dim} entries", "model/theta_true")
    subsim = _subsim_config(raw.get("subsim", {}))
    if raw["algorithm"] == "standard-abc" and "standard_abc" not in raw:
        raise ConfigError("algorithm standard-abc needs a 'standard_abc' section", "standard_abc")
    if raw["algorithm"] == "abc-mcmc" and "abc_mcmc" not in raw:
        raise ConfigError("algorithm abc-mcmc needs an 'abc_mcmc' section", "abc_mcmc")
    if raw["algorithm"] == "evidence-rejection" and "epsilons" not in raw.get("evidence", {}):
        raise ConfigError("algorithm evidence-rejection needs 'evidence.epsilons'", "evidence")
    for key in ("standard_abc", "abc_mcmc"):
        if key in raw:
            parse_real(raw[key]["epsilon"], f"{key}/epsilon")
    for eps in raw.get("evidence", {}).get("epsilons", []):
        parse_real(eps, "evidence/epsilons")
    return ExperimentConfig(
        raw=raw,
        model_name=name,
        model_params=params,
        theta_true=theta_true,
        data_seed=int(model.get("data_seed", 0)),
        dataset_path=model.get("dataset"),
        algorithm=raw["algorithm"],
        subsim=subsim,
        seed=int(raw.get("seed", 0)),
        reps=int(raw.get("reps", 1)),
        out=raw.get("out", "runs"),
        store_x=raw.get("outputs", {}).get("store_x", "final"),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", str(path)) from exc
    return parse_config(raw)


def load_preset(name: str) -> ExperimentConfig:
    if name not in list_presets():
        raise ConfigError(f"unknown preset {name!r}; available: {list_presets()}", "preset")
    text = resources.files(__package__).joinpath("presets", f"{name}.json").read_text()
    return parse_config(json.loads(text))


@dataclass
class Dataset:
    """Frozen synthetic observation with the inputs needed to replay it."""

    model: str
    y: np.ndarray
    theta_true: np.ndarray
    data_seed: int
    force: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "data_seed": self.data_seed,
            "theta_true": self.theta_true.tolist(),
            "y": self.y.tolist(),
            "force": None if self.force is None else self.force.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        force = d.get("force")
        return cls(
            model=d["model"],
            y=np.asarray(d["y"], dtype=float),
            theta_true=np.asarray(d["theta_true"], dtype=float),
            data_seed=int(d["data_seed"]),
            force=None if force is None else np.asarray(force, dtype=float),
        )


def build_model(name: str, params: dict, theta_true=None, force=None) -> ModelClass:
    """Model instance from config parameters; the oscillator needs its force record."""
    if name == "ma2":
        return Ma2Model(n_obs=params.get("n_obs", 100), theta_true=theta_true)
    if name == "toy":
        return ToyUniformModel(theta_true=theta_true)
    if name == "oscillator":
        p = {**_OSC_DEFAULTS, **params}
        if force is None:
            raise ContractViolation("the oscillator model needs a force record")
        return OscillatorModel(
            force, mass=p["mass"], dt=p["dt"], sigma_e2=p["sigma_e2"], sigma_m2=p["sigma_m2"],
            s0=tuple(p["s0"]), theta_max=p["theta_max"], theta_true=theta_true,
        )
    raise ConfigError(f"unknown model {name!r}", "model/name")


def generate_dataset(name: str, params: dict, theta_true, data_seed: int) -> Dataset:
    """Synthetic observation at ``theta_true``.

    The force record and the observation noise come from two reserved
    streams of ``data_seed``, kept apart from every inference stream.
    """
    theta_true = np.asarray(theta_true, dtype=float)
    root = RandomStream(int(data_seed), 0)
    force = None
    if name == "oscillator":
        p = {**_OSC_DEFAULTS, **params}
        force = make_white_noise_force(p["S_f"], p["dt"], int(p["n_obs"]), root.derive("force"))
    model = build_model(name, params, theta_true, force)
    if name == "toy":
        y = ToyUniformModel.observation()
    else:
        gen = root.derive("observation").generator()
        y = model.simulate_batch(theta_true[None, :], model.draw_noise(gen, 1))[0]
    return Dataset(name, y, theta_true, int(data_seed), force)
