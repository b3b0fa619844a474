"""Run configuration: JSON schema, defaults and conversion to component configs.

Unknown keys are rejected at every level. Validation errors carry the JSON
path of the offending value (``$.train.iterations``).
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import jsonschema

from . import symtab
from .env import EnvConfig
from .gfn import TrainConfig
from .reward import RewardConfig


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "$"):
        self.path = path
        super().__init__(f"{path}: {message}")


_POS_INT = {"type": "integer", "minimum": 1}
_RANGE = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}


def _obj(props: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    **_obj(
        {
            "seed": {"type": "integer", "minimum": 0},
            "output_dir": {"type": "string", "minLength": 1},
            "env": _obj(
                {
                    "elements": {"type": "array", "items": {"type": "string"}, "minItems": 1, "uniqueItems": True},
                    "oxidation_states": {
                        "type": ["object", "null"],
                        "additionalProperties": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                    },
                    "space_groups": {
                        "type": ["array", "null"],
                        "items": {"type": "integer", "minimum": 1, "maximum": 230},
                        "minItems": 1,
                        "uniqueItems": True,
                    },
                    "max_atoms_per_element": _POS_INT,
                    "max_atoms": _POS_INT,
                    "max_elements": _POS_INT,
                    "enforce_neutrality": {"type": "boolean"},
                    "enforce_wyckoff": {"type": "boolean"},
                    "sg_stage": {"type": "boolean"},
                    "fixed_space_group": {"type": "integer", "minimum": 1, "maximum": 230},
                    "composition_stage": {"type": "boolean"},
                    "fixed_composition": {
                        "type": ["object", "null"],
                        "additionalProperties": {"type": "integer", "minimum": 0},
                    },
                    "lp_stage": {"type": "boolean"},
                    "length_range": _RANGE,
                    "angle_range": _RANGE,
                    "min_increment": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                }
            ),
            "policy": _obj(
                {
                    "hidden": {"type": "array", "items": _POS_INT, "minItems": 1},
                    "n_components": _POS_INT,
                }
            ),
            "train": _obj(
                {
                    "iterations": {"type": "integer", "minimum": 0},
                    "trajectories_per_iter": _POS_INT,
                    "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
                    "lr_policy": {"type": "number", "exclusiveMinimum": 0},
                    "lr_logz": {"type": "number", "exclusiveMinimum": 0},
                    "checkpoint_every": {"type": "integer", "minimum": 0},
                    "max_grad_norm": {"type": "number", "minimum": 0},
                }
            ),
            "reward": _obj(
                {
                    "backend": {"enum": ["surrogate", "proxy"]},
                    "weights": {"type": ["string", "null"]},
                    "temperature": {"type": "number", "exclusiveMinimum": 0},
                }
            ),
            "oracle": _obj(
                {
                    "samples": _POS_INT,
                    "max_terminals": _POS_INT,
                }
            ),
        }
    ),
}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "runs/default",
    "env": {
        "elements": list(symtab.DEFAULT_ELEMENTS),
        "oxidation_states": None,
        "space_groups": None,
        "max_atoms_per_element": 16,
        "max_atoms": 50,
        "max_elements": 5,
        "enforce_neutrality": True,
        "enforce_wyckoff": True,
        "sg_stage": True,
        "fixed_space_group": 1,
        "composition_stage": True,
        "fixed_composition": None,
        "lp_stage": True,
        "length_range": [0.9, 100.0],
        "angle_range": [50.0, 150.0],
        "min_increment": 0.1,
    },
    "policy": {"hidden": [256, 256, 256], "n_components": 5},
    "train": {
        "iterations": 50_000,
        "trajectories_per_iter": 10,
        "epsilon": 0.1,
        "lr_policy": 1e-4,
        "lr_logz": 1e-2,
        "checkpoint_every": 0,
        "max_grad_norm": 0.0,
    },
    "reward": {"backend": "surrogate", "weights": None, "temperature": 8.0},
    "oracle": {"samples": 10_000, "max_terminals": 1_000_000},
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("oxidation_states", "fixed_composition"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration."""

    doc: dict

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.doc["output_dir"])

    def env_config(self) -> EnvConfig:
        e = self.doc["env"]
        return EnvConfig(
            elements=tuple(e["elements"]),
            oxidation_states=e["oxidation_states"],
            space_groups=None if e["space_groups"] is None else tuple(e["space_groups"]),
            max_atoms_per_element=e["max_atoms_per_element"],
            max_atoms=e["max_atoms"],
            max_elements=e["max_elements"],
            enforce_neutrality=e["enforce_neutrality"],
            enforce_wyckoff=e["enforce_wyckoff"],
            sg_stage=e["sg_stage"],
            fixed_space_group=e["fixed_space_group"],
            composition_stage=e["composition_stage"],
            fixed_composition=e["fixed_composition"],
            lp_stage=e["lp_stage"],
            length_range=tuple(e["length_range"]),
            angle_range=tuple(e["angle_range"]),
            min_increment=e["min_increment"],
        )

    def train_config(self) -> TrainConfig:
        t = self.doc["train"]
        return TrainConfig(
            iterations=t["iterations"],
            trajectories_per_iter=t["trajectories_per_iter"],
            epsilon=t["epsilon"],
            lr_policy=t["lr_policy"],
            lr_logz=t["lr_logz"],
            temperature=self.doc["reward"]["temperature"],
            seed=self.seed,
            checkpoint_every=t["checkpoint_every"],
            max_grad_norm=t["max_grad_norm"],
        )

    def reward_config(self) -> RewardConfig:
        r = self.doc["reward"]
        return RewardConfig(backend=r["backend"], weights=r["weights"], temperature=r["temperature"])

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True) + "\n"


def validate(doc: Any) -> None:
    """Raise ``ConfigError`` for the first schema violation (deepest path first)."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (-len(e.absolute_path), e.json_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, err.json_path)
    _semantic_checks(doc)


def _semantic_checks(doc: dict) -> None:
    env = doc.get("env", {})
    for i, s in enumerate(env.get("elements") or []):
        if s not in symtab.tables().elements:
            raise ConfigError(f"unknown element {s!r}", f"$.env.elements[{i}]")
    for key in ("oxidation_states", "fixed_composition"):
        for s in env.get(key) or {}:
            if s not in symtab.tables().elements:
                raise ConfigError(f"unknown element {s!r}", f"$.env.{key}.{s}")
    for key in ("length_range", "angle_range"):
        rng = env.get(key)
        if rng is not None and not (0 < rng[0] < rng[1]):
            raise ConfigError("range must satisfy 0 < low < high", f"$.env.{key}")
    reward = doc.get("reward", {})
    if reward.get("backend") == "proxy" and not reward.get("weights"):
        raise ConfigError("the proxy backend needs a weight file", "$.reward.weights")


def resolve(doc: Optional[dict] = None, base_dir: Optional[Path] = None, **overrides) -> RunConfig:
    """Validate ``doc``, fill defaults and apply non-``None`` ``overrides`` (``seed``, ``output_dir``)."""
    doc = {} if doc is None else doc
    validate(doc)
    full = _merge(DEFAULTS, doc)
    for k, v in overrides.items():
        if v is not None:
            full[k] = v
    weights = full["reward"]["weights"]
    if weights and base_dir is not None and not Path(weights).is_absolute():
        full["reward"]["weights"] = str((base_dir / weights).resolve())
    validate(full)
    run = RunConfig(full)
    try:
        run.env_config()
        run.train_config()
        run.reward_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return run


def load(path: Optional[str | Path], **overrides) -> RunConfig:
    if path is None:
        return resolve({}, None, **overrides)
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return resolve(doc, path.parent, **overrides)
