"""Run configuration: an INI file with sections, keys typed by a schema.

Unknown sections or keys are rejected so typos surface immediately;
parse -> serialize -> parse is idempotent.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .trainer import TrainConfig

_BOOLS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _to_bool(s: str) -> bool:
    if s.lower() not in _BOOLS:
        raise ConfigError(f"expected a boolean, got {s!r}")
    return _BOOLS[s.lower()]


def _to_int_list(s: str):
    return tuple(int(tok) for tok in s.split(",") if tok.strip())


def _to_str_list(s: str):
    return tuple(tok.strip() for tok in s.split(",") if tok.strip())


# section -> key -> (parse, serialize, default)
_SCHEMA = {
    "data": {
        "path": (str, str, ""),
        "format": (str, str, ""),
        "min_user_core": (int, str, 1),
        "min_item_core": (int, str, 1),
    },
    "split": {
        "train_ratio": (float, repr, 0.8),
        "valid_of_test": (float, repr, 0.1),
        "seed": (int, str, 0),
    },
    "model": {
        "aspects": (int, str, 4),
        "dim": (int, str, 0),
        "hidden": (int, str, 64),
        "temp": (float, repr, 0.1),
    },
    "train": {
        "lr": (float, repr, 1e-3),
        "batch_size": (int, str, 128),
        "epochs": (int, str, 50),
        "gamma": (float, repr, 0.1),
        "tau": (float, repr, 0.2),
        "beta": (float, repr, 1.0),
        "beta_anneal_epochs": (int, str, 0),
        "patience": (int, str, 10),
        "seed": (int, str, 0),
        "dtype": (str, str, "float64"),
        "deterministic": (_to_bool, lambda b: str(b).lower(), False),
        "input_dropout": (float, repr, 0.0),
        "normalize_input": (_to_bool, lambda b: str(b).lower(), False),
        "ablate": (_to_str_list, ",".join, ()),
    },
    "eval": {
        "cutoffs": (_to_int_list, lambda t: ",".join(map(str, t)), (20, 50)),
    },
    "output": {
        "dir": (str, str, "runs/out"),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {s: {k: spec[2] for k, spec in keys.items()} for s, keys in _SCHEMA.items()}
        for section, keys in self.values.items():
            if section not in merged:
                raise ConfigError(f"unknown config section [{section}]")
            for key, val in keys.items():
                if key not in merged[section]:
                    raise ConfigError(f"unknown config key {key!r} in section [{section}]")
                merged[section][key] = val
        self.values = merged

    def __getitem__(self, section_key):
        section, key = section_key
        return self.values[section][key]

    def set(self, section, key, value):
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        self.values[section][key] = value

    def train_config(self) -> TrainConfig:
        v = self.values
        cfg = TrainConfig(
            aspects=v["model"]["aspects"],
            dim=v["model"]["dim"],
            hidden=v["model"]["hidden"],
            temp=v["model"]["temp"],
            lr=v["train"]["lr"],
            batch_size=v["train"]["batch_size"],
            epochs=v["train"]["epochs"],
            gamma=v["train"]["gamma"],
            tau=v["train"]["tau"],
            beta=v["train"]["beta"],
            beta_anneal_epochs=v["train"]["beta_anneal_epochs"],
            patience=v["train"]["patience"],
            seed=v["train"]["seed"],
            dtype=v["train"]["dtype"],
            deterministic=v["train"]["deterministic"],
            input_dropout=v["train"]["input_dropout"],
            normalize_input=v["train"]["normalize_input"],
        )
        cfg.apply_ablations(v["train"]["ablate"])
        return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    values: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            parse = _SCHEMA[section][key][0]
            try:
                values[section][key] = parse(raw)
            except (ValueError, ConfigError) as e:
                raise ConfigError(f"{path}: bad value for [{section}] {key}: {e}") from e
    return RunConfig(values)


def save_config(cfg: RunConfig, path):
    parser = configparser.ConfigParser()
    for section, keys in _SCHEMA.items():
        parser.add_section(section)
        for key, (_, serialize, _default) in keys.items():
            parser.set(section, key, serialize(cfg.values[section][key]))
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
