"""Run configuration: built-in defaults < config file (TOML/JSON) < command-line flags."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import tomli

from .errors import ConfigError, ParseError
from .registration import RegistrationConfig


@dataclass
class RunConfig:
    mesh: Optional[str] = None
    cloud: Optional[str] = None
    case: Optional[str] = None
    out: Optional[str] = None
    k_ss: float = 0.01
    poisson_ratio: float = 0.49
    youngs_modulus: float = 1.0
    max_iters: int = 200
    step_mode: str = "optimal"
    fixed_alpha: Optional[float] = None
    momentum: str = "nesterov"
    gradient_point: str = "f"
    force_mask: Optional[str] = None
    fixed_nodes: Optional[str] = None
    fixed_penalty: float = 1e6
    kss_relative: bool = False
    early_stop: bool = False
    icp: bool = False
    trace: bool = False
    seed: int = 0
    threads: int = 1

    @classmethod
    def keys(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    def registration_config(self, force_mask=None, fixed_nodes=None) -> RegistrationConfig:
        return RegistrationConfig(
            k_ss=self.k_ss,
            poisson_ratio=self.poisson_ratio,
            youngs_modulus=self.youngs_modulus,
            max_iters=self.max_iters,
            force_mask=force_mask,
            fixed_nodes=fixed_nodes,
            fixed_penalty=self.fixed_penalty,
            kss_relative=self.kss_relative,
            step_mode=self.step_mode,
            fixed_alpha=self.fixed_alpha,
            momentum=self.momentum,
            gradient_point=self.gradient_point,
            early_stop=self.early_stop,
            rng_seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def read_config_file(path) -> dict[str, Any]:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomli.loads(text)
    except (json.JSONDecodeError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return data


def resolve(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge file values and flag overrides onto the defaults; unknown keys are rejected."""
    merged: dict[str, Any] = {}
    for source in (file_values or {}, {k: v for k, v in (overrides or {}).items() if v is not None}):
        unknown = set(source) - RunConfig.keys()
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update(source)
    cfg = RunConfig(**merged)
    cfg.registration_config()  # validates numeric fields
    return cfg


def load_node_set(path) -> np.ndarray:
    """Node ids, one per line (a non-numeric header line and extra columns are ignored)."""
    ids = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        tok = line.replace(",", " ").split()
        if not tok:
            continue
        try:
            ids.append(int(tok[0]))
        except ValueError:
            if i == 0:
                continue
            raise ParseError(f"{path}: invalid node id {tok[0]!r}") from None
    return np.asarray(sorted(set(ids)), dtype=np.int64)


def save_node_set(path, ids) -> None:
    Path(path).write_text("node\n" + "".join(f"{int(i)}\n" for i in ids))
