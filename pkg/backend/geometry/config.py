from pathlib import Path

import yaml
from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigError

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "lab_config.yaml"


class SolverConfig(BaseModel):
    tol: float = Field(1e-9, ge=0)
    gh_cap: int = Field(8, ge=1)


class NumericsConfig(BaseModel):
    eps: float = Field(2.0**-6, gt=0)
    comb_depth: int = Field(8, ge=1)


class OutputConfig(BaseModel):
    digits: int = Field(12, ge=1, le=17)
    schema_version: str = "1.0"


class LabSettings(BaseModel):
    solver: SolverConfig = SolverConfig()
    numerics: NumericsConfig = NumericsConfig()
    output: OutputConfig = OutputConfig()


def read_yaml(path: str | Path) -> dict:
    """Reads a YAML (or JSON) mapping from disk."""
    try:
        with open(path, "r") as file:
            data = yaml.safe_load(file)
    except FileNotFoundError:
        raise ConfigError(f"Configuration file not found at {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"Error parsing configuration file {path}: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration file {path} must contain a mapping")
    return data


def load_config(path: str | Path = DEFAULT_CONFIG_PATH) -> LabSettings:
    """Loads the numeric settings from a YAML file."""
    data = read_yaml(path)
    try:
        return LabSettings(**data)
    except ValidationError as e:
        raise ConfigError(f"Invalid settings in {path}: {e}")


# Load the config once on startup
config = load_config()
