"""
Experiment configuration: TOML files validated by pydantic models.
"""

import hashlib
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import typing
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from basis import BasisSet, enumerate_basis
from exceptions import ConfigError
from reservoir import NoiseLocation, ReservoirKind, ReservoirSpec, Topology, generate_reservoir

logger = logging.getLogger(__name__)


class LabSettings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="IPC_LAB_", extra="ignore")

    SEED: Optional[int] = None  # overrides the config seed
    LOG_LEVEL: str = "INFO"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ReservoirConfig(_Section):
    kind: ReservoirKind = ReservoirKind.LINEAR
    n: int = Field(10, ge=1)
    input_dim: int = Field(1, ge=1)
    spectral_radius: float = Field(0.9, ge=0)
    input_scale: float = Field(1.0, gt=0)
    topology: Topology = Topology.RANDOM


class NoiseConfig(_Section):
    location: NoiseLocation = NoiseLocation.NONE
    sigma: Optional[float] = Field(None, ge=0)
    variances: Optional[List[float]] = None
    covariance_file: Optional[str] = None

    @model_validator(mode="after")
    def one_source(self):
        given = [name for name in ("sigma", "variances", "covariance_file") if getattr(self, name) is not None]
        if len(given) > 1:
            raise ValueError(f"give only one of sigma, variances, covariance_file (got {', '.join(given)})")
        if self.variances is not None and any(v < 0 or not math.isfinite(v) for v in self.variances):
            raise ValueError("variances must be finite and nonnegative")
        if self.location is not NoiseLocation.NONE and not given:
            raise ValueError(f"noise location '{self.location.value}' needs sigma, variances or covariance_file")
        return self

    def covariance(self, n: int, base_dir: Path) -> Optional[np.ndarray]:
        if self.location is NoiseLocation.NONE:
            return None
        if self.sigma is not None:
            return self.sigma ** 2 * np.eye(n)
        if self.variances is not None:
            return np.asarray(self.variances, dtype=float)
        path = Path(self.covariance_file)
        if not path.is_absolute():
            path = base_dir / path
        try:
            return np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=2)
        except (OSError, ValueError) as e:
            raise ConfigError(f"Could not read noise.covariance_file {path}: {str(e)}")


class InputConfig(_Section):
    dist: Literal["uniform"] = "uniform"


class SimConfig(_Section):
    T: int = Field(10_000, ge=1)
    washout: int = Field(1000, ge=0)
    realizations: int = Field(1, ge=1)
    sequences: int = Field(1, ge=1)  # independent input sequences pooled by the bound


class BasisConfig(_Section):
    max_degree: int = Field(3, ge=1)
    max_delay: int = Field(10, ge=0)
    hard_cap: Optional[int] = Field(None, ge=1)


class CapacityConfig(_Section):
    n_shuffles: int = Field(20, ge=20)
    regress_on: Literal["realization", "mean"] = "realization"


class SweepConfig(_Section):
    parameter: str
    values: List[float] = Field(min_length=2)

    @field_validator("values")
    @classmethod
    def finite(cls, values: List[float]) -> List[float]:
        if not all(math.isfinite(v) for v in values):
            raise ValueError("sweep values must be finite")
        return values


def _is_numeric(annotation) -> bool:
    if annotation in (int, float):
        return True
    if typing.get_origin(annotation) is Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        return bool(args) and all(a in (int, float) for a in args)
    return False


def scalar_paths(model: type = None, prefix: str = "") -> Dict[str, type]:
    """Dotted paths of every numeric field a sweep may vary"""
    model = ExperimentConfig if model is None else model
    paths = {}
    for name, info in model.model_fields.items():
        annotation = info.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            paths.update(scalar_paths(annotation, f"{prefix}{name}."))
        elif _is_numeric(annotation):
            paths[f"{prefix}{name}"] = annotation
    return paths


class ExperimentConfig(_Section):
    reservoir: ReservoirConfig = Field(default_factory=ReservoirConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    input: InputConfig = Field(default_factory=InputConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    basis: BasisConfig = Field(default_factory=BasisConfig)
    capacity: CapacityConfig = Field(default_factory=CapacityConfig)
    sweep: Optional[SweepConfig] = None
    seed: int = Field(0, ge=0)

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @model_validator(mode="after")
    def sweep_target(self):
        if self.sweep is not None:
            paths = scalar_paths(type(self))
            if self.sweep.parameter not in paths:
                raise ValueError(
                    f"sweep.parameter '{self.sweep.parameter}' is not a numeric field; "
                    f"choose one of {', '.join(sorted(paths))}"
                )
        return self

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def with_value(self, path: str, value: float) -> "ExperimentConfig":
        """Copy with one dotted field replaced, revalidated"""
        data = self.model_dump(mode="json")
        *parents, leaf = path.split(".")
        node = data
        for part in parents:
            node = node[part]
        node[leaf] = int(value) if scalar_paths().get(path) is int and float(value).is_integer() else value
        return _validate(data, self._base_dir, f"sweep point {path}={value}")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.with_value("seed", seed)

    def build_reservoir(self, seed: Optional[int] = None) -> ReservoirSpec:
        r = self.reservoir
        return generate_reservoir(
            kind=r.kind,
            n=r.n,
            d=r.input_dim,
            spectral_radius=r.spectral_radius,
            input_scale=r.input_scale,
            noise_location=self.noise.location,
            noise_covariance=self.noise.covariance(r.n, self._base_dir),
            seed=self.seed if seed is None else seed,
            topology=r.topology,
        )

    def build_basis(self) -> BasisSet:
        return enumerate_basis(self.basis.max_degree, self.basis.max_delay, hard_cap=self.basis.hard_cap)

    def digest(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _format_errors(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"  {location}: {item['msg']}")
    return "\n".join(lines)


def _validate(data: Dict, base_dir: Path, source: str) -> ExperimentConfig:
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration in {source}:\n{_format_errors(e)}")
    config._base_dir = base_dir
    return config


def load_config(path: Union[str, Path], seed: Optional[int] = None) -> ExperimentConfig:
    """
    Read and validate a TOML experiment file.

    Seed precedence: the `seed` argument, then IPC_LAB_SEED, then the file.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Could not read config {path}: {str(e)}")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Malformed TOML in {path}: {str(e)}")

    override = seed if seed is not None else LabSettings().SEED
    if override is not None:
        data["seed"] = override
    config = _validate(data, path.resolve().parent, str(path))
    logger.info(f"Loaded config {path} (seed {config.seed}, digest {config.digest()[:12]})")
    return config
