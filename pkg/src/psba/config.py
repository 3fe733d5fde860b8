"""Experiment configuration: schema-validated YAML or JSON files.

Unknown keys are rejected everywhere so typos fail loudly before any work
starts. Model references either point at a serialized model file or describe
a seeded member of the built-in zoo inline.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError

from . import models as zoo
from .errors import ConfigError


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelRef(StrictModel):
    file: str | None = None
    make: Literal["affine", "two_layer_tanh", "radial", "lowfreq_tanh"] | None = None
    seed: int = 0
    input_shape: tuple[int, int, int] = (3, 16, 16)
    num_classes: int = 2
    hidden: int = 32
    lowfreq_k: int = 4

    def load(self, base_dir: Path) -> zoo.Classifier:
        if (self.file is None) == (self.make is None):
            raise ConfigError("model needs exactly one of 'file' or 'make'")
        if self.file is not None:
            path = base_dir / self.file
            try:
                return zoo.model_from_json(path.read_text())
            except FileNotFoundError as exc:
                raise ConfigError(f"model file not found: {path}") from exc
        builders = {
            "affine": lambda: zoo.make_affine(self.seed, self.input_shape, self.num_classes),
            "two_layer_tanh": lambda: zoo.make_two_layer_tanh(
                self.seed, self.input_shape, self.hidden, self.num_classes
            ),
            "radial": lambda: zoo.make_radial(self.seed, self.input_shape, self.num_classes),
            "lowfreq_tanh": lambda: zoo.make_lowfreq_tanh(
                self.seed, self.input_shape, self.lowfreq_k, self.hidden, self.num_classes
            ),
        }
        return builders[self.make]()


class ProjectionRef(StrictModel):
    kind: Literal["identity", "spatial", "freq_lowpass"] = "identity"
    side: int | None = None
    k: int | None = None


class AttackSection(StrictModel):
    mode: Literal["untargeted", "targeted"] = "untargeted"
    target_class: int | None = None
    budget: int = 2000
    num_samples: int = 100
    seed: int = 0
    theta: float | None = None
    success_mse: float | None = None


class InputsSection(StrictModel):
    target_seed: int = 0
    target_scale: float = 1.0


class OutputSection(StrictModel):
    dir: str = "out"


class AttackConfigFile(StrictModel):
    model: ModelRef
    attack: AttackSection = AttackSection()
    projection: ProjectionRef = ProjectionRef()
    inputs: InputsSection = InputsSection()
    output: OutputSection = OutputSection()
    oracle: str = "local"


class ScheduleSection(StrictModel):
    kind: Literal["spatial", "freq_lowpass"] = "spatial"
    scales: list[int]


class PairsSection(StrictModel):
    count: int = 10
    seed: int = 0
    scale: float = 1.0


class SearchSection(StrictModel):
    num_samples: int = 100
    num_steps: int = 10
    seed: int = 0


class ScaleSearchConfigFile(StrictModel):
    model: ModelRef
    schedule: ScheduleSection
    pairs: PairsSection = PairsSection()
    search: SearchSection = SearchSection()
    attack: AttackSection = AttackSection()
    output: OutputSection = OutputSection()


class ProfileRef(StrictModel):
    kind: Literal["quadratic", "exponential"]
    rate: float = 1.0
    degree: int = 2


class CurvesSection(StrictModel):
    n: int = 20
    beta_s: float = 0.5
    beta_f: float = 0.0
    profiles: list[ProfileRef] = [
        ProfileRef(kind="exponential", rate=1.0),
        ProfileRef(kind="quadratic", degree=2),
    ]
    mode: Literal["expectation", "concentration", "big_o"] = "expectation"
    num_samples: int = 100
    tail_p: float = 0.05
    calibration: float = 1.0


class BoundsConfigFile(StrictModel):
    curves: CurvesSection = CurvesSection()
    output: OutputSection = OutputSection()


class ServiceSection(StrictModel):
    host: str = "127.0.0.1"
    port: int = 8731
    budget: int | None = None
    delay_ms: float = 0.0  # fixed per-decision delay, emulates remote API latency
    stats_dump: str | None = None  # write per-session counts here on shutdown


class SpecSection(StrictModel):
    mode: Literal["untargeted", "targeted"] = "untargeted"
    label: int = 0


class ServeConfigFile(StrictModel):
    model: ModelRef
    spec: SpecSection = SpecSection()
    service: ServiceSection = ServiceSection()


def load_config(path: str | Path, schema: type[StrictModel]) -> StrictModel:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        if p.suffix == ".json":
            payload = json.loads(text)
        else:
            payload = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config {p} must be a mapping at top level")
    try:
        return schema.model_validate(payload)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
