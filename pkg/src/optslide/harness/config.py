"""Experiment configuration schema.

`optslide schema` prints the JSON schema generated from `ExperimentConfig`;
configs are validated against it on load.
"""
from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigError


class Method(str, Enum):
    SLIDING = 'SLIDING'
    FGM_BASELINE = 'FGM_BASELINE'
    CATALYST_VR = 'CATALYST_VR'


LossName = Literal['squared', 'logistic', 'abs', 'hinge', 'none']
AxisName = Literal['m', 'n', 's', 'mu']


class ProblemSpec(BaseModel):
    """Everything needed to rebuild an instance bit for bit."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    n: int = Field(ge=1)
    m: int = Field(default=1, ge=1)
    s: int = Field(default=1, ge=1)
    seed: int = 0
    loss: LossName = 'squared'
    # smoothing parameter for abs/hinge; derived from eps when omitted
    eta: Optional[float] = Field(default=None, gt=0)
    lambda_max_target: Optional[float] = Field(default=None, gt=0)
    mu_floor: float = Field(default=0.0, ge=0)
    mu_reg: float = Field(default=0.0, ge=0)
    eps: Optional[float] = Field(default=None, gt=0)
    # bound on ||x*||; when set, a ridge (eps/2)/radius^2 is added
    radius: Optional[float] = Field(default=None, gt=0)
    linear_term: bool = False
    lipschitz_g: Optional[float] = Field(default=None, gt=0)
    lipschitz_ratio: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode='after')
    def check_shape(self) -> ProblemSpec:
        if self.s > self.n:
            raise ValueError(f's={self.s} exceeds n={self.n}')
        if self.lipschitz_g is not None and self.lipschitz_ratio is not None:
            raise ValueError('set at most one of lipschitz_g and lipschitz_ratio')
        if self.lambda_max_target is not None \
                and self.mu_floor > self.lambda_max_target:
            raise ValueError('mu_floor exceeds lambda_max_target')
        return self


class SolverSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    L: Union[float, Literal['auto']] = 'auto'
    warm_start: bool = True
    outer_max_iters: int = Field(default=1000, ge=1)
    inner_gd_max_iters: int = Field(default=200, ge=1)
    vr_max_epochs: int = Field(default=2000, ge=1)
    vr_tolerance_ratio: float = Field(default=0.1, gt=0)
    fgm_max_iters: int = Field(default=100_000, ge=1)


class ScalingAxis(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    name: AxisName
    values: List[float] = Field(min_length=1)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    problem: ProblemSpec
    methods: List[Method] = Field(min_length=1)
    eps: float = Field(gt=0)
    seeds: List[int] = Field(default=[0], min_length=1)
    output: Optional[str] = None
    axis: Optional[ScalingAxis] = None
    solver: SolverSettings = SolverSettings()
    record_wall_time: bool = True

    def with_seeds(self, seeds: Optional[List[int]]) -> ExperimentConfig:
        if not seeds:
            return self
        return self.model_copy(update={'seeds': list(seeds)})

    def with_axis(self, name: str, values: List[float]) -> ExperimentConfig:
        return self.model_validate({
            **self.model_dump(mode='json'),
            'axis': {'name': name, 'values': values},
        })


def describe(error: ValidationError) -> str:
    return '; '.join(
        f"{'.'.join(str(part) for part in e['loc']) or '<root>'}: {e['msg']}"
        for e in error.errors()
    )


def load_config(path: Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f'cannot read config {path}: {exc}') from exc
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f'invalid config {path}: {describe(exc)}') from exc
