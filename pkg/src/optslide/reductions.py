"""Scalar GLM losses, dual (Nesterov) smoothing and ridge regularization.

Each loss is a function of a scalar argument u. The GLM argument is the
residual u = t - b for SQUARED and ABS, and the margin u = b * t for
LOGISTIC and HINGE, where t = <a_k, x>.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
from scipy.special import expit

from .errors import InconsistentConstants
from .oracles import CompositeObjective


class LossKind(Enum):
    ABS = 'ABS'
    HINGE = 'HINGE'
    SQUARED = 'SQUARED'
    LOGISTIC = 'LOGISTIC'


_NONSMOOTH = (LossKind.ABS, LossKind.HINGE)
_MARGIN_BASED = (LossKind.HINGE, LossKind.LOGISTIC)

# conjugate domains; hinge(u) = max(0, 1 - u) has conjugate z on [-1, 0]
_CONJUGATE_DOMAIN = {
    LossKind.ABS: (-1.0, 1.0),
    LossKind.HINGE: (-1.0, 0.0),
    LossKind.SQUARED: (-np.inf, np.inf),
    LossKind.LOGISTIC: (-1.0, 0.0),
}


@dataclass(frozen=True)
class ScalarLoss:
    kind: LossKind

    @property
    def smooth(self) -> bool:
        return self.kind not in _NONSMOOTH

    @property
    def margin_based(self) -> bool:
        return self.kind in _MARGIN_BASED

    @property
    def conjugate_domain(self) -> Tuple[float, float]:
        return _CONJUGATE_DOMAIN[self.kind]

    @property
    def curvature(self) -> float:
        if self.kind == LossKind.SQUARED:
            return 1.0
        if self.kind == LossKind.LOGISTIC:
            return 0.25
        raise InconsistentConstants(f'{self.kind.name} has no curvature bound')

    def value(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if self.kind == LossKind.ABS:
            return np.abs(u)
        if self.kind == LossKind.HINGE:
            return np.maximum(0.0, 1.0 - u)
        if self.kind == LossKind.SQUARED:
            return 0.5 * u * u
        return np.logaddexp(0.0, -u)

    def derivative(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if self.kind == LossKind.SQUARED:
            return u
        if self.kind == LossKind.LOGISTIC:
            return -expit(-u)
        raise InconsistentConstants(f'{self.kind.name} is not differentiable')

    def conjugate(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.kind == LossKind.ABS:
            return np.zeros_like(z)
        if self.kind == LossKind.HINGE:
            return z
        if self.kind == LossKind.SQUARED:
            return 0.5 * z * z
        raise NotImplementedError(self.kind)


@dataclass(frozen=True)
class SmoothedLoss:
    base: ScalarLoss
    eta: float

    def __post_init__(self) -> None:
        if self.base.smooth:
            raise InconsistentConstants(f'{self.base.kind.name} is already smooth')
        if self.eta <= 0:
            raise InconsistentConstants('smoothing parameter eta must be positive')

    smooth = True

    @property
    def kind(self) -> LossKind:
        return self.base.kind

    @property
    def margin_based(self) -> bool:
        return self.base.margin_based

    @property
    def curvature(self) -> float:
        return 1.0 / self.eta

    @property
    def uniform_gap(self) -> float:
        return self.eta * _max_squared_dual(self.base) / 2.0

    def maximizer(self, u: np.ndarray) -> np.ndarray:
        """Dual point z*(u) attaining the smoothed max."""
        u = np.asarray(u, dtype=np.float64)
        lo, hi = self.base.conjugate_domain
        if self.kind == LossKind.ABS:
            return np.clip(u / self.eta, lo, hi)
        return np.clip((u - 1.0) / self.eta, lo, hi)

    def value(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        z = self.maximizer(u)
        return z * u - self.base.conjugate(z) - 0.5 * self.eta * z * z

    def derivative(self, u: np.ndarray) -> np.ndarray:
        return self.maximizer(u)


def _max_squared_dual(base: ScalarLoss) -> float:
    lo, hi = base.conjugate_domain
    return max(lo * lo, hi * hi)


def smooth_loss(base: ScalarLoss, eta: float) -> SmoothedLoss:
    return SmoothedLoss(base, eta)


def smoothing_accuracy(eps: float, base: ScalarLoss) -> float:
    """eta such that the smoothed loss is within eps/2 of the base loss."""
    if eps <= 0:
        raise ValueError('eps must be positive')
    return eps / _max_squared_dual(base)


def regularize(obj: CompositeObjective, eps: float, R: float) -> CompositeObjective:
    """Add the ridge mu/2 ||x||^2 with mu = eps / R^2.

    An eps/2-solution of the result is an eps-solution of `obj` whenever
    R bounds the norm of a minimizer of `obj`.
    """
    if eps <= 0 or R <= 0:
        raise ValueError('eps and R must be positive')
    return obj.with_ridge(eps / R ** 2)
