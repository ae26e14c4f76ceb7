"""Two-oracle view of F(x) = f(x) + (1/m) sum_k g_k(x) with exact call counters.

Every gradient or value query goes through a method that takes an
`OracleCounters`; there is no uncounted path to the raw callables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional

import numpy as np

from .errors import DimensionMismatch, InconsistentConstants, IndexOutOfRange
from .numerics import Vector, check_finite

ValueFn = Callable[[Vector], float]
GradientFn = Callable[[Vector], Vector]
ComponentValueFn = Callable[[int, Vector], float]
ComponentGradientFn = Callable[[int, Vector], Vector]


@dataclass(frozen=True)
class CounterSnapshot:
    grad_f_calls: int = 0
    grad_gk_calls: int = 0
    f_evals: int = 0
    g_evals: int = 0
    levels: Mapping[str, CounterSnapshot] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {
            'grad_f_calls': self.grad_f_calls,
            'grad_gk_calls': self.grad_gk_calls,
            'f_evals': self.f_evals,
            'g_evals': self.g_evals,
            'levels': {
                name: level.as_dict() for name, level in self.levels.items()
            },
        }


@dataclass
class OracleCounters:
    """Per-run tallies; never share one instance between concurrent solves."""

    grad_f_calls: int = 0
    grad_gk_calls: int = 0
    f_evals: int = 0
    g_evals: int = 0
    _parent: Optional[OracleCounters] = field(
        default=None, repr=False, compare=False,
    )
    _levels: Dict[str, OracleCounters] = field(
        default_factory=dict, repr=False, compare=False,
    )

    def tick(
            self,
            grad_f: int = 0,
            grad_gk: int = 0,
            f: int = 0,
            g: int = 0,
    ) -> None:
        counters: Optional[OracleCounters] = self
        while counters is not None:
            counters.grad_f_calls += grad_f
            counters.grad_gk_calls += grad_gk
            counters.f_evals += f
            counters.g_evals += g
            counters = counters._parent

    def level(self, name: str) -> OracleCounters:
        if name not in self._levels:
            self._levels[name] = OracleCounters(_parent=self)
        return self._levels[name]

    def snapshot(self) -> CounterSnapshot:
        return CounterSnapshot(
            grad_f_calls=self.grad_f_calls,
            grad_gk_calls=self.grad_gk_calls,
            f_evals=self.f_evals,
            g_evals=self.g_evals,
            levels={
                name: level.snapshot() for name, level in self._levels.items()
            },
        )


@dataclass(frozen=True)
class SmoothTerm:
    value_fn: ValueFn
    gradient_fn: GradientFn
    lipschitz_grad: float

    def __post_init__(self) -> None:
        if self.lipschitz_grad < 0:
            raise InconsistentConstants('L_f must be non-negative')

    def gradient(self, x: Vector, ctr: OracleCounters) -> Vector:
        out = self.gradient_fn(x)
        ctr.tick(grad_f=1)
        check_finite(out, 'grad f')
        return out

    def value(self, x: Vector, ctr: OracleCounters) -> float:
        out = float(self.value_fn(x))
        ctr.tick(f=1)
        check_finite(np.array([out]), 'f')
        return out


@dataclass(frozen=True)
class FiniteSumTerm:
    m: int
    component_value: ComponentValueFn
    component_gradient: ComponentGradientFn
    lipschitz_grad: float
    # optional vectorized forms: values (m,) and gradients (m, n)
    batch_values: Optional[Callable[[Vector], np.ndarray]] = None
    batch_gradients: Optional[Callable[[Vector], np.ndarray]] = None

    def __post_init__(self) -> None:
        if self.m < 1:
            raise InconsistentConstants('finite sum needs m >= 1')
        if self.lipschitz_grad < 0:
            raise InconsistentConstants('L_g must be non-negative')

    def _check_index(self, k: int) -> None:
        if not 0 <= k < self.m:
            raise IndexOutOfRange(f'component {k} out of range [0, {self.m})')

    def gradient(self, k: int, x: Vector, ctr: OracleCounters) -> Vector:
        self._check_index(k)
        out = self.component_gradient(k, x)
        ctr.tick(grad_gk=1)
        check_finite(out, f'grad g_{k}')
        return out

    def gradient_table(self, x: Vector, ctr: OracleCounters) -> np.ndarray:
        if self.batch_gradients is not None:
            table = np.asarray(self.batch_gradients(x), dtype=np.float64)
        else:
            table = np.stack([
                self.component_gradient(k, x) for k in range(self.m)
            ])
        ctr.tick(grad_gk=self.m)
        check_finite(table.reshape(-1), 'grad g table')
        return table

    def full_gradient(self, x: Vector, ctr: OracleCounters) -> Vector:
        return self.gradient_table(x, ctr).mean(axis=0)

    def value(self, x: Vector, ctr: OracleCounters) -> float:
        if self.batch_values is not None:
            values = np.asarray(self.batch_values(x), dtype=np.float64)
        else:
            values = np.array([
                self.component_value(k, x) for k in range(self.m)
            ])
        ctr.tick(g=self.m)
        check_finite(values, 'g')
        return float(values.mean())


def zero_sum(n: int) -> FiniteSumTerm:
    return FiniteSumTerm(
        m=1,
        component_value=lambda k, x: 0.0,
        component_gradient=lambda k, x: np.zeros(n),
        lipschitz_grad=0.0,
    )


@dataclass(frozen=True)
class CompositeObjective:
    f: SmoothTerm
    g: FiniteSumTerm
    mu: float
    n: int
    # structural description used by ground-truth oracles (problems.ProblemParts)
    parts: Optional[Any] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DimensionMismatch('dimension must be >= 1')
        if self.mu < 0:
            raise InconsistentConstants('mu must be non-negative')
        if self.mu > self.L_f + self.L_g:
            raise InconsistentConstants(
                f'mu={self.mu} exceeds L_f + L_g={self.L_f + self.L_g}'
            )

    @property
    def L_f(self) -> float:
        return self.f.lipschitz_grad

    @property
    def L_g(self) -> float:
        return self.g.lipschitz_grad

    @property
    def m(self) -> int:
        return self.g.m

    @property
    def m_within_condition(self) -> bool:
        """m <= L_g / mu."""
        return self.mu > 0 and self.m * self.mu <= self.L_g

    @property
    def sliding_regime(self) -> bool:
        """m * L_f <= L_g."""
        return self.m * self.L_f <= self.L_g

    def require_strongly_convex(self) -> None:
        if self.mu <= 0:
            raise InconsistentConstants(
                'objective is not strongly convex (mu = 0); regularize it first'
            )

    def with_ridge(self, mu_reg: float) -> CompositeObjective:
        """Fold +mu_reg/2 ||x||^2 into f."""
        f = self.f
        ridge = SmoothTerm(
            value_fn=lambda x: f.value_fn(x) + 0.5 * mu_reg * float(np.dot(x, x)),
            gradient_fn=lambda x: f.gradient_fn(x) + mu_reg * x,
            lipschitz_grad=f.lipschitz_grad + mu_reg,
        )
        return CompositeObjective(
            f=ridge,
            g=self.g,
            mu=self.mu + mu_reg,
            n=self.n,
            parts=None if self.parts is None else self.parts.with_ridge(mu_reg),
        )

    def _check_dim(self, x: Vector) -> None:
        if x.shape != (self.n,):
            raise DimensionMismatch(f'expected shape ({self.n},), got {x.shape}')


def grad_f(obj: CompositeObjective, x: Vector, ctr: OracleCounters) -> Vector:
    obj._check_dim(x)
    return obj.f.gradient(x, ctr)


def grad_component(
        obj: CompositeObjective, k: int, x: Vector, ctr: OracleCounters,
) -> Vector:
    obj._check_dim(x)
    return obj.g.gradient(k, x, ctr)


def full_grad_g(obj: CompositeObjective, x: Vector, ctr: OracleCounters) -> Vector:
    obj._check_dim(x)
    return obj.g.full_gradient(x, ctr)


def grad_F(obj: CompositeObjective, x: Vector, ctr: OracleCounters) -> Vector:
    return grad_f(obj, x, ctr) + full_grad_g(obj, x, ctr)


def eval_F(obj: CompositeObjective, x: Vector, ctr: OracleCounters) -> float:
    obj._check_dim(x)
    return obj.f.value(x, ctr) + obj.g.value(x, ctr)
