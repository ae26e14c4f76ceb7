"""Problem families: quadratic f, sparse GLM finite sums, exact minimizers.

Row norms of generated designs satisfy s/2 <= ||a_k||^2 <= 2s, so the
documented constant in max_k ||a_k||^2 <= c*s is c = 2.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import (
    DimensionMismatch,
    InconsistentConstants,
    NotQuadratic,
    SingularSystem,
)
from .numerics import SparseRow, SymmetricMatrix, Vector, sparse_dot
from .oracles import (
    CompositeObjective,
    FiniteSumTerm,
    OracleCounters,
    SmoothTerm,
    zero_sum,
)
from .reductions import LossKind, ScalarLoss, SmoothedLoss

ROW_NORM_CONSTANT = 2.0

Loss = Union[ScalarLoss, SmoothedLoss]


@dataclass(frozen=True)
class SparseDesign:
    rows: Tuple[SparseRow, ...]
    n: int
    s: int

    def __post_init__(self) -> None:
        for row in self.rows:
            row._check_range(self.n)

    @property
    def m(self) -> int:
        return len(self.rows)

    @property
    def nnz(self) -> int:
        return sum(row.nnz for row in self.rows)

    @property
    def max_squared_norm(self) -> float:
        return max(row.squared_norm for row in self.rows)

    def csr(self) -> scipy.sparse.csr_matrix:
        indptr = np.concatenate([[0], np.cumsum([row.nnz for row in self.rows])])
        indices = np.concatenate([row.indices for row in self.rows])
        data = np.concatenate([row.values for row in self.rows])
        return scipy.sparse.csr_matrix(
            (data, indices, indptr), shape=(self.m, self.n),
        )

    def scaled(self, factor: float) -> SparseDesign:
        return replace(self, rows=tuple(row.scaled(factor) for row in self.rows))


def gen_sparse_design(m: int, n: int, s: int, seed: int) -> SparseDesign:
    if m < 1 or n < 1 or not 1 <= s <= n:
        raise DimensionMismatch(f'need m >= 1 and 1 <= s <= n, got m={m} n={n} s={s}')
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(m):
        indices = np.sort(rng.choice(n, size=s, replace=False))
        values = rng.standard_normal(s)
        squared = float(np.dot(values, values))
        target = min(max(squared, s / ROW_NORM_CONSTANT), ROW_NORM_CONSTANT * s)
        if squared == 0.0:
            values = np.full(s, 1.0)
        else:
            values = values * np.sqrt(target / squared)
        rows.append(SparseRow(indices, values))
    return SparseDesign(tuple(rows), n, s)


@dataclass(frozen=True)
class GLMSpec:
    design: SparseDesign
    targets: Vector
    loss: Loss

    def __post_init__(self) -> None:
        targets = np.array(self.targets, dtype=np.float64).reshape(-1)
        if targets.shape != (self.design.m,):
            raise DimensionMismatch('one target per design row is required')
        if not self.loss.smooth:
            raise InconsistentConstants(
                f'{self.loss.kind.name} loss must be smoothed before use'
            )
        object.__setattr__(self, 'targets', targets)

    @property
    def lipschitz_grad(self) -> float:
        bound = self.loss.curvature * self.design.max_squared_norm
        if self.loss.margin_based:
            bound *= float(np.max(self.targets ** 2))
        return bound

    def rescaled(self, lipschitz_grad: float) -> GLMSpec:
        """Uniformly rescale rows so that L_g equals `lipschitz_grad`."""
        factor = np.sqrt(lipschitz_grad / self.lipschitz_grad)
        return replace(self, design=self.design.scaled(factor))

    def arguments(self, t: np.ndarray) -> np.ndarray:
        return self.targets * t if self.loss.margin_based else t - self.targets

    def chain(self) -> np.ndarray:
        return self.targets if self.loss.margin_based else np.ones_like(self.targets)

    def finite_sum(self) -> FiniteSumTerm:
        rows = self.design.rows
        n = self.design.n
        A = self.design.csr()
        loss = self.loss
        chain = self.chain()

        def component_value(k: int, x: Vector) -> float:
            t = sparse_dot(rows[k], x)
            return float(loss.value(_argument(self, k, t)))

        def component_gradient(k: int, x: Vector) -> Vector:
            t = sparse_dot(rows[k], x)
            slope = float(loss.derivative(_argument(self, k, t))) * chain[k]
            out = np.zeros(n)
            out[rows[k].indices] = slope * rows[k].values
            return out

        def batch_values(x: Vector) -> np.ndarray:
            return loss.value(self.arguments(A @ x))

        def batch_gradients(x: Vector) -> np.ndarray:
            slopes = loss.derivative(self.arguments(A @ x)) * chain
            return A.multiply(slopes[:, None]).toarray()

        return FiniteSumTerm(
            m=self.design.m,
            component_value=component_value,
            component_gradient=component_gradient,
            lipschitz_grad=self.lipschitz_grad,
            batch_values=batch_values,
            batch_gradients=batch_gradients,
        )


def _argument(glm: GLMSpec, k: int, t: float) -> float:
    b = glm.targets[k]
    return b * t if glm.loss.margin_based else t - b


@dataclass(frozen=True)
class QuadraticSpec:
    """f(x) = 1/2 <x, Cx> - <b, x>; the linear term is a test extension."""

    C: SymmetricMatrix
    b: Vector
    lambda_max: float
    lambda_min: float

    @classmethod
    def from_matrix(
            cls, C: SymmetricMatrix, b: Optional[Vector] = None,
    ) -> QuadraticSpec:
        spectrum = scipy.linalg.eigvalsh(C.entries)
        return cls(
            C=C,
            b=np.zeros(C.n) if b is None else np.asarray(b, dtype=np.float64),
            lambda_max=float(spectrum[-1]),
            lambda_min=max(0.0, float(spectrum[0])),
        )

    def __post_init__(self) -> None:
        if self.b.shape != (self.C.n,):
            raise DimensionMismatch('linear term must match the matrix dimension')
        if self.lambda_min < 0 or self.lambda_min > self.lambda_max:
            raise InconsistentConstants('invalid spectral bounds')

    @property
    def n(self) -> int:
        return self.C.n

    def with_linear_term(self, b: Vector) -> QuadraticSpec:
        return replace(self, b=np.asarray(b, dtype=np.float64))


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    Q, R = scipy.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def make_quadratic(
        n: int, lambda_max_target: float, mu_floor: float, seed: int,
) -> QuadraticSpec:
    if n < 1:
        raise DimensionMismatch('n must be >= 1')
    if not 0 <= mu_floor <= lambda_max_target:
        raise InconsistentConstants(
            f'need 0 <= mu_floor <= lambda_max_target, '
            f'got {mu_floor} and {lambda_max_target}'
        )
    rng = np.random.default_rng(seed)
    Q = random_orthogonal(n, rng)
    spectrum = rng.uniform(mu_floor, lambda_max_target, size=n)
    spectrum[0] = lambda_max_target
    if n > 1:
        spectrum[-1] = mu_floor
    C = (Q * spectrum) @ Q.T
    return QuadraticSpec(
        C=SymmetricMatrix((C + C.T) / 2.0, psd=True),
        b=np.zeros(n),
        lambda_max=lambda_max_target,
        lambda_min=float(spectrum.min()),
    )


@dataclass(frozen=True)
class ProblemParts:
    quadratic: QuadraticSpec
    glm: Optional[GLMSpec]
    mu_reg: float

    @property
    def all_quadratic(self) -> bool:
        return self.glm is None or self.glm.loss == ScalarLoss(LossKind.SQUARED)

    def with_ridge(self, mu_reg: float) -> ProblemParts:
        return replace(self, mu_reg=self.mu_reg + mu_reg)


def assemble_problem(
        q: QuadraticSpec, glm: Optional[GLMSpec], mu_reg: float = 0.0,
) -> CompositeObjective:
    if mu_reg < 0:
        raise InconsistentConstants('mu_reg must be non-negative')
    if glm is not None and glm.design.n != q.n:
        raise DimensionMismatch(
            f'quadratic has n={q.n}, design has n={glm.design.n}'
        )
    C, b = q.C.entries, q.b

    def value(x: Vector) -> float:
        Cx = C @ x
        return 0.5 * float(np.dot(x, Cx)) - float(np.dot(b, x)) \
            + 0.5 * mu_reg * float(np.dot(x, x))

    def gradient(x: Vector) -> Vector:
        return C @ x - b + mu_reg * x

    return CompositeObjective(
        f=SmoothTerm(value, gradient, q.lambda_max + mu_reg),
        g=zero_sum(q.n) if glm is None else glm.finite_sum(),
        mu=q.lambda_min + mu_reg,
        n=q.n,
        parts=ProblemParts(q, glm, mu_reg),
    )


def _normal_equations(obj: CompositeObjective) -> Tuple[np.ndarray, Vector]:
    parts = obj.parts
    if not isinstance(parts, ProblemParts) or not parts.all_quadratic:
        raise NotQuadratic('exact minimizer needs an all-quadratic objective')
    q = parts.quadratic
    H = q.C.entries + parts.mu_reg * np.eye(q.n)
    rhs = q.b.copy()
    if parts.glm is not None:
        A = parts.glm.design.csr()
        m = parts.glm.design.m
        H = H + (A.T @ A).toarray() / m
        rhs = rhs + A.T @ parts.glm.targets / m
    return H, rhs


def _solve_spd(H: np.ndarray, rhs: Vector, check_singular: bool) -> Vector:
    if check_singular:
        spectrum = scipy.linalg.eigvalsh(H)
        if spectrum[0] <= 1e-12 * max(1.0, spectrum[-1]):
            raise SingularSystem(
                'normal equations are singular; regularize the problem first'
            )
    try:
        factor = scipy.linalg.cho_factor(H)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystem(
            'normal equations are singular; regularize the problem first'
        ) from exc
    x = scipy.linalg.cho_solve(factor, rhs)
    # one step of iterative refinement
    return x + scipy.linalg.cho_solve(factor, rhs - H @ x)


def exact_minimizer(obj: CompositeObjective) -> Vector:
    H, rhs = _normal_equations(obj)
    return _solve_spd(H, rhs, check_singular=obj.mu <= 0)


def exact_proximal_point(
        obj: CompositeObjective, L: float, center: Vector,
) -> Vector:
    """argmin F(x) + L/2 ||x - center||^2 for all-quadratic objectives."""
    H, rhs = _normal_equations(obj)
    H = H + L * np.eye(obj.n)
    return _solve_spd(H, rhs + L * center, check_singular=obj.mu + L <= 0)


def optimal_value(obj: CompositeObjective) -> float:
    """F* for all-quadratic objectives, evaluated outside any run's counters."""
    x_star = exact_minimizer(obj)
    scratch = OracleCounters()
    return obj.f.value(x_star, scratch) + obj.g.value(x_star, scratch)


def gen_targets(
        design: SparseDesign, loss: Loss, seed: int,
        x_true: Optional[Vector] = None,
) -> Vector:
    rng = np.random.default_rng(seed)
    if loss.margin_based:
        return np.where(rng.standard_normal(design.m) >= 0, 1.0, -1.0)
    if x_true is None:
        return rng.standard_normal(design.m)
    return design.csr() @ x_true + 0.1 * rng.standard_normal(design.m)


def make_glm(
        m: int, n: int, s: int, loss: Loss, seed: int,
        targets: Optional[Sequence[float]] = None,
) -> GLMSpec:
    design = gen_sparse_design(m, n, s, seed)
    if targets is None:
        targets = gen_targets(design, loss, seed + 1)
    return GLMSpec(design, np.asarray(targets, dtype=np.float64), loss)
