import csv
import io
import json
import os
import tempfile
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, ContextManager, Protocol, Tuple, Type
from unittest import TestCase, skipUnless
from unittest.mock import patch

import numpy as np
import scipy.linalg
from loguru import logger
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import TypeAdapter, ValidationError

from optslide import (
    CatalystState,
    OracleCounters,
    SlidingConfig,
    SolverReport,
    StoppingRule,
    catalyst_outer,
    choose_L,
    composite_fgm,
    composite_gd,
    estimate_cost,
    plain_fgm_baseline,
    quadratic_prox,
    sliding_solve,
    varag_solve,
)
from optslide.base_solvers import (
    FiniteSumModel,
    ObjectiveModel,
    ProximalSubproblem,
    QuadraticAnchors,
    varag_epoch_lengths,
    varag_oracle_count,
)
from optslide.catalyst_sliding import (
    ProblemConstants,
    catalyst_vr_solve,
    next_alpha,
)
from optslide.errors import (
    ConfigError,
    DimensionMismatch,
    InconsistentConstants,
    IndexOutOfRange,
    NonFiniteValue,
    NotQuadratic,
    ResultsWriteError,
    SingularSystem,
    SolverDiverged,
)
from optslide.harness import (
    ExperimentConfig,
    ExperimentHandler,
    Method,
    ProblemSpec,
    ResultRow,
    build_problem,
    emit_results,
    fit_power_law,
    run_experiment,
    scaling_study,
    table1_comparison,
)
from optslide.harness.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from optslide.harness.commands import RunExperiment
from optslide.harness.experiments import problem_at, run_method, solve
from optslide.harness.results import parse_json, render_csv, render_json
from optslide.numerics import (
    SparseRow,
    SymmetricMatrix,
    dot,
    lambda_max,
    sparse_dot,
    symv,
)
from optslide.oracles import (
    CompositeObjective,
    FiniteSumTerm,
    SmoothTerm,
    eval_F,
    full_grad_g,
    grad_F,
    grad_component,
    grad_f,
)
from optslide.problems import (
    ROW_NORM_CONSTANT,
    GLMSpec,
    QuadraticSpec,
    SparseDesign,
    assemble_problem,
    exact_minimizer,
    exact_proximal_point,
    gen_sparse_design,
    make_glm,
    make_quadratic,
    optimal_value,
)
from optslide.reductions import (
    LossKind,
    ScalarLoss,
    SmoothedLoss,
    regularize,
    smooth_loss,
    smoothing_accuracy,
)

slow = skipUnless(
    os.environ.get('OPTSLIDE_SLOW') == '1',
    'acceptance experiment; set OPTSLIDE_SLOW=1',
)

SQUARED = ScalarLoss(LossKind.SQUARED)


def quadratic_problem(
        n: int = 8,
        m: int = 6,
        s: int = 3,
        lambda_max_target: float = 1.0,
        mu_floor: float = 0.1,
        lipschitz_g: float = 12.0,
        seed: int = 0,
) -> CompositeObjective:
    q = make_quadratic(n, lambda_max_target, mu_floor, seed)
    q = q.with_linear_term(np.random.default_rng(seed + 7).standard_normal(n))
    glm = make_glm(m, n, s, SQUARED, seed + 1).rescaled(lipschitz_g)
    return assemble_problem(q, glm)


@lru_cache
def small_problem() -> CompositeObjective:
    return quadratic_problem()


def scalar_quadratic(curvature: float, b: float = 0.0) -> CompositeObjective:
    q = QuadraticSpec.from_matrix(
        SymmetricMatrix(np.array([[curvature]]), psd=True), np.array([b]),
    )
    return assemble_problem(q, None)


def value_of(obj: CompositeObjective, x: np.ndarray) -> float:
    return eval_F(obj, x, OracleCounters())


def finite_difference(fn: Callable[[np.ndarray], float], x: np.ndarray,
                      h: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        out[i] = (fn(x + step) - fn(x - step)) / (2 * h)
    return out


def anchors_for(obj: CompositeObjective, L: float, seed: int) -> QuadraticAnchors:
    rng = np.random.default_rng(seed)
    xtilde = rng.standard_normal(obj.n)
    return QuadraticAnchors(
        shift=grad_f(obj, xtilde, OracleCounters()),
        Lf=obj.L_f,
        xtilde=xtilde,
        L=L,
        center=rng.standard_normal(obj.n),
    )


def anchored_minimizer(glm: GLMSpec, anchors: QuadraticAnchors) -> np.ndarray:
    A = glm.design.csr().toarray()
    m, n = A.shape
    H = A.T @ A / m + anchors.strong_convexity * np.eye(n)
    rhs = A.T @ glm.targets / m - anchors.shift \
        + anchors.Lf * anchors.xtilde + anchors.L * anchors.center
    return scipy.linalg.solve(H, rhs, assume_a='pos')


class SolverContract(Protocol):
    assertEqual: Callable[[Any, Any], None] = NotImplemented
    assertLessEqual: Callable[[Any, Any], None] = NotImplemented
    assertTrue: Callable[[Any], None] = NotImplemented
    assertRaises: Callable[[Type[Exception]], ContextManager] = NotImplemented

    def solve_with(self, stop: StoppingRule, ctr: OracleCounters) -> SolverReport:
        ...

    def objective(self, x: np.ndarray) -> float:
        ...

    def start(self) -> np.ndarray:
        ...

    def predicted_counts(self, budget: int) -> Tuple[int, int]:
        ...

    def tight_stop(self) -> StoppingRule:
        ...

    def test_fixed_budget_counts_are_exact(self):
        for budget in (1, 2, 5):
            ctr = OracleCounters()
            report = self.solve_with(StoppingRule.fixed(budget), ctr)
            self.assertEqual(report.iterations, budget)
            self.assertEqual(
                self.predicted_counts(budget),
                (ctr.grad_f_calls, ctr.grad_gk_calls),
            )

    def test_counters_in_report_match_counters(self):
        ctr = OracleCounters()
        report = self.solve_with(StoppingRule.fixed(3), ctr)
        self.assertEqual(report.counters.grad_f_calls, ctr.grad_f_calls)
        self.assertEqual(report.counters.grad_gk_calls, ctr.grad_gk_calls)

    def test_reported_objective_matches_recomputed(self):
        report = self.solve_with(self.tight_stop(), OracleCounters())
        recomputed = self.objective(report.x_out)
        self.assertLessEqual(
            abs(report.objective - recomputed), 1e-12 * max(1.0, abs(recomputed)),
        )

    def test_converges_and_improves_on_start(self):
        report = self.solve_with(self.tight_stop(), OracleCounters())
        self.assertTrue(report.converged)
        self.assertLessEqual(
            self.objective(report.x_out), self.objective(self.start()) + 1e-12,
        )

    def test_same_seed_is_bit_identical(self):
        first_ctr, second_ctr = OracleCounters(), OracleCounters()
        first = self.solve_with(self.tight_stop(), first_ctr)
        second = self.solve_with(self.tight_stop(), second_ctr)
        assert_array_equal(first.x_out, second.x_out)
        self.assertEqual(first_ctr.snapshot(), second_ctr.snapshot())

    def test_trace_is_finite(self):
        report = self.solve_with(self.tight_stop(), OracleCounters())
        self.assertTrue(all(np.isfinite(value) for _, value in report.trace))


class FGMBaselineTest(TestCase, SolverContract):
    def solve_with(self, stop, ctr):
        return plain_fgm_baseline(small_problem(), self.start(), stop, ctr)

    def objective(self, x):
        return value_of(small_problem(), x)

    def start(self):
        return np.zeros(small_problem().n)

    def predicted_counts(self, budget):
        return budget, small_problem().m * budget

    def tight_stop(self):
        return StoppingRule.func_gap(1e-10, optimal_value(small_problem()))

    def test_scalar_quadratic_minimizer(self):
        obj = scalar_quadratic(1.0)
        report = plain_fgm_baseline(
            obj, np.ones(1), StoppingRule.grad_norm(1e-8), OracleCounters(),
        )
        self.assertLessEqual(abs(report.x_out[0]), 1e-4)

    def test_isotropic_quadratic_in_few_iterations(self):
        q = make_quadratic(5, 2.0, 2.0, seed=3).with_linear_term(np.arange(5.0))
        obj = assemble_problem(q, None)
        report = plain_fgm_baseline(
            obj, np.zeros(5),
            StoppingRule.func_gap(1e-10, optimal_value(obj)), OracleCounters(),
        )
        self.assertTrue(report.converged)
        self.assertLessEqual(report.iterations, 5)

    def test_all_quadratic_gap_against_exact_minimizer(self):
        obj = quadratic_problem(n=30, m=10, s=5, seed=4)
        f_star = optimal_value(obj)
        report = plain_fgm_baseline(
            obj, np.zeros(30), StoppingRule.func_gap(1e-8, f_star), OracleCounters(),
        )
        self.assertLessEqual(value_of(obj, report.x_out) - f_star, 1e-8)

    def test_iteration_bound_at_condition_number_100(self):
        obj = quadratic_problem(mu_floor=0.2, lipschitz_g=19.0, seed=5)
        self.assertAlmostEqual((obj.L_f + obj.L_g) / obj.mu, 100.0)
        eps = 1e-8
        report = plain_fgm_baseline(
            obj, np.zeros(obj.n),
            StoppingRule.func_gap(eps, optimal_value(obj)), OracleCounters(),
        )
        self.assertTrue(report.converged)
        self.assertLessEqual(report.iterations, 20 * 10 * np.log(1 / eps))

    def test_divergence_detector(self):
        obj = scalar_quadratic(10.0)
        with self.assertRaises(SolverDiverged):
            composite_fgm(
                ObjectiveModel(obj), lambda point, step: point, 1.0, 0.5,
                np.ones(1), StoppingRule.grad_norm(1e-12), OracleCounters(),
            )

    def test_ill_conditioned_oscillation_is_not_divergence(self):
        obj = quadratic_problem(n=20, m=16, s=4, mu_floor=1e-2, lipschitz_g=1000.0)
        self.assertGreaterEqual((obj.L_f + obj.L_g) / obj.mu, 1e5)
        f_star = optimal_value(obj)
        report = plain_fgm_baseline(
            obj, np.zeros(obj.n),
            StoppingRule.func_gap(1e-6, f_star, max_iters=20_000), OracleCounters(),
        )
        self.assertTrue(report.converged)
        self.assertLessEqual(value_of(obj, report.x_out) - f_star, 1e-6)


class CompositeGDTest(TestCase, SolverContract):
    L = 1.0

    @property
    def subproblem(self) -> ProximalSubproblem:
        obj = small_problem()
        center = np.linspace(-1.0, 1.0, obj.n)
        return ProximalSubproblem(obj, self.L, center, np.zeros(obj.n))

    def inner(self, stop: StoppingRule):
        def solver(fs, anchors, x0, ctr):
            return varag_solve(fs, anchors, x0, stop, 11, ctr)
        return solver

    def solve_with(self, stop, ctr):
        inner_stop = StoppingRule.fixed(2) if stop.fixed_budget \
            else StoppingRule.grad_norm(1e-11)
        return composite_gd(self.subproblem, self.inner(inner_stop), stop, ctr)

    def objective(self, x):
        return self.subproblem.value(x, OracleCounters())

    def start(self):
        return self.subproblem.start

    def predicted_counts(self, budget):
        m = small_problem().m
        return budget, budget * varag_oracle_count(m, 2)

    def tight_stop(self):
        return StoppingRule.grad_norm(1e-9, max_iters=2000)

    def test_plain_gradient_descent_when_composite_vanishes(self):
        obj = scalar_quadratic(2.0, 4.0)
        subproblem = ProximalSubproblem(obj, 0.0, np.zeros(1), np.zeros(1))
        report = composite_gd(
            subproblem, self.inner(StoppingRule.grad_norm(1e-12)),
            StoppingRule.grad_norm(1e-9), OracleCounters(),
        )
        assert_allclose(report.x_out, [2.0], atol=1e-8)

    def test_matches_direct_proximal_point(self):
        obj = small_problem()
        subproblem = ProximalSubproblem(obj, obj.L_f, np.ones(obj.n), np.zeros(obj.n))
        report = composite_gd(
            subproblem, self.inner(StoppingRule.grad_norm(1e-11)),
            StoppingRule.grad_norm(1e-9, max_iters=2000), OracleCounters(),
        )
        exact = exact_proximal_point(obj, obj.L_f, subproblem.center)
        scratch = OracleCounters()
        gap = subproblem.value(report.x_out, scratch) - subproblem.value(exact, scratch)
        self.assertLessEqual(gap, 1e-6)


class VaragTest(TestCase, SolverContract):
    @property
    def anchors(self) -> QuadraticAnchors:
        return anchors_for(small_problem(), 1.0, seed=21)

    def solve_with(self, stop, ctr):
        return varag_solve(small_problem().g, self.anchors, self.start(), stop, 5, ctr)

    def objective(self, x):
        return small_problem().g.value(x, OracleCounters()) + self.anchors.value(x)

    def start(self):
        return np.zeros(small_problem().n)

    def predicted_counts(self, budget):
        return 0, varag_oracle_count(small_problem().m, budget)

    def tight_stop(self):
        return StoppingRule.grad_norm(1e-10)

    def test_epoch_schedule(self):
        self.assertEqual(varag_epoch_lengths(6, 5), [1, 2, 4, 4, 4])
        self.assertEqual(varag_oracle_count(6, 4), 35)

    def test_matches_direct_solve(self):
        obj = small_problem()
        report = self.solve_with(StoppingRule.grad_norm(1e-10), OracleCounters())
        exact = anchored_minimizer(obj.parts.glm, self.anchors)
        gap = self.objective(report.x_out) - self.objective(exact)
        self.assertLessEqual(gap, 1e-9)

    def test_single_component_matches_fgm(self):
        q = make_quadratic(5, 1.0, 0.1, seed=8)
        glm = make_glm(1, 5, 3, SQUARED, seed=9).rescaled(4.0)
        obj = assemble_problem(q, glm)
        anchors = anchors_for(obj, 0.5, seed=10)
        exact = anchored_minimizer(glm, anchors)
        vr = varag_solve(
            obj.g, anchors, np.zeros(5), StoppingRule.grad_norm(1e-11), 0,
            OracleCounters(),
        )
        fgm = composite_fgm(
            FiniteSumModel(obj.g), anchors.prox_operator(), obj.L_g, 0.0,
            np.zeros(5), StoppingRule.grad_norm(1e-11, max_iters=100_000),
            OracleCounters(), composite_value=anchors.value,
        )
        assert_allclose(vr.x_out, exact, atol=1e-8)
        assert_allclose(fgm.x_out, vr.x_out, atol=1e-8)

    def test_requires_strongly_convex_anchors(self):
        obj = small_problem()
        flat = QuadraticAnchors(np.zeros(obj.n), 0.0, np.zeros(obj.n), 0.0, np.zeros(obj.n))
        with self.assertRaises(InconsistentConstants):
            varag_solve(obj.g, flat, np.zeros(obj.n), StoppingRule.fixed(1), 0,
                        OracleCounters())


class SlidingTest(TestCase, SolverContract):
    eps = 1e-8

    def config(self, stop: StoppingRule = None) -> SlidingConfig:
        if stop is not None and stop.fixed_budget:
            return SlidingConfig(
                L=1.0, eps=self.eps, outer_stop=stop,
                inner_gd_budget=StoppingRule.fixed(2),
                vr_budget=StoppingRule.fixed(2),
            )
        return SlidingConfig(eps=self.eps, outer_stop=stop)

    def solve_with(self, stop, ctr):
        return sliding_solve(small_problem(), self.config(stop), ctr)

    def objective(self, x):
        return value_of(small_problem(), x)

    def start(self):
        return np.zeros(small_problem().n)

    def predicted_counts(self, budget):
        m = small_problem().m
        return (
            budget + 1 + budget * 2,
            (budget + 1) * m + budget * 2 * varag_oracle_count(m, 2),
        )

    def tight_stop(self):
        return None

    def test_reaches_certified_gap(self):
        obj = small_problem()
        report = sliding_solve(obj, self.config(), OracleCounters())
        self.assertTrue(report.converged)
        self.assertLessEqual(value_of(obj, report.x_out) - optimal_value(obj), self.eps)

    def test_counters_decompose_by_level(self):
        obj = small_problem()
        ctr = OracleCounters()
        report = sliding_solve(obj, self.config(), ctr)
        levels = report.counters.levels
        self.assertEqual(set(levels), {'outer', 'inner_gd', 'vr'})
        for name in ('grad_f_calls', 'grad_gk_calls', 'f_evals', 'g_evals'):
            self.assertEqual(
                getattr(report.counters, name),
                sum(getattr(level, name) for level in levels.values()),
            )
        self.assertEqual(levels['outer'].grad_f_calls, report.iterations + 1)
        self.assertEqual(levels['outer'].grad_gk_calls, (report.iterations + 1) * obj.m)
        self.assertEqual(levels['inner_gd'].grad_gk_calls, 0)
        self.assertEqual(levels['vr'].grad_f_calls, 0)

    def test_single_component(self):
        q = make_quadratic(6, 1.0, 0.1, seed=12)
        glm = make_glm(1, 6, 3, SQUARED, seed=13).rescaled(4.0)
        obj = assemble_problem(q, glm)
        report = sliding_solve(obj, SlidingConfig(eps=1e-8), OracleCounters())
        self.assertTrue(report.converged)
        self.assertLessEqual(value_of(obj, report.x_out) - optimal_value(obj), 1e-8)

    def test_report_json_has_levels(self):
        report = sliding_solve(small_problem(), self.config(), OracleCounters())
        document = json.loads(json.dumps(report.to_json()))
        self.assertEqual(set(document['levels']), {'outer', 'inner_gd', 'vr'})
        self.assertEqual(document['counters']['grad_f_calls'],
                         report.counters.grad_f_calls)

    def test_warm_start_off_still_converges(self):
        obj = small_problem()
        cfg = SlidingConfig(eps=self.eps, warm_start=False)
        report = sliding_solve(obj, cfg, OracleCounters())
        self.assertTrue(report.converged)

    def test_warns_outside_regime(self):
        obj = quadratic_problem(lipschitz_g=2.0)
        self.assertFalse(obj.sliding_regime)
        messages = []
        logger.enable('optslide')
        sink = logger.add(messages.append, level='WARNING')
        try:
            sliding_solve(obj, SlidingConfig(eps=1e-6), OracleCounters())
        finally:
            logger.remove(sink)
            logger.disable('optslide')
        self.assertTrue(any('regime' in message for message in messages))

    def test_rejects_L_outside_interval(self):
        obj = small_problem()
        with self.assertRaises(InconsistentConstants):
            sliding_solve(obj, SlidingConfig(L=obj.L_f * 2), OracleCounters())

    def test_rejects_non_strongly_convex(self):
        obj = assemble_problem(make_quadratic(3, 1.0, 0.0, seed=0), None)
        with self.assertRaises(InconsistentConstants):
            sliding_solve(obj, SlidingConfig(), OracleCounters())

    def test_config_from_json(self):
        cfg = TypeAdapter(SlidingConfig).validate_json(
            '{"L": "auto", "eps": 1e-4,'
            ' "outer_stop": {"kind": "FIXED_ITERS", "iters": 3, "max_iters": 3}}'
        )
        self.assertEqual(cfg.outer_stop, StoppingRule.fixed(3))
        with self.assertRaises(ValueError):
            SlidingConfig(eps=0.0)


class CatalystVRTest(TestCase, SolverContract):
    def solve_with(self, stop, ctr):
        if stop is not None and stop.fixed_budget:
            cfg = SlidingConfig(L=1.0, outer_stop=stop, vr_budget=StoppingRule.fixed(2))
        else:
            cfg = SlidingConfig(eps=1e-8)
        return catalyst_vr_solve(small_problem(), cfg, ctr)

    def objective(self, x):
        return value_of(small_problem(), x)

    def start(self):
        return np.zeros(small_problem().n)

    def predicted_counts(self, budget):
        m = small_problem().m
        steps = sum(varag_epoch_lengths(m, 2))
        return (
            budget + 1 + budget * (2 + steps),
            (budget + 1) * m + budget * varag_oracle_count(m, 2),
        )

    def tight_stop(self):
        return None


class CatalystOuterTest(TestCase):
    def exact_inner(self, obj: CompositeObjective, L: float):
        def inner(center, start, accuracy, ctr):
            return SolverReport(
                x_out=exact_proximal_point(obj, L, center),
                iterations=1,
                counters=ctr.snapshot(),
                trace=[(0, 0.0)],
                converged=True,
            )
        return inner

    def test_alpha_recursion_at_half(self):
        alpha = np.sqrt(0.5)
        self.assertAlmostEqual(next_alpha(alpha, 0.5), alpha, places=15)

    def test_alpha_recursion_solves_quadratic(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            alpha, q = rng.uniform(0.01, 1.0), rng.uniform(1e-4, 0.5)
            root = next_alpha(alpha, q)
            self.assertTrue(0 < root <= 1)
            self.assertAlmostEqual(
                root * root, (1 - root) * alpha * alpha + q * root, places=12,
            )

    def test_state_extrapolation(self):
        state = CatalystState.start(np.zeros(2), mu=1.0, L=1.0)
        moved = state.advance(np.ones(2))
        beta = state.alpha_k * (1 - state.alpha_k) / (state.alpha_k ** 2 + moved.alpha_k)
        assert_allclose(moved.y_k, np.ones(2) * (1 + beta))

    def test_exact_inner_reaches_gap(self):
        obj = small_problem()
        cfg = SlidingConfig(L=obj.L_f, eps=1e-8)
        report = catalyst_outer(obj, cfg, self.exact_inner(obj, obj.L_f), OracleCounters())
        self.assertTrue(report.converged)
        self.assertLessEqual(value_of(obj, report.x_out) - optimal_value(obj), 1e-8)

    def test_scalar_quadratic_outer_envelope(self):
        obj = scalar_quadratic(4.0, 3.0)
        eps = 1e-8
        cfg = SlidingConfig(L=obj.L_f, eps=eps)
        report = catalyst_outer(obj, cfg, self.exact_inner(obj, obj.L_f), OracleCounters())
        self.assertTrue(report.converged)
        envelope = 20 * np.sqrt(obj.L_f / obj.mu) * np.log(1 / eps) + 5
        self.assertLessEqual(report.iterations, envelope)


class CostModelTest(TestCase):
    def test_plug_in_at_L_f(self):
        spec = ProblemConstants(m=4, L_f=10.0, L_g=400.0, mu=0.01)
        estimate = estimate_cost(spec, 10.0)
        self.assertAlmostEqual(
            estimate.grad_f_est, np.sqrt(10.0 / 0.01) * 10.0 / 10.01,
        )
        self.assertEqual(estimate.L_used, 10.0)

    def test_degenerate_interval(self):
        spec = ProblemConstants(m=3, L_f=2.0, L_g=6.0, mu=2.0)
        self.assertEqual(estimate_cost(spec, 2.0).grad_f_est, 0.5)
        self.assertEqual(choose_L(spec), 2.0)

    def test_rejects_L_outside_interval(self):
        spec = ProblemConstants(m=3, L_f=2.0, L_g=6.0, mu=0.1)
        with self.assertRaises(InconsistentConstants):
            estimate_cost(spec, 3.0)
        with self.assertRaises(InconsistentConstants):
            estimate_cost(spec, 0.05)

    def test_linear_grid_argmin_at_L_f(self):
        spec = ProblemConstants(m=4, L_f=10.0, L_g=400.0, mu=1.0)
        grid = np.linspace(1.0, 10.0, 100)
        costs = [estimate_cost(spec, L).grad_gk_est for L in grid]
        self.assertEqual(int(np.argmin(costs)), 99)
        self.assertEqual(choose_L(spec), 10.0)

    def test_interior_minimizer_matches_fine_grid(self):
        spec = ProblemConstants(m=100, L_f=10.0, L_g=50.0, mu=0.01)
        fine = np.geomspace(spec.mu, spec.L_f, 10_000)
        best = fine[int(np.argmin([estimate_cost(spec, L).grad_gk_est for L in fine]))]
        step = np.log(spec.L_f / spec.mu) / 63
        self.assertLessEqual(abs(np.log(choose_L(spec)) - np.log(best)), step + 1e-12)

    def test_sliding_regime_minimizer_is_L_f(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            m = int(rng.integers(2, 500))
            L_f = float(rng.uniform(0.5, 5.0))
            spec = ProblemConstants(m=m, L_f=L_f, L_g=4 * m * L_f, mu=L_f * 1e-4)
            fine = np.geomspace(spec.mu, spec.L_f, 10_000)
            costs = [estimate_cost(spec, L).grad_gk_est for L in fine]
            step = np.log(spec.L_f / spec.mu) / 63
            self.assertLessEqual(
                np.log(spec.L_f) - np.log(fine[int(np.argmin(costs))]), step,
            )
            self.assertAlmostEqual(choose_L(spec), L_f)

    def test_choice_stays_in_interval(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            mu = float(rng.uniform(1e-4, 1.0))
            L_f = mu * float(rng.uniform(1.0, 1e4))
            spec = ProblemConstants(int(rng.integers(1, 1000)), L_f,
                                    float(rng.uniform(0.0, 1e4)), mu)
            L = choose_L(spec)
            self.assertTrue(mu <= L <= L_f)


class NumericsTest(TestCase):
    def test_dot(self):
        x = np.array([1.0, -2.0, 3.0])
        self.assertEqual(dot(x, np.zeros(3)), 0.0)
        self.assertEqual(dot(np.array([0.0, 1.0, 0.0]), np.array([5.0, 7.0, 9.0])), 7.0)
        rng = np.random.default_rng(0)
        u, v = rng.standard_normal(50), rng.standard_normal(50)
        expected = sum(a * b for a, b in zip(u, v))
        self.assertLessEqual(abs(dot(u, v) - expected), 1e-12 * max(1.0, abs(expected)))
        with self.assertRaises(DimensionMismatch):
            dot(u, np.zeros(3))

    def test_sparse_dot(self):
        x = np.random.default_rng(1).standard_normal(100)
        self.assertEqual(sparse_dot(SparseRow(np.array([], dtype=int), np.array([])), x), 0.0)
        values = np.random.default_rng(2).standard_normal(100)
        full = SparseRow(np.arange(100), values)
        self.assertAlmostEqual(sparse_dot(full, x), float(np.dot(values, x)), places=12)
        row = SparseRow(np.array([3, 17, 40, 41, 99]), values[:5])
        self.assertAlmostEqual(sparse_dot(row, x), float(np.dot(row.densify(100), x)),
                               places=12)
        with self.assertRaises(IndexOutOfRange):
            sparse_dot(row, np.zeros(50))

    def test_sparse_row_rejects_duplicates(self):
        with self.assertRaises(IndexOutOfRange):
            SparseRow(np.array([1, 1]), np.array([1.0, 2.0]))

    def test_sparse_row_copies_caller_arrays(self):
        values = np.array([1.0, 2.0])
        row = SparseRow(np.array([0, 1]), values)
        values[0] = 3.0
        self.assertEqual(row.values[0], 1.0)

    def test_symv(self):
        x = np.array([1.0, 1.0])
        assert_allclose(symv(SymmetricMatrix.identity(2), x), x)
        assert_allclose(symv(SymmetricMatrix(np.diag([2.0, 4.0])), x), [2.0, 4.0])
        rng = np.random.default_rng(3)
        M = rng.standard_normal((20, 20))
        C = SymmetricMatrix((M + M.T) / 2)
        v = rng.standard_normal(20)
        naive = [sum(C.entries[i, j] * v[j] for j in range(20)) for i in range(20)]
        assert_allclose(symv(C, v), naive, rtol=1e-12, atol=1e-12)
        w = rng.standard_normal(20)
        assert_allclose(symv(C, 2 * v - 3 * w), 2 * symv(C, v) - 3 * symv(C, w),
                        rtol=1e-10, atol=1e-10)
        with self.assertRaises(DimensionMismatch):
            symv(C, np.zeros(3))

    def test_symmetric_matrix_is_validated(self):
        with self.assertRaises(DimensionMismatch):
            SymmetricMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
        C = SymmetricMatrix(np.array([[1.0, 2.0], [2.0 + 1e-14, 1.0]]))
        assert_array_equal(C.entries, C.entries.T)

    def test_lambda_max(self):
        self.assertAlmostEqual(lambda_max(SymmetricMatrix.identity(4)).value, 1.0)
        estimate = lambda_max(SymmetricMatrix(np.diag([1.0, 2.0, 3.0])))
        self.assertTrue(estimate.converged)
        self.assertLessEqual(abs(estimate.value - 3.0), 1e-6 * 3.0)
        A = np.random.default_rng(4).standard_normal((20, 15))
        C = SymmetricMatrix(A.T @ A, psd=True)
        expected = scipy.linalg.eigvalsh(C.entries)[-1]
        self.assertLessEqual(
            abs(lambda_max(C, tol=1e-9).value - expected), 1e-6 * expected,
        )

    def test_lambda_max_reports_non_convergence(self):
        estimate = lambda_max(SymmetricMatrix(np.diag([1.0, 0.5])), tol=1e-12, max_iters=3)
        self.assertFalse(estimate.converged)
        self.assertEqual(estimate.iterations, 3)


class OraclesTest(TestCase):
    def test_grad_f_counts(self):
        obj = assemble_problem(QuadraticSpec.from_matrix(SymmetricMatrix.identity(2)), None)
        ctr = OracleCounters()
        assert_allclose(grad_f(obj, np.array([3.0, -1.0]), ctr), [3.0, -1.0])
        self.assertEqual(ctr.grad_f_calls, 1)
        assert_allclose(grad_f(obj, np.zeros(2), ctr), [0.0, 0.0])
        self.assertEqual(ctr.grad_f_calls, 2)

    def test_grad_f_rejects_non_finite(self):
        term = SmoothTerm(lambda x: 0.0, lambda x: np.array([0.0, np.nan]), 1.0)
        obj = CompositeObjective(term, FiniteSumTerm(1, lambda k, x: 0.0,
                                                     lambda k, x: np.zeros(2), 0.0),
                                 mu=0.0, n=2)
        with self.assertRaises(NonFiniteValue) as raised:
            grad_f(obj, np.zeros(2), OracleCounters())
        self.assertEqual(raised.exception.coordinate, 1)

    def test_component_gradient(self):
        design = SparseDesign((SparseRow(np.array([0]), np.array([1.0])),), n=3, s=1)
        obj = assemble_problem(
            QuadraticSpec.from_matrix(SymmetricMatrix.identity(3)),
            GLMSpec(design, np.array([0.0]), SQUARED),
        )
        ctr = OracleCounters()
        assert_allclose(grad_component(obj, 0, np.array([2.0, 0.0, 0.0]), ctr),
                        [2.0, 0.0, 0.0])
        assert_allclose(grad_component(obj, 0, np.array([0.0, 5.0, 1.0]), ctr),
                        np.zeros(3))
        self.assertEqual(ctr.grad_gk_calls, 2)
        with self.assertRaises(IndexOutOfRange):
            grad_component(obj, 1, np.zeros(3), ctr)

    def test_full_gradient(self):
        obj = small_problem()
        x = np.random.default_rng(0).standard_normal(obj.n)
        ctr = OracleCounters()
        full = full_grad_g(obj, x, ctr)
        self.assertEqual(ctr.grad_gk_calls, obj.m)
        loop = sum(grad_component(obj, k, x, OracleCounters()) for k in range(obj.m)) / obj.m
        assert_allclose(full, loop, atol=1e-14)
        single = make_glm(1, 5, 2, SQUARED, seed=1)
        one = assemble_problem(make_quadratic(5, 1.0, 0.1, 0), single)
        y = np.ones(5)
        assert_allclose(full_grad_g(one, y, OracleCounters()),
                        grad_component(one, 0, y, OracleCounters()))

    def test_full_gradient_vanishes_at_minimizer_of_g(self):
        glm = make_glm(12, 4, 4, SQUARED, seed=3)
        A = glm.design.csr().toarray()
        x_star = np.linalg.lstsq(A, glm.targets, rcond=None)[0]
        obj = assemble_problem(make_quadratic(4, 1.0, 0.1, 0), glm)
        self.assertLessEqual(np.linalg.norm(full_grad_g(obj, x_star, OracleCounters())),
                             1e-10)

    def test_eval_F(self):
        glm = make_glm(5, 4, 2, SQUARED, seed=2)
        obj = assemble_problem(make_quadratic(4, 1.0, 0.1, 0), glm)
        ctr = OracleCounters()
        self.assertAlmostEqual(eval_F(obj, np.zeros(4), ctr),
                               float(np.mean(0.5 * glm.targets ** 2)))
        self.assertEqual((ctr.f_evals, ctr.g_evals), (1, 5))
        row = glm.design.rows[0]
        twice = GLMSpec(SparseDesign((row, row), 4, 2), np.array([1.0, 1.0]), SQUARED)
        once = GLMSpec(SparseDesign((row,), 4, 2), np.array([1.0]), SQUARED)
        x = np.arange(4.0)
        q = make_quadratic(4, 1.0, 0.1, 0)
        self.assertAlmostEqual(value_of(assemble_problem(q, twice), x),
                               value_of(assemble_problem(q, once), x))

    def test_gradients_match_finite_differences(self):
        families = {
            'squared': SQUARED,
            'logistic': ScalarLoss(LossKind.LOGISTIC),
            'abs': smooth_loss(ScalarLoss(LossKind.ABS), 1.0),
            'hinge': smooth_loss(ScalarLoss(LossKind.HINGE), 1.0),
        }
        rng = np.random.default_rng(5)
        for name, loss in families.items():
            obj = assemble_problem(make_quadratic(6, 1.0, 0.1, 1),
                                   make_glm(10, 6, 3, loss, seed=4))
            for _ in range(20):
                x = rng.standard_normal(6)
                exact = grad_F(obj, x, OracleCounters())
                approx = finite_difference(lambda z: value_of(obj, z), x)
                self.assertLessEqual(
                    np.linalg.norm(exact - approx), 1e-5 * max(1.0, np.linalg.norm(exact)),
                    name,
                )

    def test_component_lipschitz_bound(self):
        rng = np.random.default_rng(6)
        for loss in (SQUARED, ScalarLoss(LossKind.LOGISTIC),
                     smooth_loss(ScalarLoss(LossKind.HINGE), 0.3)):
            obj = assemble_problem(make_quadratic(6, 1.0, 0.1, 1),
                                   make_glm(10, 6, 3, loss, seed=4))
            for _ in range(100):
                k = int(rng.integers(obj.m))
                x, y = rng.standard_normal(6), rng.standard_normal(6)
                gx = grad_component(obj, k, x, OracleCounters())
                gy = grad_component(obj, k, y, OracleCounters())
                self.assertLessEqual(np.linalg.norm(gx - gy),
                                     obj.L_g * np.linalg.norm(x - y) + 1e-12)

    def test_strong_convexity(self):
        obj = small_problem()
        rng = np.random.default_rng(7)
        for _ in range(50):
            x, y = rng.standard_normal(obj.n), rng.standard_normal(obj.n)
            lower = value_of(obj, x) + float(np.dot(grad_F(obj, x, OracleCounters()), y - x)) \
                + obj.mu / 2 * float(np.dot(y - x, y - x))
            self.assertGreaterEqual(value_of(obj, y), lower - 1e-8)

    def test_counter_levels_propagate(self):
        ctr = OracleCounters()
        ctr.level('outer').tick(grad_f=1, grad_gk=4)
        ctr.level('vr').tick(grad_gk=3)
        ctr.level('vr').level('epoch').tick(grad_gk=2)
        snapshot = ctr.snapshot()
        self.assertEqual((snapshot.grad_f_calls, snapshot.grad_gk_calls), (1, 9))
        self.assertEqual(snapshot.levels['vr'].grad_gk_calls, 5)
        self.assertEqual(snapshot.as_dict()['levels']['outer']['grad_gk_calls'], 4)

    def test_inconsistent_constants(self):
        term = SmoothTerm(lambda x: 0.0, lambda x: x, 1.0)
        with self.assertRaises(InconsistentConstants):
            CompositeObjective(term, FiniteSumTerm(1, lambda k, x: 0.0,
                                                   lambda k, x: x, 1.0), mu=3.0, n=2)

    def test_regime_flags(self):
        q = make_quadratic(5, 1.0, 0.01, seed=0)
        glm = make_glm(10, 5, 2, SQUARED, seed=1).rescaled(100.0)
        obj = assemble_problem(q, glm)
        self.assertAlmostEqual(obj.L_g, 100.0)
        self.assertTrue(obj.sliding_regime)
        self.assertTrue(obj.m_within_condition)


class ProblemsTest(TestCase):
    def test_design_generation(self):
        dense = gen_sparse_design(5, 4, 4, seed=0)
        self.assertTrue(all(row.nnz == 4 for row in dense.rows))
        design = gen_sparse_design(200, 100, 10, seed=1)
        self.assertEqual(design.nnz, 200 * 10)
        ratios = [row.squared_norm / 10 for row in design.rows]
        self.assertGreaterEqual(min(ratios), 1.0 / ROW_NORM_CONSTANT - 1e-12)
        self.assertLessEqual(max(ratios), ROW_NORM_CONSTANT + 1e-12)
        again = gen_sparse_design(200, 100, 10, seed=1)
        for first, second in zip(design.rows, again.rows):
            assert_array_equal(first.indices, second.indices)
            assert_array_equal(first.values, second.values)
        with self.assertRaises(DimensionMismatch):
            gen_sparse_design(3, 4, 5, seed=0)

    def test_make_quadratic(self):
        identity = make_quadratic(6, 1.0, 1.0, seed=0)
        assert_allclose(identity.C.entries, np.eye(6), atol=1e-12)
        q = make_quadratic(10, 5.0, 0.5, seed=1)
        self.assertLessEqual(abs(lambda_max(q.C, tol=1e-9).value - 5.0), 1e-6 * 5.0)
        singular = make_quadratic(8, 2.0, 0.0, seed=2)
        spectrum, vectors = scipy.linalg.eigh(singular.C.entries)
        self.assertLessEqual(np.linalg.norm(symv(singular.C, vectors[:, 0])), 1e-10)
        with self.assertRaises(InconsistentConstants):
            make_quadratic(4, 1.0, 2.0, seed=0)

    def test_assembled_constants(self):
        q = make_quadratic(5, 2.0, 0.5, seed=0)
        obj = assemble_problem(q, None, mu_reg=0.25)
        self.assertAlmostEqual(obj.L_f, 2.25)
        self.assertAlmostEqual(obj.mu, 0.75)
        self.assertEqual((obj.m, obj.L_g), (1, 0.0))
        with self.assertRaises(DimensionMismatch):
            assemble_problem(q, make_glm(3, 6, 2, SQUARED, seed=0))

    def test_identical_rows(self):
        row = SparseRow(np.array([0, 2]), np.array([1.0, -2.0]))
        glm = GLMSpec(SparseDesign((row,) * 4, 3, 2), np.full(4, 0.5), SQUARED)
        obj = assemble_problem(make_quadratic(3, 1.0, 0.1, 0), glm)
        x = np.array([0.3, -1.0, 2.0])
        assert_allclose(full_grad_g(obj, x, OracleCounters()),
                        grad_component(obj, 0, x, OracleCounters()))

    def test_exact_minimizer(self):
        identity = assemble_problem(QuadraticSpec.from_matrix(SymmetricMatrix.identity(3)),
                                    None)
        assert_allclose(exact_minimizer(identity), np.zeros(3))
        scalar = scalar_quadratic(2.0, 4.0)
        assert_allclose(exact_minimizer(scalar), [2.0])
        obj = quadratic_problem(n=30, m=40, s=6, seed=9)
        x_star = exact_minimizer(obj)
        residual = np.linalg.norm(grad_F(obj, x_star, OracleCounters()))
        scale = 1 + np.linalg.norm(grad_F(obj, np.zeros(30), OracleCounters()))
        self.assertLessEqual(residual, 1e-10 * scale)

    def test_exact_minimizer_is_global(self):
        obj = small_problem()
        best = value_of(obj, exact_minimizer(obj))
        rng = np.random.default_rng(10)
        for _ in range(1000):
            self.assertLessEqual(best, value_of(obj, rng.standard_normal(obj.n) * 3))

    def test_exact_minimizer_errors(self):
        logistic = assemble_problem(make_quadratic(4, 1.0, 0.1, 0),
                                    make_glm(5, 4, 2, ScalarLoss(LossKind.LOGISTIC), 0))
        with self.assertRaises(NotQuadratic):
            exact_minimizer(logistic)
        with self.assertRaises(SingularSystem):
            exact_minimizer(assemble_problem(make_quadratic(4, 1.0, 0.0, 0), None))

    def test_rescaled_hits_target(self):
        glm = make_glm(20, 10, 4, ScalarLoss(LossKind.LOGISTIC), seed=3).rescaled(7.5)
        self.assertAlmostEqual(glm.lipschitz_grad, 7.5)

    def test_nonsmooth_loss_rejected(self):
        design = gen_sparse_design(2, 3, 1, seed=0)
        with self.assertRaises(InconsistentConstants):
            GLMSpec(design, np.zeros(2), ScalarLoss(LossKind.ABS))


class ReductionsTest(TestCase):
    def test_huber_closed_form(self):
        huber = smooth_loss(ScalarLoss(LossKind.ABS), 0.1)
        self.assertEqual(float(huber.value(0.0)), 0.0)
        self.assertEqual(float(huber.derivative(0.0)), 0.0)
        self.assertAlmostEqual(float(huber.value(1.0)), 0.95)
        self.assertAlmostEqual(float(huber.value(0.05)), 0.05 ** 2 / 0.2)

    def brute_force(self, loss: SmoothedLoss, t: np.ndarray) -> np.ndarray:
        lo, hi = loss.base.conjugate_domain
        z = np.linspace(lo, hi, 100_001)
        penalty = loss.base.conjugate(z) + 0.5 * loss.eta * z * z
        return np.array([np.max(z * u - penalty) for u in t])

    def test_matches_brute_force_conjugate_maximization(self):
        t = np.linspace(-2.0, 2.0, 400)
        for kind in (LossKind.ABS, LossKind.HINGE):
            loss = smooth_loss(ScalarLoss(kind), 0.3)
            assert_allclose(loss.value(t), self.brute_force(loss, t), atol=1e-6)

    def test_uniform_gap_and_lipschitz_derivative(self):
        t = np.linspace(-3.0, 3.0, 10_000)
        for kind in (LossKind.ABS, LossKind.HINGE):
            base = ScalarLoss(kind)
            loss = smooth_loss(base, 0.2)
            gap = base.value(t) - loss.value(t)
            self.assertGreaterEqual(gap.min(), -1e-12)
            self.assertLessEqual(gap.max(), loss.uniform_gap + 1e-12)
            slopes = np.abs(np.diff(loss.derivative(t)) / np.diff(t))
            self.assertLessEqual(slopes.max(), 1 / 0.2 + 1e-8)

    def test_smoothing_accuracy(self):
        self.assertAlmostEqual(smoothing_accuracy(0.01, ScalarLoss(LossKind.ABS)), 0.01)
        self.assertAlmostEqual(smoothing_accuracy(0.01, ScalarLoss(LossKind.HINGE)), 0.01)
        with self.assertRaises(InconsistentConstants):
            smooth_loss(SQUARED, 0.1)
        with self.assertRaises(InconsistentConstants):
            SmoothedLoss(ScalarLoss(LossKind.ABS), 0.0)

    def test_smoothed_loss_rejects_smooth_base(self):
        for kind in (LossKind.SQUARED, LossKind.LOGISTIC):
            with self.assertRaises(InconsistentConstants):
                SmoothedLoss(ScalarLoss(kind), 0.1)

    def test_smoothed_glm_lipschitz(self):
        design = gen_sparse_design(10, 6, 3, seed=1)
        glm = GLMSpec(design, np.ones(10), smooth_loss(ScalarLoss(LossKind.ABS), 0.25))
        self.assertAlmostEqual(glm.lipschitz_grad, design.max_squared_norm / 0.25)

    def test_regularize(self):
        obj = assemble_problem(make_quadratic(3, 1.0, 0.0, seed=0), None)
        regularized = regularize(obj, 1e-2, 10.0)
        self.assertAlmostEqual(regularized.mu, 1e-4)
        self.assertAlmostEqual(regularized.L_f, obj.L_f + 1e-4)
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.standard_normal(3)
            self.assertGreater(value_of(regularized, x), value_of(obj, x))
        self.assertEqual(value_of(regularized, np.zeros(3)), value_of(obj, np.zeros(3)))
        with self.assertRaises(ValueError):
            regularize(obj, 0.0, 1.0)

    def test_regularized_scalar_minimizer(self):
        eps = 0.1
        obj = scalar_quadratic(1.0, 1.0)
        x = exact_minimizer(regularize(obj, eps, 2.0))
        self.assertLess(x[0], 1.0)
        self.assertLessEqual(value_of(obj, x) - value_of(obj, np.ones(1)), eps)

    def test_regularization_on_singular_quadratics(self):
        eps, side = 1e-2, np.linspace(-6.0, 6.0, 1001)
        X, Y = np.meshgrid(side, side)
        for seed in range(5):
            q = make_quadratic(2, 2.0, 0.0, seed=seed)
            x_true = np.random.default_rng(seed).uniform(-1.0, 1.0, 2)
            q = q.with_linear_term(q.C.entries @ x_true)
            obj = assemble_problem(q, None)
            radius = 2.0
            regularized = regularize(obj, eps, radius)
            report = plain_fgm_baseline(
                regularized, np.zeros(2),
                StoppingRule.func_gap(eps / 2, optimal_value(regularized)),
                OracleCounters(),
            )
            C, b = q.C.entries, q.b
            grid = 0.5 * (C[0, 0] * X * X + 2 * C[0, 1] * X * Y + C[1, 1] * Y * Y) \
                - b[0] * X - b[1] * Y
            self.assertLessEqual(np.linalg.norm(x_true), radius)
            self.assertLessEqual(value_of(obj, report.x_out) - grid.min(), eps)

    def test_smoothed_abs_glm_end_to_end(self):
        eps = 1e-2
        base = ScalarLoss(LossKind.ABS)
        loss = smooth_loss(base, smoothing_accuracy(eps / 2, base))
        q = make_quadratic(2, 0.1, 0.01, seed=1)
        glm = make_glm(5, 2, 2, loss, seed=2)
        obj = assemble_problem(q, glm)
        report = plain_fgm_baseline(
            obj, np.zeros(2),
            StoppingRule.grad_norm(np.sqrt(obj.mu * eps / 2), max_iters=200_000),
            OracleCounters(),
        )
        A = glm.design.csr().toarray()
        C = q.C.entries

        def original(x):
            return 0.5 * x @ C @ x + np.mean(np.abs(A @ x - glm.targets))

        side = np.linspace(-4.0, 4.0, 1001)
        X, Y = np.meshgrid(side, side)
        points = np.stack([X.ravel(), Y.ravel()], axis=1)
        quadratic = 0.5 * np.einsum('ij,jk,ik->i', points, C, points)
        losses = np.abs(points @ A.T - glm.targets).mean(axis=1)
        self.assertTrue(report.converged)
        self.assertLessEqual(original(report.x_out) - (quadratic + losses).min(), eps)


class StoppingRuleTest(TestCase):
    def test_validation(self):
        with self.assertRaises(ValueError):
            StoppingRule.fixed(0)
        with self.assertRaises(ValueError):
            StoppingRule(kind='FUNC_GAP', tol=1e-3)
        with self.assertRaises(ValueError):
            StoppingRule.grad_norm(1e-3, max_iters=0)
        with self.assertRaises(ValueError):
            StoppingRule.grad_norm(0.0)

    def test_quadratic_prox(self):
        a = np.array([1.0, -2.0, 0.5])
        assert_allclose(quadratic_prox(np.zeros(3), 0.7, a, 2.0, a, 3.0, a), a)
        v = np.array([0.5, 1.0, -1.0])
        assert_allclose(quadratic_prox(v, 0.5, a, 0.0, a, 0.0, a), a - 0.5 * v)
        with self.assertRaises(InconsistentConstants):
            quadratic_prox(v, 0.0, a, 1.0, a, 1.0, a)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            v, xbar, xtilde, xk = rng.standard_normal((4, 10))
            gamma, Lf, L = rng.uniform(0.1, 10.0), rng.uniform(0, 10), rng.uniform(0, 10)
            x = quadratic_prox(v, gamma, xbar, Lf, xtilde, L, xk)
            residual = v + (x - xbar) / gamma + Lf * (x - xtilde) + L * (x - xk)
            self.assertLessEqual(np.linalg.norm(residual), 1e-12)

    def test_report_trace_is_downsampled(self):
        report = SolverReport(
            x_out=np.zeros(2), iterations=4999, counters=OracleCounters().snapshot(),
            trace=[(k, float(k)) for k in range(5000)], converged=False,
        )
        trace = report.to_json()['trace']
        self.assertLessEqual(len(trace), 1000)
        self.assertEqual(trace[0], [0, 0.0])
        self.assertEqual(trace[-1], [4999, 4999.0])


def harness_config(**changes) -> ExperimentConfig:
    document = {
        'problem': {'n': 6, 'm': 4, 's': 2, 'mu_floor': 0.1,
                    'lipschitz_g': 8.0, 'linear_term': True},
        'methods': ['SLIDING', 'FGM_BASELINE'],
        'eps': 1e-6,
        'seeds': [0, 1, 2],
        'record_wall_time': False,
    }
    document.update(changes)
    return ExperimentConfig.model_validate(document)


def result_row(**changes) -> ResultRow:
    fields = dict(
        method='SLIDING', n=10, m=20, s=3, eps=1e-6, L_used=1.0,
        grad_f_calls=12, grad_gk_calls=345, wall_time_s=0.125,
        final_gap=3.0000000000000004e-07, converged=True, seed=0,
    )
    fields.update(changes)
    return ResultRow(**fields)


class HarnessTest(TestCase):
    def test_problem_spec_validation(self):
        with self.assertRaises(ValidationError):
            ProblemSpec(n=3, s=4)
        with self.assertRaises(ValidationError):
            ExperimentConfig.model_validate({'problem': {'n': 3}, 'methods': [], 'eps': 1.0})
        with self.assertRaises(ValidationError):
            ExperimentConfig.model_validate(
                {'problem': {'n': 3}, 'methods': ['SLIDING'], 'eps': 0.0},
            )

    def test_run_is_cartesian_and_sorted(self):
        rows = run_experiment(harness_config())
        self.assertEqual(len(rows), 6)
        self.assertEqual(
            [(row.method, row.seed) for row in rows],
            sorted((row.method, row.seed) for row in rows),
        )

    def test_run_is_deterministic(self):
        cfg = harness_config()
        self.assertEqual(render_csv(run_experiment(cfg)), render_csv(run_experiment(cfg)))

    def test_quadratic_runs_reach_eps(self):
        for row in run_experiment(harness_config()):
            self.assertTrue(row.converged)
            self.assertLessEqual(row.final_gap, 1e-6)
            self.assertGreaterEqual(row.final_gap, -1e-12)

    def test_row_counters_are_level_sums(self):
        cfg = harness_config()
        instance = build_problem(cfg.problem, cfg.eps)
        for method in (Method.SLIDING, Method.CATALYST_VR):
            report, _ = solve(instance, method, cfg.eps, 0, cfg.solver)
            levels = report.counters.levels.values()
            self.assertEqual(report.counters.grad_f_calls,
                             sum(level.grad_f_calls for level in levels))
            self.assertEqual(report.counters.grad_gk_calls,
                             sum(level.grad_gk_calls for level in levels))

    def test_handler_dispatch(self):
        outcome = ExperimentHandler()(RunExperiment(harness_config(seeds=[4])))
        self.assertEqual(len(outcome.rows), 2)
        with self.assertRaises(NotImplementedError):
            ExperimentHandler()(harness_config())

    def test_aborted_solve_becomes_unconverged_row(self):
        cfg = harness_config(methods=['FGM_BASELINE'], seeds=[0])
        instance = build_problem(cfg.problem, cfg.eps)

        def diverging(obj, x0, stop, ctr):
            grad_F(obj, x0, ctr)
            raise SolverDiverged('objective above its best for 50 iterations')

        with patch('optslide.harness.experiments.plain_fgm_baseline', diverging):
            row = run_method(instance, Method.FGM_BASELINE, cfg, 0)
        self.assertFalse(row.converged)
        self.assertEqual((row.grad_f_calls, row.grad_gk_calls), (1, instance.objective.m))
        self.assertGreater(row.final_gap, 0.0)

    def test_size_axis_needs_integers(self):
        spec = harness_config().problem
        self.assertEqual(problem_at(spec, 'm', 8.0, 0).m, 8)
        with self.assertRaises(ConfigError):
            problem_at(spec, 'm', 64.5, 0)
        with self.assertRaises(ConfigError):
            scaling_study(harness_config(seeds=[0]), 'n', [4, 5.5, 6])

    def test_power_law_fit(self):
        m = np.array([64.0, 256.0, 1024.0])
        self.assertAlmostEqual(fit_power_law(m, 3.0 * np.sqrt(m)).slope, 0.5, places=12)
        self.assertAlmostEqual(fit_power_law(m, np.full(3, 7.0)).slope, 0.0, places=12)
        with self.assertRaises(ConfigError):
            fit_power_law(m[:2], m[:2])

    def test_scaling_study_summary(self):
        cfg = harness_config(methods=['SLIDING'], seeds=[0], eps=1e-4)
        outcome = scaling_study(cfg, 'm', [2, 4, 8])
        self.assertEqual([row.m for row in outcome.rows], [2, 4, 8])
        fit = outcome.summary['methods']['SLIDING']['grad_gk']
        self.assertTrue(np.isfinite(fit['slope']))
        with self.assertRaises(ConfigError):
            scaling_study(cfg, 'm', [2, 4])

    def test_table1_degenerate_regime(self):
        cfg = harness_config(
            problem={'n': 5, 'm': 4, 's': 1, 'loss': 'abs'}, eps=0.1, seeds=[0],
        )
        outcome = table1_comparison(cfg)
        self.assertIn(outcome.summary['winner'], ('SLIDING', 'FGM_BASELINE'))
        self.assertEqual({row.method for row in outcome.rows}, {'SLIDING', 'FGM_BASELINE'})
        for cost in outcome.summary['weighted_cost'].values():
            self.assertGreater(cost, 0)
        fgm = next(row for row in outcome.rows if row.method == 'FGM_BASELINE')
        self.assertEqual(fgm.grad_gk_calls, fgm.m * fgm.grad_f_calls)

    def test_csv_emission(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'rows.csv'
            row = result_row()
            emit_results([row], 'csv', path)
            text = path.read_bytes().decode()
        self.assertNotIn('\r', text)
        lines = text.splitlines()
        self.assertEqual(len(lines), 2)
        self.assertEqual(
            lines[0],
            'method,n,m,s,eps,L_used,grad_f_calls,grad_gk_calls,'
            'wall_time_s,final_gap,converged,seed',
        )
        parsed = next(csv.DictReader(io.StringIO(text)))
        self.assertEqual(float(parsed['final_gap']), row.final_gap)
        self.assertEqual(float(parsed['eps']), row.eps)
        self.assertEqual(int(parsed['grad_gk_calls']), row.grad_gk_calls)

    def test_csv_quotes_fields(self):
        text = render_csv([result_row(method='A,B')])
        self.assertIn('"A,B"', text)

    def test_json_round_trip(self):
        text = render_json([result_row(), result_row(seed=1, converged=False)])
        self.assertEqual(render_json(parse_json(text)), text)

    def test_unwritable_path(self):
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(ResultsWriteError):
                emit_results([result_row()], 'json', Path(directory) / 'no' / 'rows.json')


class CommandLineTest(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)

    def tearDown(self):
        logger.disable('optslide')
        self.directory.cleanup()

    def write_config(self, cfg: ExperimentConfig) -> Path:
        path = self.root / 'config.json'
        path.write_text(cfg.model_dump_json())
        return path

    def test_run(self):
        config = self.write_config(harness_config(seeds=[0]))
        out = self.root / 'rows.json'
        code = main(['run', '--config', str(config), '--out', str(out),
                     '--format', 'json', '--seed', '3'])
        self.assertEqual(code, EXIT_OK)
        rows = parse_json(out.read_text())
        self.assertEqual({row.seed for row in rows}, {3})

    def test_config_errors(self):
        bad = self.root / 'bad.json'
        bad.write_text(json.dumps({'problem': {'n': 0}, 'methods': [], 'eps': -1}))
        out = str(self.root / 'rows.csv')
        self.assertEqual(main(['run', '--config', str(bad), '--out', out]), EXIT_CONFIG)
        missing = str(self.root / 'missing.json')
        self.assertEqual(main(['run', '--config', missing, '--out', out]), EXIT_CONFIG)

    def test_io_error(self):
        config = self.write_config(harness_config(seeds=[0], methods=['FGM_BASELINE']))
        out = self.root / 'absent' / 'rows.csv'
        self.assertEqual(main(['run', '--config', str(config), '--out', str(out)]), EXIT_IO)

    def test_plot_and_schema(self):
        results = self.root / 'rows.json'
        results.write_text(render_json([result_row(), result_row(method='FGM_BASELINE')]))
        plots = self.root / 'plots'
        self.assertEqual(
            main(['plot', '--results', str(results), '--out', str(plots)]), EXIT_OK,
        )
        self.assertEqual(
            sorted(path.name for path in plots.iterdir()),
            ['fgm_baseline.dat', 'sliding.dat'],
        )
        schema = self.root / 'schema.json'
        self.assertEqual(main(['schema', '--out', str(schema)]), EXIT_OK)
        self.assertIn('problem', json.loads(schema.read_text())['properties'])

    def test_scale(self):
        config = self.write_config(
            harness_config(methods=['SLIDING'], seeds=[0], eps=1e-4),
        )
        out = self.root / 'scale.csv'
        code = main(['scale', '--config', str(config), '--out', str(out),
                     '--axis', 'm', '--values', '2,4,8'])
        self.assertEqual(code, EXIT_OK)
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        self.assertEqual([int(row['m']) for row in rows], [2, 4, 8])
        summary = json.loads((self.root / 'scale.csv.summary.json').read_text())
        self.assertEqual(summary['axis'], 'm')
        self.assertIn('slope', summary['methods']['SLIDING']['grad_gk'])
        code = main(['scale', '--config', str(config), '--out', str(out),
                     '--axis', 'm', '--values', '2,4.5,8'])
        self.assertEqual(code, EXIT_CONFIG)

    def test_table1(self):
        config = self.write_config(harness_config(
            problem={'n': 5, 'm': 4, 's': 1, 'loss': 'abs'}, eps=0.1, seeds=[0],
        ))
        out = self.root / 'table1.json'
        code = main(['table1', '--config', str(config), '--out', str(out),
                     '--format', 'json'])
        self.assertEqual(code, EXIT_OK)
        rows = parse_json(out.read_text())
        self.assertEqual([row.method for row in rows], ['FGM_BASELINE', 'SLIDING'])
        summary = json.loads((self.root / 'table1.json.summary.json').read_text())
        self.assertIn(summary['winner'], ('SLIDING', 'FGM_BASELINE'))

    def test_unconverged_run_is_data(self):
        config = self.write_config(harness_config(
            methods=['FGM_BASELINE'], seeds=[0], solver={'fgm_max_iters': 1},
        ))
        out = self.root / 'rows.json'
        code = main(['run', '--config', str(config), '--out', str(out),
                     '--format', 'json'])
        self.assertEqual(code, EXIT_OK)
        [row] = parse_json(out.read_text())
        self.assertFalse(row.converged)
        self.assertEqual(row.grad_f_calls, 1)

    def test_aborted_run_is_data(self):
        config = self.write_config(harness_config(methods=['FGM_BASELINE'], seeds=[0]))
        out = self.root / 'rows.json'

        def diverging(obj, x0, stop, ctr):
            raise SolverDiverged('objective above its best for 50 iterations')

        with patch('optslide.harness.experiments.plain_fgm_baseline', diverging):
            code = main(['run', '--config', str(config), '--out', str(out),
                         '--format', 'json'])
        self.assertEqual(code, EXIT_OK)
        [row] = parse_json(out.read_text())
        self.assertFalse(row.converged)
        self.assertEqual(row.grad_f_calls, 0)


class AcceptanceTest(TestCase):
    @slow
    def test_random_quadratic_instances_reach_ground_truth(self):
        rng = np.random.default_rng(100)
        for seed in range(20):
            n = int(rng.integers(10, 51))
            m = int(rng.integers(4, 129))
            obj = quadratic_problem(
                n=n, m=m, s=min(n, 5), mu_floor=1e-2,
                lipschitz_g=2.0 * m, seed=seed,
            )
            report = sliding_solve(obj, SlidingConfig(eps=1e-6, seed=seed),
                                   OracleCounters())
            self.assertLessEqual(value_of(obj, report.x_out) - optimal_value(obj), 1e-6)

    @slow
    def test_sliding_regime_example(self):
        obj = quadratic_problem(n=40, m=32, s=5, mu_floor=1e-3, lipschitz_g=64.0)
        report = sliding_solve(obj, SlidingConfig(eps=1e-6), OracleCounters())
        self.assertLessEqual(value_of(obj, report.x_out) - optimal_value(obj), 1e-6)

    @slow
    def test_sliding_saves_grad_f_calls(self):
        obj = quadratic_problem(n=20, m=16, s=4, mu_floor=1e-2, lipschitz_g=1000.0)
        f_star = optimal_value(obj)
        sliding = OracleCounters()
        report = sliding_solve(obj, SlidingConfig(eps=1e-6), sliding)
        baseline = OracleCounters()
        plain_fgm_baseline(
            obj, np.zeros(obj.n),
            StoppingRule.func_gap(value_of(obj, report.x_out) - f_star, f_star,
                                  max_iters=1_000_000),
            baseline,
        )
        self.assertLessEqual(sliding.grad_f_calls, baseline.grad_f_calls)

    @slow
    def test_scaling_in_m(self):
        cfg = ExperimentConfig.model_validate({
            'problem': {'n': 20, 's': 4, 'mu_floor': 1e-3,
                        'lipschitz_g': float(2 ** 18), 'linear_term': True},
            'methods': ['SLIDING'], 'eps': 1e-6, 'seeds': [0, 1, 2],
            'record_wall_time': False,
        })
        summary = scaling_study(cfg, 'm', [64, 256, 1024]).summary['methods']['SLIDING']
        self.assertTrue(0.35 <= summary['grad_gk']['slope'] <= 0.8)
        self.assertTrue(-0.15 <= summary['grad_f']['slope'] <= 0.25)

    @slow
    def test_scaling_in_mu(self):
        cfg = ExperimentConfig.model_validate({
            'problem': {'n': 20, 'm': 32, 's': 4, 'lipschitz_g': 128.0,
                        'linear_term': True},
            'methods': ['SLIDING'], 'eps': 1e-6, 'seeds': [0, 1, 2],
            'record_wall_time': False,
        })
        summary = scaling_study(cfg, 'mu', [1e-2, 1e-3, 1e-4]).summary['methods']['SLIDING']
        self.assertTrue(0.35 <= summary['grad_f']['slope'] <= 0.8)

    @slow
    def test_table1_ordering(self):
        cfg = ExperimentConfig.model_validate({
            'problem': {'n': 150, 'm': 600, 's': 30, 'loss': 'abs'},
            'methods': ['SLIDING', 'FGM_BASELINE'], 'eps': 1e-2, 'seeds': [0],
            'record_wall_time': False,
        })
        summary = table1_comparison(cfg).summary
        self.assertEqual(summary['winner'], 'SLIDING')
